"""Parity between the numba kernels and their numpy twins, plus
per-backend determinism."""

import numpy as np
import pytest

from pyrafuse.kernels import numpy_impl

numba_impl = pytest.importorskip("pyrafuse.kernels.numba_impl")

RNG = np.random.default_rng(42)
DTYPES = [np.float32, np.float64]


def _tol(dtype):
    return 1e-5 if dtype == np.float32 else 1e-12


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_parity(dtype):
    x = (RNG.standard_normal((64, 17)) * 3).astype(dtype)
    a = numpy_impl.softmax_fwd(x)
    b = numba_impl.softmax_fwd(x)
    np.testing.assert_allclose(a, b, atol=_tol(dtype))
    gy = RNG.standard_normal((64, 17)).astype(dtype)
    np.testing.assert_allclose(numpy_impl.softmax_bwd(a, gy),
                               numba_impl.softmax_bwd(a, gy), atol=_tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_layernorm_parity(dtype):
    x = RNG.standard_normal((40, 24)).astype(dtype)
    gain = RNG.standard_normal(24).astype(dtype)
    bias = RNG.standard_normal(24).astype(dtype)
    ya, xa, ra = numpy_impl.layernorm_fwd(x, gain, bias, 1e-5)
    yb, xb, rb = numba_impl.layernorm_fwd(x, gain, bias, 1e-5)
    np.testing.assert_allclose(ya, yb, atol=_tol(dtype) * 10)
    np.testing.assert_allclose(ra, rb, atol=_tol(dtype) * 10)
    gy = RNG.standard_normal((40, 24)).astype(dtype)
    ga = numpy_impl.layernorm_bwd(gy, xa, ra, gain)
    gb = numba_impl.layernorm_bwd(gy, xb, rb, gain)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, atol=_tol(dtype) * 100)


@pytest.mark.parametrize("dtype", DTYPES)
def test_gelu_parity(dtype):
    x = (RNG.standard_normal(512) * 2).astype(dtype)
    np.testing.assert_allclose(numpy_impl.gelu_fwd(x), numba_impl.gelu_fwd(x),
                               atol=_tol(dtype))
    gy = RNG.standard_normal(512).astype(dtype)
    np.testing.assert_allclose(numpy_impl.gelu_bwd(x, gy), numba_impl.gelu_bwd(x, gy),
                               atol=_tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_adam_parity(dtype):
    p0 = RNG.standard_normal(300).astype(dtype)
    g = RNG.standard_normal(300).astype(dtype)
    states = []
    for impl in (numpy_impl, numba_impl):
        p = p0.copy()
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        for t in range(1, 6):
            impl.adam_update(p, g, m, v, t, 1e-3, 0.9, 0.999, 1e-8)
        states.append((p, m, v))
    for u, v in zip(states[0], states[1]):
        np.testing.assert_allclose(u, v, atol=_tol(dtype) * 10)


@pytest.mark.parametrize("impl", [numpy_impl, numba_impl],
                         ids=["numpy", "numba"])
def test_kernels_deterministic_per_backend(impl):
    x = RNG.standard_normal((32, 16)).astype(np.float32)
    np.testing.assert_array_equal(impl.softmax_fwd(x), impl.softmax_fwd(x))
    gain = np.ones(16, np.float32)
    bias = np.zeros(16, np.float32)
    a = impl.layernorm_fwd(x, gain, bias, 1e-5)
    b = impl.layernorm_fwd(x, gain, bias, 1e-5)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    flat = x.reshape(-1)
    np.testing.assert_array_equal(impl.gelu_fwd(flat), impl.gelu_fwd(flat))


def test_backend_selection_reporting():
    from pyrafuse.kernels import active_backend, kernel_table
    table = kernel_table()
    assert set(table.values()) <= {"numpy", "numba"}
    assert active_backend() in ("numpy", "numba", "auto(mixed)")


def test_numpy_backend_env_flag():
    """PYRAFUSE_BACKEND=numpy forces the pure-numpy path in a fresh process."""
    import subprocess
    import sys
    code = ("import pyrafuse.kernels as k; "
            "assert k.active_backend() == 'numpy', k.active_backend(); "
            "assert set(k.kernel_table().values()) == {'numpy'}; "
            "print('ok')")
    env = {"PYRAFUSE_BACKEND": "numpy", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env)
    assert out.returncode == 0, out.stderr
    assert "ok" in out.stdout
