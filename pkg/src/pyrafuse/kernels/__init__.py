"""Hot-kernel backend selection.

Only fused element-wise/reduction kernels live here (softmax, layer norm,
GELU, Adam); matrix products and the DFT stay on BLAS in `numerics`,
where a hand loop cannot win.

The env var PYRAFUSE_BACKEND picks the implementation at import time:

    auto   (default) per-kernel mix: the jit loops where fusion wins
           (layer norm, softmax backward, GELU), numpy where its SIMD
           transcendentals win (softmax forward, Adam); numpy everywhere
           if numba is unavailable
    numba  force every kernel onto the jit path (error if unavailable)
    numpy  force the pure-numpy path

The split was measured with bench/kernel_bench.py; rerun it on new
hardware before changing the table.
"""

import os
import warnings

from ..errors import ConfigError
from . import numpy_impl

KERNEL_NAMES = (
    "softmax_fwd", "softmax_bwd",
    "layernorm_fwd", "layernorm_bwd",
    "gelu_fwd", "gelu_bwd",
    "adam_update",
)

# measured winners for mode "auto" (True = numba)
_AUTO_NUMBA = {
    "softmax_fwd": False,      # numpy SIMD exp beats scalar libm exp
    "softmax_bwd": True,
    "layernorm_fwd": True,
    "layernorm_bwd": True,
    "gelu_fwd": True,
    "gelu_bwd": True,
    "adam_update": False,      # numpy SIMD sqrt wins on the flat update
}

_requested = os.environ.get("PYRAFUSE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"PYRAFUSE_BACKEND={_requested!r}: expected one of auto, numba, numpy")

_numba_impl = None
if _requested in ("auto", "numba"):
    try:
        from . import numba_impl as _numba_impl
    except ImportError as exc:
        if _requested == "numba":
            raise ConfigError(f"PYRAFUSE_BACKEND=numba but numba is unavailable: {exc}")
        warnings.warn(f"numba unavailable ({exc}); falling back to numpy kernels")

if _numba_impl is None:
    ACTIVE_BACKEND = "numpy"
    _table = {name: numpy_impl for name in KERNEL_NAMES}
elif _requested == "numba":
    ACTIVE_BACKEND = "numba"
    _table = {name: _numba_impl for name in KERNEL_NAMES}
else:
    ACTIVE_BACKEND = "auto(mixed)"
    _table = {name: (_numba_impl if use_numba else numpy_impl)
              for name, use_numba in _AUTO_NUMBA.items()}

softmax_fwd = _table["softmax_fwd"].softmax_fwd
softmax_bwd = _table["softmax_bwd"].softmax_bwd
layernorm_fwd = _table["layernorm_fwd"].layernorm_fwd
layernorm_bwd = _table["layernorm_bwd"].layernorm_bwd
gelu_fwd = _table["gelu_fwd"].gelu_fwd
gelu_bwd = _table["gelu_bwd"].gelu_bwd
adam_update = _table["adam_update"].adam_update


def active_backend() -> str:
    """Name of the kernel selection chosen at import time."""
    return ACTIVE_BACKEND


def kernel_table() -> dict[str, str]:
    """Which implementation backs each kernel."""
    return {name: ("numba" if impl is not numpy_impl else "numpy")
            for name, impl in _table.items()}
