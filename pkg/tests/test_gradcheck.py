"""Gradcheck harness behavior, including the corrupted-backward negative
control."""

import numpy as np

import pyrafuse.fusion as fusion
from pyrafuse.gradcheck import check, format_report, run_suite
from pyrafuse.numerics import Tensor, tsum


def test_kernel_subset_passes_quickly():
    results = run_suite(names=["matmul", "softmax", "layer_norm", "irfft"])
    assert [r.name for r in results] == ["matmul", "softmax", "layer_norm", "irfft"]
    assert all(r.passed for r in results)
    assert all(r.worst_rel_err < 1e-6 for r in results)


def test_check_flags_wrong_gradient():
    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True,
               dtype=np.float64)

    def tampered(t):
        # forward identity, backward scaled by 1.05
        return Tensor._op(t.data, (t,), lambda g: ((t, 1.05 * g),))

    worst = check([x], lambda: tsum(tampered(x) * 3.0))
    assert worst > 1e-2


def test_corrupted_attention_backward_is_named(monkeypatch):
    """A deliberately wrong attention backward must fail the gradcheck and
    be reported under cross_attention."""
    original = fusion.CrossAttention.__call__

    def corrupted(self, q_seq, kv_seq, **kwargs):
        out = original(self, q_seq, kv_seq, **kwargs)
        return Tensor._op(out.data, (out,), lambda g: ((out, 1.01 * g),))

    monkeypatch.setattr(fusion.CrossAttention, "__call__", corrupted)
    results = run_suite(names=["cross_attention", "matmul"])
    by_name = {r.name: r for r in results}
    assert not by_name["cross_attention"].passed
    assert by_name["matmul"].passed
    report = format_report(results)
    failing_lines = [ln for ln in report.splitlines() if "FAIL" in ln]
    assert any("cross_attention" in ln for ln in failing_lines)


def test_report_includes_magnitudes():
    results = run_suite(names=["softmax"])
    report = format_report(results)
    assert "worst rel err" in report
    assert "e-" in report  # numeric magnitude present
