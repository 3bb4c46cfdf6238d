"""The finite-difference harness itself: it must pass on the real model and
fail when a backward rule is deliberately corrupted."""

import time

import numpy as np

import cellformer.autograd
from cellformer import autograd as ag
from cellformer.autograd import Tensor
from cellformer.gradcheck import REL_TOL, finite_difference_errors, run_grad_check


def test_run_grad_check_passes_within_budget():
    t0 = time.time()
    passed, report = run_grad_check(seed=0)
    elapsed = time.time() - t0
    assert passed, {k: v for k, v in report.items() if v[0] > REL_TOL}
    assert elapsed < 120.0
    # every parameter group named by any loss appears exactly once
    assert len(report) == len(set(report))
    assert "word_emb" in report and "layer1.f2_w" in report
    assert all(n > 0 for _, n in report.values())


def test_corrupted_backward_rule_is_caught(monkeypatch):
    true_gelu = cellformer.autograd.gelu

    def corrupted(x):
        out = true_gelu(x)
        orig = out._backward
        out._backward = lambda g: tuple(
            None if p is None else p * 1.01 for p in orig(g)
        )
        return out

    monkeypatch.setattr(cellformer.autograd, "gelu", corrupted)
    passed, report = run_grad_check(seed=0)
    assert not passed


def test_phantom_gradient_is_caught():
    ag.set_dtype(np.float64)
    w = Tensor(np.ones(3), requires_grad=True)
    dead = Tensor(np.ones(3), requires_grad=True)

    def loss_fn():
        # `dead` never enters the loss; fake a gradient for it afterwards
        return (w * w).sum()

    report = finite_difference_errors(loss_fn, {"w": w, "dead": dead}, seed=0)
    assert report["w"][0] <= REL_TOL
    assert report["dead"][0] <= REL_TOL  # zero analytic, zero fd: consistent

    class LyingTensor(Tensor):
        pass

    lying = Tensor(np.ones(3), requires_grad=True)

    def lying_loss():
        out = (w * w).sum()
        lying.grad = np.ones(3)  # claims a gradient it cannot have
        return out

    report = finite_difference_errors(lying_loss, {"w": w, "lying": lying}, seed=0)
    assert report["lying"][0] > REL_TOL
