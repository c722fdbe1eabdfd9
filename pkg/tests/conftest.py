"""Shared test helpers: finite-difference gradient oracle and tolerances."""

from __future__ import annotations

import numpy as np

from skelcanon import diffengine as de


def fd_grad(make_loss, arrays, idx, h=1e-6):
    """Central finite-difference gradient of a scalar loss.

    ``make_loss(*tensors) -> Tensor`` is re-evaluated with coordinate
    ``idx``-th input perturbed; all inputs are plain (non-grad) tensors so
    the oracle never touches the backward code it is checking.
    """
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    x = base[idx]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        mi = it.multi_index
        orig = x[mi]
        x[mi] = orig + h
        fp = make_loss(*[de.tensor(b) for b in base]).item()
        x[mi] = orig - h
        fm = make_loss(*[de.tensor(b) for b in base]).item()
        x[mi] = orig
        g[mi] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_match(make_loss, arrays, rtol=1e-6, floor=1e-8, h=1e-6, which=None):
    """Backprop the loss and compare every input gradient against fd_grad."""
    ts = [de.tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    loss = make_loss(*ts)
    de.backpropagate(loss)
    indices = range(len(arrays)) if which is None else which
    for i in indices:
        analytic = ts[i].grad
        assert analytic is not None, f"input {i} received no gradient"
        numeric = fd_grad(make_loss, arrays, i, h=h)
        err = np.abs(analytic - numeric)
        tol = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + floor
        assert np.all(err <= tol), (
            f"gradient mismatch on input {i}: max err {err.max():.3e}, "
            f"worst rel {np.max(err / (np.abs(numeric) + 1e-12)):.3e}"
        )
