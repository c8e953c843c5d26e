"""Shared test oracles: central finite differences against analytic grads."""

import numpy as np

from hanmt import tensor as T


def finite_diff_grad(loss_fn, param: T.Tensor, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar loss wrt one tensor.

    loss_fn must run forward-only (no graph) and return a float; it reads
    param.data in place, so we perturb entries one at a time.
    """
    base = param.data.copy()
    g = np.zeros_like(base, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    param.data = base
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def analytic_grad(loss_builder, params):
    """Run loss_builder under a fresh graph and return each param's grad."""
    for p in params:
        p.zero_grad()
    with T.Graph() as g:
        loss = loss_builder()
        g.backward(loss)
    return [None if p.grad is None else p.grad.copy() for p in params]
