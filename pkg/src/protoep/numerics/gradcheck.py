"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .engine import NumArray, Tape, array

__all__ = ["grad_check"]


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` takes a list of NumArray leaves (one per entry of ``params``) and
    returns a scalar NumArray. Every coordinate of every parameter is
    perturbed by +/- eps. Returns the max over coordinates of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]

    tape = Tape()
    leaves = [array(p, tape) for p in params]
    out = f(leaves)
    grads = tape.backward(out)
    analytic = [grads.get(leaf.node_id, np.zeros_like(p)) for leaf, p in zip(leaves, params)]

    def value_at(arrays) -> float:
        return f([NumArray(a) for a in arrays]).item()

    max_err = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        for i in range(flat.size):
            bumped = [q.copy() for q in params]
            bumped[k].reshape(-1)[i] = flat[i] + eps
            f_plus = value_at(bumped)
            bumped[k].reshape(-1)[i] = flat[i] - eps
            f_minus = value_at(bumped)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[k].reshape(-1)[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
