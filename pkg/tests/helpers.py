"""Finite-difference gradient checking shared by the test modules."""

import numpy as np


def numeric_grad(f, param, step=1e-5):
    """Central differences of scalar ``f()`` with respect to ``param`` (mutated in place)."""
    g = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = param[i]
        param[i] = old + step
        up = f()
        param[i] = old - step
        down = f()
        param[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """Norm-relative error of one gradient array."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def max_rel_error(params, grads, f, step=1e-5):
    return max(rel_error(g, numeric_grad(f, p, step)) for p, g in zip(params, grads))


# acceptance verdict lines, echoed in the terminal summary
VERDICTS: list[str] = []
