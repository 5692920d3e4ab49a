"""Shared test oracles: central finite differences and relative error.

The finite-difference side is deliberately independent of the autodiff
engine: it only calls a plain ndarray->float function.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar fn at x (double precision)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error, robust to near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_grad_wrt(fn_of_arrays, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   step: float = 1e-5) -> float:
    """Max relative error between analytic grads and FD grads over the named
    arrays. fn_of_arrays receives the dict (with one entry perturbed) and
    returns a float."""
    worst = 0.0
    for name in arrays:
        def scalar(x, _name=name):
            probe = dict(arrays)
            probe[_name] = x
            return fn_of_arrays(probe)

        fd = fd_gradient(scalar, arrays[name], step=step)
        worst = max(worst, rel_error(fd, grads[name]))
    return worst
