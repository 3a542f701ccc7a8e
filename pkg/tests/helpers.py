"""Shared independent oracles for the test suite.

The gradient oracle here is plain central finite differences in float64 and
knows nothing about the tape; metric oracles elsewhere are written the same
way, straight from definitions.
"""

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar-valued f with respect to x.

    x is perturbed in place one element at a time and restored; f must read
    x's current contents on every call.
    """
    assert x.dtype == np.float64, "finite differences only run in 64-bit"
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = f()
        flat[j] = orig - eps
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * eps)
    return grad


def grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-7) -> bool:
    """Relative error <= rtol with an absolute floor, elementwise."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all(diff <= rtol * scale + atol))


def max_grad_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-7)
    return float((diff / scale).max()) if diff.size else 0.0
