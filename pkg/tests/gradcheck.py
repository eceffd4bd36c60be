"""Central finite-difference gradient oracle, independent of the autodiff."""

import numpy as np


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f / d x elementwise via central differences; f maps ndarray -> float."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # the floor turns the check absolute (< 1e-7) for entries so small that
    # central differences are dominated by cancellation noise (~1e-11)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
    return float((np.abs(analytic - numeric) / denom).max())
