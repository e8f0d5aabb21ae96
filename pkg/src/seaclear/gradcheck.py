"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .errors import DimensionError, EvaluationError, ParameterError
from .grid import Grid

REL_ERR_FLOOR = 1e-8


def finite_diff_check(fn, point, analytic_grad, h):
    """Compare an analytic gradient against central finite differences.

    ``fn`` maps a point (Grid or array, matching the type of ``point``) to a
    scalar. For every coordinate the numeric derivative
    (f(x+h) - f(x-h)) / 2h is compared to the analytic one; the relative
    error is |a - n| / max(|a|, |n|, 1e-8). Returns the maximum over
    coordinates.
    """
    if h <= 0:
        raise ParameterError(f"step size h must be > 0, got {h}")
    is_grid = isinstance(point, Grid)
    base = point.data if is_grid else np.asarray(point, dtype=np.float64)
    analytic = (
        analytic_grad.data if isinstance(analytic_grad, Grid) else np.asarray(analytic_grad, dtype=np.float64)
    )
    if analytic.shape != base.shape:
        raise DimensionError(
            f"analytic gradient shape {analytic.shape} != point shape {base.shape}"
        )

    def evaluate(flat):
        arg = flat.reshape(base.shape)
        value = float(fn(Grid(arg) if is_grid else arg))
        if not np.isfinite(value):
            raise EvaluationError("function returned a non-finite value during finite differences")
        return value

    flat = base.ravel()
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        f_plus = evaluate(bumped)
        bumped[i] = flat[i] - h
        f_minus = evaluate(bumped)
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    a = analytic.ravel()
    rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), REL_ERR_FLOOR)
    return float(rel.max())


def subsampled_grad_check(fn, point, analytic_grad, h, count, rng):
    """finite_diff_check restricted to ``count`` random coordinates.

    For large parameter vectors a full sweep is wasteful; this probes a
    random subset while still using the central-difference oracle. ``fn``
    receives the full-shaped array.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != point.shape:
        raise DimensionError(
            f"analytic gradient shape {analytic.shape} != point shape {point.shape}"
        )
    n = point.size
    idx = np.sort(rng.choice(n, size=min(count, n), replace=False))

    def reduced(sub):
        full = point.ravel().copy()
        full[idx] = sub
        return fn(full.reshape(point.shape))

    return finite_diff_check(reduced, point.ravel()[idx], analytic.ravel()[idx], h)
