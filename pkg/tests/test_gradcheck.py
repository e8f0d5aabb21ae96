import numpy as np
import pytest

from seaclear import EvaluationError, Grid, ParameterError, finite_diff_check
from seaclear.gradcheck import subsampled_grad_check


def test_linear_function_passes():
    point = Grid(np.random.default_rng(0).uniform(-1, 1, (2, 3, 3)))
    err = finite_diff_check(lambda g: float(g.data.sum()), point, Grid.full(2, 3, 3, 1.0), 1e-5)
    assert err < 1e-9


def test_quadratic_passes():
    point = Grid(np.random.default_rng(1).uniform(0.5, 1.5, (1, 4, 4)))
    err = finite_diff_check(lambda g: 0.5 * float((g.data**2).sum()), point, point, 1e-5)
    assert err < 1e-9


def test_wrong_gradient_reports_half():
    # Claimed grad 2x for f = 0.5*||x||^2 (true grad x): per coordinate the
    # error is |2x - x| / max(2|x|, |x|) = 0.5.
    point = Grid(np.random.default_rng(2).uniform(0.5, 1.5, (1, 3, 3)))
    wrong = Grid(2.0 * point.data)
    err = finite_diff_check(lambda g: 0.5 * float((g.data**2).sum()), point, wrong, 1e-5)
    assert abs(err - 0.5) < 1e-6


def test_plain_array_point():
    point = np.array([1.0, 2.0, 3.0])
    err = finite_diff_check(lambda a: float((a**2).sum()), point, 2.0 * point, 1e-5)
    assert err < 1e-9


def test_non_positive_h_rejected():
    with pytest.raises(ParameterError):
        finite_diff_check(lambda g: 0.0, Grid.zeros(1, 1, 1), Grid.zeros(1, 1, 1), 0.0)


def test_non_finite_function_value():
    def fn(g):
        return float("nan")

    with pytest.raises(EvaluationError):
        finite_diff_check(fn, Grid.zeros(1, 1, 1), Grid.zeros(1, 1, 1), 1e-5)


def test_shape_mismatch():
    from seaclear import DimensionError

    with pytest.raises(DimensionError):
        finite_diff_check(lambda g: 0.0, Grid.zeros(1, 2, 2), Grid.zeros(1, 2, 3), 1e-5)


def test_subsampled_matches_full_on_quadratic():
    rng = np.random.default_rng(3)
    point = rng.uniform(0.5, 1.5, size=100)
    err = subsampled_grad_check(lambda a: float((a**2).sum()), point, 2.0 * point, 1e-5, 10, rng)
    assert err < 1e-9


def test_subsampled_detects_wrong_gradient():
    rng = np.random.default_rng(4)
    point = rng.uniform(0.5, 1.5, size=50)
    err = subsampled_grad_check(lambda a: float((a**2).sum()), point, 3.0 * point, 1e-5, 10, rng)
    assert err > 0.2
