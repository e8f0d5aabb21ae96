import numpy as np
import pytest

from seaclear import DimensionError, EvaluationError, Grid


def test_shape_properties():
    g = Grid(np.zeros((3, 4, 5)))
    assert (g.channels, g.height, g.width) == (3, 4, 5)
    assert g.shape == (3, 4, 5)
    assert g.size == 60


def test_from_flat_round_trip():
    values = np.arange(24, dtype=float)
    g = Grid.from_flat(2, 3, 4, values)
    assert np.array_equal(g.data.ravel(), values)


def test_from_flat_wrong_length():
    with pytest.raises(DimensionError):
        Grid.from_flat(2, 3, 4, np.zeros(23))


def test_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        Grid(np.zeros((4, 5)))


def test_rejects_non_finite():
    bad = np.zeros((1, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(EvaluationError):
        Grid(bad)
    bad[0, 0, 0] = np.inf
    with pytest.raises(EvaluationError):
        Grid(bad)


def test_data_is_frozen():
    g = Grid.zeros(1, 2, 2)
    with pytest.raises(ValueError):
        g.data[0, 0, 0] = 1.0


def test_constructor_copies_input():
    src = np.zeros((1, 2, 2))
    g = Grid(src)
    src[0, 0, 0] = 5.0
    assert g.data[0, 0, 0] == 0.0
