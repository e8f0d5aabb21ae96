"""Rank-3 float64 grids: the carrier for images, feature maps and gradients."""

import numpy as np

from .errors import DimensionError, EvaluationError


class Grid:
    """A channels x height x width field of 64-bit floats.

    Values are checked to be finite and frozen after construction, so a Grid
    can be shared freely between threads.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        self._adopt(arr)

    @classmethod
    def _wrap(cls, arr):
        # Adopt an array the caller owns without copying it.
        g = cls.__new__(cls)
        g._adopt(np.ascontiguousarray(arr, dtype=np.float64))
        return g

    def _adopt(self, arr):
        if arr.ndim != 3:
            raise DimensionError(
                f"grid must have rank 3 (channels, height, width), got rank {arr.ndim}"
            )
        if min(arr.shape) < 1:
            raise DimensionError(f"grid dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise EvaluationError("grid contains non-finite values")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def from_flat(cls, channels, height, width, values):
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != channels * height * width:
            raise DimensionError(
                f"flat data has {flat.size} values, expected "
                f"{channels}*{height}*{width} = {channels * height * width}"
            )
        return cls(flat.reshape(channels, height, width))

    @classmethod
    def zeros(cls, channels, height, width):
        return cls._wrap(np.zeros((channels, height, width)))

    @classmethod
    def full(cls, channels, height, width, value):
        return cls._wrap(np.full((channels, height, width), float(value)))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Grid(channels={self.channels}, height={self.height}, width={self.width})"
