"""Containers for stereo videos and disparity sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_kernels import DTYPE, ShapeError


@dataclass(frozen=True)
class StereoVideo:
    """Rectified stereo frames, each view [T, 3, H, W] with values in [0, 1]."""

    left: np.ndarray
    right: np.ndarray
    focal: float | None = None
    baseline: float | None = None

    def __post_init__(self):
        left = np.asarray(self.left, dtype=DTYPE)
        right = np.asarray(self.right, dtype=DTYPE)
        if left.ndim != 4 or left.shape[1] != 3:
            raise ShapeError(f"left frames must be [T, 3, H, W], got {left.shape}")
        if left.shape != right.shape:
            raise ShapeError(f"left {left.shape} and right {right.shape} extents differ")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def length(self) -> int:
        return self.left.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.left.shape[2], self.left.shape[3]

    def frames(self, start: int, stop: int) -> "StereoVideo":
        return StereoVideo(self.left[start:stop], self.right[start:stop], self.focal, self.baseline)


@dataclass(frozen=True)
class DisparitySequence:
    """Left-aligned disparity in pixels [T, H, W] plus a boolean validity mask."""

    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=DTYPE)
        if values.ndim != 3:
            raise ShapeError(f"disparity must be [T, H, W], got {values.shape}")
        valid = np.ones(values.shape, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise ShapeError(f"valid mask {valid.shape} does not match disparity {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def length(self) -> int:
        return self.values.shape[0]
