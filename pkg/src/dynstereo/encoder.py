"""Shared per-frame CNN producing the stride 4/8/16 feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import StereoVideo
from .tensor_kernels import DTYPE, ShapeError, avg_pool2d, conv2d, instance_norm, pad_edge, relu
from .weights import ModelWeights

PYRAMID_STRIDES = (4, 8, 16)
VIEWS = ("left", "right")


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-stride feature volumes, each [T, 2, d, H/k, W/k] with view 0 = left."""

    levels: dict[int, np.ndarray]

    def __post_init__(self):
        if set(self.levels) != set(PYRAMID_STRIDES):
            raise ShapeError(f"pyramid strides must be {PYRAMID_STRIDES}, got {sorted(self.levels)}")

    def left(self, k: int) -> np.ndarray:
        return self.levels[k][:, 0]

    def right(self, k: int) -> np.ndarray:
        return self.levels[k][:, 1]

    def with_level(self, k: int, value: np.ndarray) -> "FeaturePyramid":
        levels = dict(self.levels)
        levels[k] = np.asarray(value, dtype=DTYPE)
        return FeaturePyramid(levels)


def _conv(x, weights: ModelWeights, name: str, stride: int = 1) -> np.ndarray:
    w = weights[f"{name}.w"]
    return conv2d(x, w, weights[f"{name}.b"], stride=stride, padding=w.shape[-1] // 2)


def _residual(x, weights, name):
    y = relu(instance_norm(_conv(x, weights, f"{name}.conv1")))
    y = instance_norm(_conv(y, weights, f"{name}.conv2"))
    return relu(x + y)


def encode_frames(frames: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Run the backbone on a batch of frames [N, 3, H, W] -> [N, d, H/4, W/4]."""
    x = 2.0 * np.asarray(frames, dtype=DTYPE) - 1.0
    x = relu(instance_norm(_conv(x, weights, "enc.stem", stride=2)))
    x = _residual(x, weights, "enc.res1a")
    x = _residual(x, weights, "enc.res1b")
    y = relu(instance_norm(_conv(x, weights, "enc.down.conv1", stride=2)))
    y = instance_norm(_conv(y, weights, "enc.down.conv2"))
    x = relu(_conv(x, weights, "enc.down.skip", stride=2) + y)
    x = _residual(x, weights, "enc.res2a")
    x = _residual(x, weights, "enc.res2b")
    return _conv(x, weights, "enc.out")


def extract_features(video: StereoVideo, weights: ModelWeights) -> FeaturePyramid:
    """Encode both views of every frame with the same weights.

    H and W must be multiples of 16; use :func:`pad_to_multiple` first.
    """
    h, w = video.size
    if h % 16 or w % 16:
        raise ShapeError(f"frame size {h}x{w} is not divisible by 16; pad the video first (pad_to_multiple)")
    # views run as separate batches of identical shape so equal frames give equal bits
    phi4 = np.stack([encode_frames(video.left, weights), encode_frames(video.right, weights)], axis=1)
    phi8 = avg_pool2d(phi4, 2)
    phi16 = avg_pool2d(phi8, 2)
    return FeaturePyramid({4: phi4, 8: phi8, 16: phi16})


def pad_to_multiple(video: StereoVideo, multiple: int = 16) -> tuple[StereoVideo, tuple[int, int]]:
    """Edge-replicate bottom/right borders up to a multiple; returns the original (H, W)."""
    h, w = video.size
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return video, (h, w)
    padded = StereoVideo(pad_edge(video.left, ph, pw), pad_edge(video.right, ph, pw), video.focal, video.baseline)
    return padded, (h, w)
