"""Model assembly and sliding-window inference over videos of any length.

The network's internal disparity uses the matching column ``w + D``.
Everything returned from this module uses the conventional nonnegative
left-to-right disparity, i.e. the negated internal value.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .attention import sst_block
from .data import DisparitySequence, StereoVideo
from .encoder import extract_features, pad_to_multiple
from .refiner import RefinementResult, run_refinement
from .tensor_kernels import DTYPE
from .weights import ModelConfig, ModelWeights

log = logging.getLogger(__name__)


class Window(NamedTuple):
    start: int
    keep_begin: int
    keep_end: int


@dataclass(frozen=True)
class WindowPlan:
    length: int
    size: int
    windows: tuple[Window, ...]

    def __len__(self) -> int:
        return len(self.windows)


@dataclass(frozen=True)
class InferenceConfig:
    window: int = 20
    overlap: int = 10
    pad_mode: str = "last"  # or "first"

    @property
    def margin(self) -> int:
        return self.overlap // 2


def plan_windows(length: int, size: int = 20, overlap: int = 10, margin: int | None = None) -> WindowPlan:
    """Windows of ``size`` frames advancing by ``size - overlap``.

    Each window keeps its middle ``[start + margin, start + size - margin)``;
    the first keeps from frame 0 and the last up to ``length``. The last start
    is clamped to ``length - size``, and where kept ranges then overlap the
    later window wins. Videos of at most ``size`` frames get one window.
    """
    margin = overlap // 2 if margin is None else margin
    if length < 1:
        raise ValueError(f"video length must be >= 1, got {length}")
    if size <= 2 * margin:
        raise ValueError(f"window size {size} must exceed twice the margin {margin}")
    if overlap != 2 * margin:
        raise ValueError(f"overlap {overlap} must equal twice the margin {margin}")
    stride = size - overlap
    starts = [0]
    while starts[-1] + size < length:
        starts.append(min(starts[-1] + stride, length - size))
    windows = []
    for i, s in enumerate(starts):
        begin = 0 if i == 0 else s + margin
        end = length if i == len(starts) - 1 else s + size - margin
        windows.append([s, begin, end])
    for prev, nxt in zip(windows, windows[1:]):
        prev[2] = min(prev[2], nxt[1])
    return WindowPlan(length, size, tuple(Window(*w) for w in windows))


def pad_short_video(video: StereoVideo, size: int, mode: str = "last") -> tuple[StereoVideo, int]:
    """Repeat the last (or first) frame until the video has ``size`` frames."""
    n = video.length
    if n >= size:
        return video, n
    if mode == "last":
        idx = np.concatenate([np.arange(n), np.full(size - n, n - 1)])
    elif mode == "first":
        idx = np.concatenate([np.zeros(size - n, dtype=int), np.arange(n)])
    else:
        raise ValueError(f"pad mode must be 'first' or 'last', got {mode!r}")
    return StereoVideo(video.left[idx], video.right[idx], video.focal, video.baseline), n


def forward(video: StereoVideo, weights: ModelWeights, cfg: ModelConfig | None = None,
            use_encodings: bool = True, **refine_kwargs) -> RefinementResult:
    """Encoder, SST block and refinement on one clip; predictions are in internal sign.

    Frames are edge-padded to multiples of 16 and predictions cropped back.
    """
    cfg = cfg or weights.config
    padded, (h, w) = pad_to_multiple(video, 16)
    pyramid = extract_features(padded, weights)
    pyramid = pyramid.with_level(16, sst_block(pyramid.levels[16], cfg, weights, use_encodings))
    result = run_refinement(pyramid, weights, cfg, **refine_kwargs)
    result.predictions = [p[:, :h, :w] for p in result.predictions]
    return result


def predict_clip(video: StereoVideo, weights: ModelWeights, cfg: ModelConfig | None = None) -> np.ndarray:
    """Final conventional-sign disparity [T, H, W] for one clip."""
    return (-forward(video, weights, cfg).predictions[-1]).astype(DTYPE)


def infer_video(video: StereoVideo, weights: ModelWeights, config: InferenceConfig = InferenceConfig(),
                cfg: ModelConfig | None = None, timings: list | None = None) -> DisparitySequence:
    """Disparity for every frame of ``video``, composed from overlapping windows."""
    cfg = cfg or weights.config
    length = video.length
    plan = plan_windows(length, config.window, config.overlap, config.margin)
    out = np.empty((length, *video.size), dtype=DTYPE)
    for win in plan.windows:
        clip = video.frames(win.start, win.start + config.window)
        clip, n = pad_short_video(clip, config.window, config.pad_mode)
        tic = time.perf_counter()
        disp = predict_clip(clip, weights, cfg)
        elapsed = time.perf_counter() - tic
        if config.pad_mode == "first":
            disp = disp[config.window - n :]
        else:
            disp = disp[:n]
        out[win.keep_begin : win.keep_end] = disp[win.keep_begin - win.start : win.keep_end - win.start]
        log.info("window start=%d keep=[%d,%d) %.3f s", win.start, win.keep_begin, win.keep_end, elapsed)
        if timings is not None:
            timings.append((win, elapsed))
    return DisparitySequence(out)


def with_iterations(weights: ModelWeights, iters: int) -> ModelWeights:
    """Same parameters with a different iteration count M recorded in the metadata."""
    cfg = replace(weights.config, iters=iters)
    return ModelWeights(dict(weights.items()), {**weights.metadata, **cfg.to_metadata()})
