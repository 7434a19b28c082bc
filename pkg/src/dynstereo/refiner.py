"""Coarse-to-fine recurrent disparity refinement.

Each stride k in (16, 8, 4) has its own update block: correlation lookup,
late fusion with the left features, a separable 3D convolutional GRU and a
small head decoding the disparity increment. Disparity is measured in
pixels of the current grid and rescaled when moving to a finer one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .attention import space_stage, space_time_encoding, time_stage
from .correlation import CorrelationPyramid, build_pyramid, lookup
from .encoder import FeaturePyramid
from .tensor_kernels import DTYPE, SEPARABLE_EXTENTS, conv2d, conv3d, relu, sigmoid, softmax, upsample_bilinear
from .weights import ModelConfig, ModelWeights

UPSAMPLE_FACTORS = {16: 2, 8: 2, 4: 4}


@dataclass(frozen=True)
class Schedule:
    """Iteration budget: M/4 at stride 16, M/4 at stride 8, M/2 at stride 4."""

    total: int

    def __post_init__(self):
        if self.total <= 0 or self.total % 4:
            raise ValueError(f"M={self.total} must be a positive multiple of 4")

    @property
    def counts(self) -> dict[int, int]:
        return {16: self.total // 4, 8: self.total // 4, 4: self.total // 2}


@dataclass(frozen=True)
class UpdateState:
    hidden: np.ndarray  # [T, dh, h, w]
    disparity: np.ndarray  # [T, h, w]
    k: int
    m: int = 0


@dataclass
class RefinementResult:
    predictions: list  # M arrays [T, H, W], full resolution
    hidden: dict = field(default_factory=dict)  # final hidden state per stride
    max_abs_hidden: float = 0.0
    corr_builds: int = 0


def _conv(x, weights: ModelWeights, name: str) -> np.ndarray:
    w = weights[f"{name}.w"]
    return conv2d(x, w, weights[f"{name}.b"], padding=w.shape[-1] // 2)


def init_state(phi_left, disparity, weights: ModelWeights, k: int, m: int = 0) -> UpdateState:
    """Hidden state from the left features of this stride, squashed into (-1, 1)."""
    hidden = np.tanh(_conv(phi_left, weights, f"g{k}.hidden")).astype(DTYPE)
    return UpdateState(hidden, np.asarray(disparity, dtype=DTYPE), k, m)


def fuse_modalities(corr_feats, disparity, phi_left, weights: ModelWeights, k: int, cfg: ModelConfig) -> np.ndarray:
    """Encode lookup and disparity separately and concatenate with the left features.

    At stride 16 the fused map additionally goes through attention across
    time and then across space.
    """
    c = relu(_conv(relu(_conv(corr_feats, weights, f"g{k}.corr1")), weights, f"g{k}.corr2"))
    d = relu(_conv(relu(_conv(np.asarray(disparity, dtype=DTYPE)[:, None], weights, f"g{k}.disp1")),
                   weights, f"g{k}.disp2"))
    fused = np.concatenate([c, d, np.asarray(phi_left, dtype=DTYPE)], axis=1)
    if k != 16:
        return fused
    t, df, h, w = fused.shape
    enc = space_time_encoding(t, h, w, df, weights, "g16.fuse.time_embed")
    x = fused[:, None]
    x = time_stage(x, weights, "g16.fuse.time", cfg.heads, enc)
    x = space_stage(x, weights, "g16.fuse.space", cfg.heads, enc)
    return np.ascontiguousarray(x[:, 0])


def gru_gates(h, x, weights: ModelWeights, prefix: str):
    """Update gate z, reset gate r and candidate for one separable GRU. Arrays are [C, T, H, W]."""
    hx = np.concatenate([h, x], axis=0)
    # z and r read the same input, so they run as one convolution
    zr_w = np.concatenate([weights[f"{prefix}.z.w"], weights[f"{prefix}.r.w"]])
    zr_b = np.concatenate([weights[f"{prefix}.z.b"], weights[f"{prefix}.r.b"]])
    z, r = np.split(sigmoid(conv3d(hx, zr_w, zr_b)), 2)
    q = np.tanh(conv3d(np.concatenate([r * h, x], axis=0), weights[f"{prefix}.q.w"], weights[f"{prefix}.q.b"]))
    return z, r, q.astype(DTYPE)


def gru_substep(h, x, weights: ModelWeights, prefix: str) -> np.ndarray:
    z, _, q = gru_gates(h, x, weights, prefix)
    return ((1 - z) * h + z * q).astype(DTYPE)


def gru_step(state: UpdateState, fused, weights: ModelWeights):
    """Run the three separable GRUs (extents (1,1,5), (5,1,1), (1,5,5) over T,H,W).

    Returns the state with the new hidden and the increment dD [T, h, w].
    """
    k = state.k
    h = state.hidden.transpose(1, 0, 2, 3)
    x = np.asarray(fused, dtype=DTYPE).transpose(1, 0, 2, 3)
    for i in range(len(SEPARABLE_EXTENTS)):
        h = gru_substep(h, x, weights, f"g{k}.gru{i}")
    hidden = np.ascontiguousarray(h.transpose(1, 0, 2, 3))
    delta = _conv(relu(_conv(hidden, weights, f"g{k}.head1")), weights, f"g{k}.head2")[:, 0]
    return replace(state, hidden=hidden), delta


def update_disparity(state: UpdateState, delta) -> UpdateState:
    return replace(state, disparity=(state.disparity + np.asarray(delta, dtype=DTYPE)).astype(DTYPE), m=state.m + 1)


def _neighbors3x3(x: np.ndarray) -> np.ndarray:
    """[T, h, w] -> [T, 9, h, w] raster-ordered 3x3 neighborhoods with edge replication."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = x.shape[1:]
    return np.stack([xp[:, i : i + h, j : j + w] for i in range(3) for j in range(3)], axis=1)


def convex_weights(mask_logits, factor: int) -> np.ndarray:
    """Softmax over the 9 neighbors: [T, 9*f*f, h, w] -> [T, 9, f, f, h, w]."""
    t, _, h, w = mask_logits.shape
    return softmax(np.asarray(mask_logits, dtype=DTYPE).reshape(t, 9, factor, factor, h, w), axis=1)


def convex_upsample(x, mask_logits, factor: int) -> np.ndarray:
    """Each fine cell is a convex combination of its coarse 3x3 neighborhood; values scale by ``factor``.

    Written as center + sum_n w_n (x_n - center) so that constant fields map
    to exactly ``factor`` times the constant.
    """
    x = np.asarray(x, dtype=DTYPE) * DTYPE(factor)
    t, h, w = x.shape
    wts = convex_weights(mask_logits, factor)
    nb = _neighbors3x3(x)
    diff = nb - x[:, None]
    up = x[:, None, None] + np.einsum("tnabhw,tnhw->tabhw", wts, diff)
    # [T, a, b, h, w] -> [T, h, a, w, b]
    return np.ascontiguousarray(up.transpose(0, 3, 1, 4, 2).reshape(t, h * factor, w * factor), dtype=DTYPE)


def predict_mask(hidden, weights: ModelWeights, k: int) -> np.ndarray:
    m = relu(_conv(hidden, weights, f"up{k}.mask1"))
    return (0.25 * _conv(m, weights, f"up{k}.mask2")).astype(DTYPE)


def upsample_between_scales(disparity, hidden, weights: ModelWeights, k: int) -> np.ndarray:
    """Stride k -> k/2: mean of learned convex and bilinear upsampling, values doubled."""
    convex = convex_upsample(disparity, predict_mask(hidden, weights, k), 2)
    bilinear = upsample_bilinear(np.asarray(disparity, dtype=DTYPE) * DTYPE(2), 2)
    return (DTYPE(0.5) * (convex + bilinear)).astype(DTYPE)


def upsample_final(disparity, hidden, weights: ModelWeights) -> np.ndarray:
    """Stride 4 -> full resolution with a 4x convex weight grid."""
    return convex_upsample(disparity, predict_mask(hidden, weights, 4), 4)


def to_full_resolution(disparity, k: int) -> np.ndarray:
    """Bilinear upsampling used for intermediate estimates."""
    return upsample_bilinear(np.asarray(disparity, dtype=DTYPE) * DTYPE(k), k)


def run_refinement(pyramid: FeaturePyramid, weights: ModelWeights, cfg: ModelConfig,
                   corr_fn: Callable[..., CorrelationPyramid] = build_pyramid) -> RefinementResult:
    """All M estimates, each upsampled to full resolution [T, H, W].

    Intermediate estimates use bilinear upsampling; the last one is the
    learned convex upsampling of the final stride-4 disparity.
    """
    schedule = Schedule(cfg.iters)
    result = RefinementResult(predictions=[])
    t, _, _, h16, w16 = pyramid.levels[16].shape
    disparity = np.zeros((t, h16, w16), dtype=DTYPE)
    state = None
    m = 0
    for k in (16, 8, 4):
        if state is not None:
            disparity = upsample_between_scales(state.disparity, state.hidden, weights, state.k)
        corr = corr_fn(pyramid.left(k), pyramid.right(k))
        result.corr_builds += 1
        phi_left = pyramid.left(k)
        state = init_state(phi_left, disparity, weights, k, m)
        result.max_abs_hidden = max(result.max_abs_hidden, float(np.abs(state.hidden).max()))
        for _ in range(schedule.counts[k]):
            corr_feats = lookup(corr, state.disparity, cfg.radius)
            fused = fuse_modalities(corr_feats, state.disparity, phi_left, weights, k, cfg)
            state, delta = gru_step(state, fused, weights)
            state = update_disparity(state, delta)
            result.max_abs_hidden = max(result.max_abs_hidden, float(np.abs(state.hidden).max()))
            result.predictions.append(to_full_resolution(state.disparity, k))
        result.hidden[k] = state.hidden
        m = state.m
    result.predictions[-1] = upsample_final(state.disparity, state.hidden, weights)
    return result
