"""Row-wise correlation volumes and the multi-scale lookup around the current disparity.

Inside the network the matching right-image column for left pixel ``w`` is
``w + D``; public outputs flip the sign (see ``pipeline``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_kernels import DTYPE, ShapeError, avg_pool_ceil

CORR_SCALES = (1, 2, 4, 8)

# Test hook for the selftest negative control; never set in normal use.
_CORRUPT_CHANNEL_ORDER = False


@dataclass(frozen=True)
class CorrelationPyramid:
    """Volumes [T, H/(sk), W/(sk), W/(sk)] for s = 1, 2, 4, 8 at one feature stride."""

    volumes: dict[int, np.ndarray]

    def __post_init__(self):
        if tuple(sorted(self.volumes)) != CORR_SCALES:
            raise ShapeError(f"correlation scales must be {CORR_SCALES}, got {sorted(self.volumes)}")


def build_correlation(phi_left, phi_right) -> np.ndarray:
    """C[t, h, w, w'] = <phi_L[t, :, h, w], phi_R[t, :, h, w']> / sqrt(d)."""
    fl = np.asarray(phi_left, dtype=DTYPE)
    fr = np.asarray(phi_right, dtype=DTYPE)
    if fl.shape != fr.shape:
        raise ShapeError(f"left features {fl.shape} and right features {fr.shape} differ")
    if fl.ndim != 4:
        raise ShapeError(f"features must be [T, d, H, W], got {fl.shape}")
    d = fl.shape[1]
    a = fl.transpose(0, 2, 3, 1)  # t h w d
    b = fr.transpose(0, 2, 1, 3)  # t h d w'
    if d > 4096:
        return (np.matmul(a.astype(np.float64), b.astype(np.float64)) / np.sqrt(d)).astype(DTYPE)
    return (np.matmul(a, b) / np.float32(np.sqrt(d))).astype(DTYPE)


def pool_scales(corr) -> CorrelationPyramid:
    """Average-pool the s=1 volume over (h, w, w') by 2, 4 and 8.

    Extents that do not divide evenly keep a trailing partial block averaged
    over the entries it holds.
    """
    corr = np.asarray(corr, dtype=DTYPE)
    volumes = {1: corr}
    for s in CORR_SCALES[1:]:
        volumes[s] = avg_pool_ceil(corr, s, axes=(1, 2, 3))
    return CorrelationPyramid(volumes)


def build_pyramid(phi_left, phi_right) -> CorrelationPyramid:
    return pool_scales(build_correlation(phi_left, phi_right))


def lookup_channel(scale_index: int, offset: int, radius: int) -> int:
    """Channel of scale ``CORR_SCALES[scale_index]`` and offset ``offset`` in the lookup output."""
    if _CORRUPT_CHANNEL_ORDER:
        return (offset + radius) * len(CORR_SCALES) + scale_index
    return scale_index * (2 * radius + 1) + (offset + radius)


def lookup(pyramid: CorrelationPyramid, disparity, radius: int) -> np.ndarray:
    """Sample every scale at (h/s, w/s, (w + D)/s + delta) for delta in [-radius, radius].

    ``disparity`` is [T, H, W] in pixels of the s=1 grid. Returns
    [T, 4 * (2 * radius + 1), H, W], scale-major then offset. Samples that
    fall outside a volume are zero.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    disp = np.asarray(disparity, dtype=np.float64)
    t, h, w = disp.shape
    if pyramid.volumes[1].shape[:3] != (t, h, w):
        raise ShapeError(f"disparity {disp.shape} does not match volume {pyramid.volumes[1].shape}")
    out = np.empty((t, len(CORR_SCALES) * (2 * radius + 1), h, w), dtype=DTYPE)
    cols = np.arange(w, dtype=np.float64)
    for si, s in enumerate(CORR_SCALES):
        rows = _interp_rows(pyramid.volumes[s], h, w, s)
        for off in range(-radius, radius + 1):
            pos = (cols[None, None, :] + disp) / s + off
            out[:, lookup_channel(si, off, radius)] = _interp_last_axis(rows, pos)
    return out


def _axis_taps(pos: np.ndarray, n: int):
    """Floor/ceil indices, weights and in-range flags for linear interpolation along one axis."""
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64)
    hi = lo + 1
    taps = []
    for idx, wt in ((lo, 1.0 - frac), (hi, frac)):
        inside = (idx >= 0) & (idx < n)
        taps.append((np.clip(idx, 0, n - 1), np.where(inside, wt, 0.0)))
    return taps


def _interp_rows(volume: np.ndarray, h: int, w: int, s: int) -> np.ndarray:
    """Bilinear sample of the (h, w) axes at (i/s, j/s) -> [T, h, w, W'_s] in float64."""
    _, hs, ws, _ = volume.shape
    ty = _axis_taps(np.arange(h) / s, hs)
    tx = _axis_taps(np.arange(w) / s, ws)
    out = 0.0
    for iy, wy in ty:
        for ix, wx in tx:
            wt = (wy[:, None] * wx[None, :])[None, :, :, None]
            out = out + wt * volume[:, iy[:, None], ix[None, :], :].astype(np.float64)
    return out


def _interp_last_axis(rows: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Linear sample of rows [T, h, w, n] at positions [T, h, w], zero outside."""
    n = rows.shape[-1]
    out = 0.0
    for idx, wt in _axis_taps(pos, n):
        out = out + wt * np.take_along_axis(rows, idx[..., None], axis=-1)[..., 0]
    return out.astype(DTYPE)
