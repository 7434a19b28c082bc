"""Dense float32 kernels shared by every stage of the network.

Arrays are plain ``numpy.ndarray`` in row-major order with dtype float32.
Functions never modify their inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32

# Reductions longer than this are accumulated in float64.
WIDE_ACCUMULATION_THRESHOLD = 4096


class ShapeError(ValueError):
    """Raised when array extents do not fit an operation."""


def as_tensor(x, ndim: int | None = None, name: str = "input") -> np.ndarray:
    """Return ``x`` as a float32 array, validating rank and extents."""
    arr = np.asarray(x, dtype=DTYPE)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected rank {ndim}, got shape {arr.shape}")
    if arr.size == 0 or any(s < 1 for s in arr.shape):
        raise ShapeError(f"{name}: all extents must be >= 1, got {arr.shape}")
    return arr


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] > WIDE_ACCUMULATION_THRESHOLD:
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)
    return a @ b


def _conv_nd(x: np.ndarray, w: np.ndarray, bias, stride: Sequence[int], padding: Sequence[int]) -> np.ndarray:
    """Cross-correlation over the trailing ``n`` axes of a batched input [N, C, *S]."""
    n = w.ndim - 2
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"channel dimension mismatch: input has {x.shape[1]} channels, kernel expects {w.shape[1]}"
        )
    ksize = w.shape[2:]
    pad = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x, pad) if any(padding) else x
    out_sp = []
    for axis, (size, k, s) in enumerate(zip(xp.shape[2:], ksize, stride)):
        extent = (size - k) // s + 1
        if size < k or extent < 1:
            raise ShapeError(f"spatial dimension {axis}: extent {size} (padded) too small for kernel {k}")
        out_sp.append(extent)
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + n)))
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    win = win[(slice(None), slice(None)) + tuple(slice(0, e) for e in out_sp)]
    # win: [N, C, *out, *k] -> cols: [N, C * prod(k), prod(out)], output axes innermost
    perm = (0, 1) + tuple(range(2 + n, 2 + 2 * n)) + tuple(range(2, 2 + n))
    cols = win.transpose(perm).reshape(x.shape[0], -1, int(np.prod(out_sp)))
    out = _matmul(w.reshape(w.shape[0], -1), cols)
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE)[:, None]
    out = out.reshape((x.shape[0], w.shape[0], *out_sp))
    return np.ascontiguousarray(out, dtype=DTYPE)


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2D cross-correlation with zero padding.

    ``x`` is [C, H, W] or batched [N, C, H, W]; ``kernel`` is [O, C, kh, kw].
    Output extents are ``(H + 2 * padding - kh) // stride + 1`` (same for W).
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = as_tensor(kernel, 4, "kernel")
    if x.ndim not in (3, 4):
        raise ShapeError(f"input: expected [C,H,W] or [N,C,H,W], got shape {x.shape}")
    single = x.ndim == 3
    xb = x[None] if single else x
    out = _conv_nd(xb, kernel, bias, (stride, stride), (padding, padding))
    return out[0] if single else out


def conv3d(x, kernel, bias=None, padding: Sequence[int] | None = None) -> np.ndarray:
    """3D cross-correlation over (T, H, W), stride 1.

    ``x`` is [C, T, H, W] or [N, C, T, H, W]; ``kernel`` is [O, C, kt, kh, kw].
    Default padding keeps extents unchanged for odd kernels.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = as_tensor(kernel, 5, "kernel")
    if x.ndim not in (4, 5):
        raise ShapeError(f"input: expected [C,T,H,W] or [N,C,T,H,W], got shape {x.shape}")
    if padding is None:
        padding = tuple(k // 2 for k in kernel.shape[2:])
    single = x.ndim == 4
    xb = x[None] if single else x
    out = _conv_nd(xb, kernel, bias, (1, 1, 1), tuple(padding))
    return out[0] if single else out


SEPARABLE_EXTENTS = ((1, 1, 5), (5, 1, 1), (1, 5, 5))


def conv3d_separable(x, kernels: Sequence[np.ndarray], biases: Sequence | None = None) -> np.ndarray:
    """Apply three factored 3D convolutions in sequence, each with same-padding.

    The factors have (T, H, W) extents (1, 1, 5), (5, 1, 1) and (1, 5, 5).
    """
    if len(kernels) != 3:
        raise ShapeError(f"expected 3 kernel factors, got {len(kernels)}")
    biases = biases if biases is not None else (None,) * 3
    out = np.asarray(x, dtype=DTYPE)
    for i, (k, b, ext) in enumerate(zip(kernels, biases, SEPARABLE_EXTENTS)):
        k = as_tensor(k, 5, f"kernel[{i}]")
        if tuple(k.shape[2:]) != ext:
            raise ShapeError(f"kernel[{i}]: expected extents {ext}, got {tuple(k.shape[2:])}")
        out = conv3d(out, k, b)
    return out


def avg_pool2d(x, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor`` x ``factor`` blocks of the last two axes."""
    x = np.asarray(x, dtype=DTYPE)
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"extents ({h}, {w}) not divisible by pooling factor {factor}; pad first")
    blocks = x.reshape(*x.shape[:-2], h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1), dtype=np.float64).astype(DTYPE)


def avg_pool_ceil(x, factor: int, axes: Sequence[int]) -> np.ndarray:
    """Block mean along ``axes``; trailing partial blocks average the entries they hold."""
    out = np.asarray(x, dtype=np.float64)
    for ax in axes:
        ax = ax % out.ndim
        n = out.shape[ax]
        starts = np.arange(0, n, factor)
        sums = np.add.reduceat(out, starts, axis=ax)
        counts = np.minimum(starts + factor, n) - starts
        shape = [1] * out.ndim
        shape[ax] = len(counts)
        out = sums / counts.reshape(shape)
    return out.astype(DTYPE)


def linear_sample(volume, coords) -> np.ndarray:
    """Multilinear interpolation of the trailing ``n`` axes of ``volume``.

    ``coords`` has shape [..., n] with fractional indices. Corners outside the
    volume contribute zero, so points fully outside sample to 0. Leading axes
    of ``volume`` (before the sampled ones) must match the leading axes of
    ``coords``.
    """
    volume = np.asarray(volume, dtype=DTYPE)
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[-1]
    spatial = volume.shape[-n:]
    lead = volume.shape[:-n]
    if coords.shape[: len(lead)] != lead:
        raise ShapeError(f"coords leading shape {coords.shape[:len(lead)]} does not match volume {lead}")
    base = np.floor(coords)
    frac = coords - base
    base = base.astype(np.int64)
    lead_idx = np.indices(coords.shape[:-1], sparse=True)[: len(lead)]
    out = np.zeros(coords.shape[:-1], dtype=np.float64)
    for corner in range(1 << n):
        weight = np.ones(coords.shape[:-1], dtype=np.float64)
        idx = []
        inside = np.ones(coords.shape[:-1], dtype=bool)
        for a in range(n):
            bit = (corner >> a) & 1
            i = base[..., a] + bit
            weight = weight * (frac[..., a] if bit else 1.0 - frac[..., a])
            inside &= (i >= 0) & (i < spatial[a])
            idx.append(np.clip(i, 0, spatial[a] - 1))
        vals = volume[tuple(lead_idx) + tuple(idx)]
        out += np.where(inside, weight * vals, 0.0)
    return out.astype(DTYPE)


def bilinear_sample(image, coords) -> np.ndarray:
    """Bilinear interpolation of [..., H, W] at fractional (y, x) pairs [..., 2]."""
    return linear_sample(image, coords)


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(DTYPE)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0).astype(DTYPE, copy=False)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # numerically safe for large |x|
    return (0.5 * (np.tanh(0.5 * x) + 1.0)).astype(DTYPE)


def gelu(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return (0.5 * x * (1.0 + np.tanh(0.7978845608 * (x + 0.044715 * x**3)))).astype(DTYPE)


def layer_norm(x, eps: float = 1e-5) -> np.ndarray:
    """Normalize the last axis to zero mean and unit variance (no affine terms)."""
    x = np.asarray(x, dtype=DTYPE)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return ((x - mu) / np.sqrt(var + eps)).astype(DTYPE)


def instance_norm(x, eps: float = 1e-5) -> np.ndarray:
    """Normalize each channel of [N, C, H, W] over its spatial extent."""
    x = np.asarray(x, dtype=DTYPE)
    mu = x.mean(axis=(-2, -1), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(-2, -1), keepdims=True)
    return ((x - mu) / np.sqrt(var + eps)).astype(DTYPE)


def _lerp_axis_upsample(x: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    pos = (np.arange(n * factor) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    t = (pos - lo).astype(DTYPE)
    shape = [1] * x.ndim
    shape[axis] = -1
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    # a + t*(b - a) keeps constant fields exact
    return a + t.reshape(shape) * (b - a)


def upsample_bilinear(x, factor: int) -> np.ndarray:
    """Half-pixel-aligned bilinear upsampling of the last two axes with edge clamping."""
    x = np.asarray(x, dtype=DTYPE)
    out = _lerp_axis_upsample(x, factor, x.ndim - 2)
    return _lerp_axis_upsample(out, factor, x.ndim - 1).astype(DTYPE)


def pad_edge(x, pad_h: int, pad_w: int) -> np.ndarray:
    """Replicate the bottom/right border so the last two extents grow by the given amounts."""
    x = np.asarray(x, dtype=DTYPE)
    if not pad_h and not pad_w:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)]
    return np.pad(x, widths, mode="edge")
