"""Divided space / stereo / time attention over the stride-16 features."""

from __future__ import annotations

import math

import numpy as np

from .tensor_kernels import DTYPE, ShapeError, gelu, layer_norm, softmax
from .weights import ModelConfig, ModelWeights


def fourier_space_encoding(h: int, w: int, d: int) -> np.ndarray:
    """sin/cos features of normalized (y, x) at geometrically spaced frequencies, [d, h, w].

    Channels are grouped per frequency as (sin y, cos y, sin x, cos x); the
    lowest frequency spans half a period across the grid, so positions are
    always distinguishable for d >= 4.
    """
    if d % 2:
        raise ShapeError(f"encoding dim must be even, got {d}")
    nf = -(-d // 4)
    top = max(h, w, 2)
    if nf > 1:
        freqs = math.pi * top ** (np.arange(nf) / (nf - 1))
    else:
        freqs = np.array([math.pi])
    y = (np.arange(h) / h)[:, None]
    x = (np.arange(w) / w)[None, :]
    chans = []
    for f in freqs:
        chans += [
            np.broadcast_to(np.sin(f * y), (h, w)),
            np.broadcast_to(np.cos(f * y), (h, w)),
            np.broadcast_to(np.sin(f * x), (h, w)),
            np.broadcast_to(np.cos(f * x), (h, w)),
        ]
    return np.stack(chans[:d]).astype(DTYPE)


def learned_time_encoding(t: int, weights: ModelWeights, name: str = "sst.time_embed") -> np.ndarray:
    """Rows of the learned time table; steps past the table reuse its last row."""
    table = weights[name]
    idx = np.minimum(np.arange(t), table.shape[0] - 1)
    return table[idx]


def _elu_feature(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0))).astype(DTYPE)


def linear_attention(q, k, v, eps: float = 1e-9) -> np.ndarray:
    """Kernelized attention with feature map elu(x) + 1.

    Inputs are [..., N, heads, dh] (keys and values may have their own N).
    """
    qf = _elu_feature(np.asarray(q, dtype=DTYPE))
    kf = _elu_feature(np.asarray(k, dtype=DTYPE))
    v = np.asarray(v, dtype=DTYPE)
    kv = np.einsum("...nhd,...nhe->...hde", kf, v)
    ksum = kf.sum(axis=-3)
    num = np.einsum("...nhd,...hde->...nhe", qf, kv)
    den = np.einsum("...nhd,...hd->...nh", qf, ksum)[..., None]
    return (num / (den + eps)).astype(DTYPE)


def quadratic_attention(q, k, v) -> np.ndarray:
    """softmax(q k^T / sqrt(dh)) v per head; inputs are [..., N, heads, dh]."""
    q = np.asarray(q, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    scores = np.einsum("...nhd,...mhd->...hnm", q, k) / np.sqrt(q.shape[-1])
    weights = softmax(scores, axis=-1)
    return np.einsum("...hnm,...mhd->...nhd", weights, np.asarray(v, dtype=DTYPE)).astype(DTYPE)


def attention_layer(x, source, weights: ModelWeights, prefix: str, heads: int, kind: str,
                    enc_x=None, enc_src=None) -> np.ndarray:
    """Pre-norm attention with residual, followed by a residual feed-forward layer.

    ``x`` is [B, N, d] (queries), ``source`` is [B, S, d]. Encodings, when
    given, are added to query and key inputs only.
    """
    nx = layer_norm(x)
    ns = nx if source is x else layer_norm(source)
    qin = nx if enc_x is None else nx + enc_x
    kin = ns if enc_src is None else ns + enc_src
    b, n, d = x.shape
    s = source.shape[1]
    q = (qin @ weights[f"{prefix}.q"]).reshape(b, n, heads, d // heads)
    k = (kin @ weights[f"{prefix}.k"]).reshape(b, s, heads, d // heads)
    v = (ns @ weights[f"{prefix}.v"]).reshape(b, s, heads, d // heads)
    if kind == "linear":
        out = linear_attention(q, k, v)
    elif kind == "quadratic":
        out = quadratic_attention(q, k, v)
    else:
        raise ValueError(f"unknown attention kind {kind!r}")
    x = x + out.reshape(b, n, d) @ weights[f"{prefix}.o"]
    hidden = gelu(layer_norm(x) @ weights[f"{prefix}.ffn1.w"] + weights[f"{prefix}.ffn1.b"])
    return (x + hidden @ weights[f"{prefix}.ffn2.w"] + weights[f"{prefix}.ffn2.b"]).astype(DTYPE)


def space_time_encoding(t: int, h: int, w: int, d: int, weights: ModelWeights, table: str) -> np.ndarray:
    """Sum of the Fourier space encoding and the learned time encoding, [T, h*w, d]."""
    pos = fourier_space_encoding(h, w, d).reshape(d, h * w).T
    return (pos[None] + learned_time_encoding(t, weights, table)[:, None, :]).astype(DTYPE)


def space_stage(x, weights, prefix, heads, enc=None):
    """Linear self-attention over the h*w tokens of every (t, view) map. x: [T, V, d, h, w]."""
    t, nv, d, h, w = x.shape
    tok = x.reshape(t * nv, d, h * w).transpose(0, 2, 1)
    e = None if enc is None else np.repeat(enc, nv, axis=0)
    out = attention_layer(tok, tok, weights, prefix, heads, "linear", e, e)
    return out.transpose(0, 2, 1).reshape(x.shape)


def cross_stage(x, weights, prefix, heads, enc=None):
    """Linear cross-attention left<->right with one set of weights for both directions."""
    t, nv, d, h, w = x.shape
    left = x[:, 0].reshape(t, d, h * w).transpose(0, 2, 1)
    right = x[:, 1].reshape(t, d, h * w).transpose(0, 2, 1)
    new_left = attention_layer(left, right, weights, prefix, heads, "linear", enc, enc)
    new_right = attention_layer(right, left, weights, prefix, heads, "linear", enc, enc)
    out = np.stack([new_left, new_right], axis=1)
    return out.transpose(0, 1, 3, 2).reshape(x.shape)


def time_stage(x, weights, prefix, heads, enc=None):
    """Quadratic self-attention across T at every (view, location). x: [T, V, d, h, w]."""
    t, nv, d, h, w = x.shape
    tok = x.transpose(1, 3, 4, 0, 2).reshape(nv * h * w, t, d)
    e = None if enc is None else np.tile(enc.transpose(1, 0, 2), (nv, 1, 1))
    out = attention_layer(tok, tok, weights, prefix, heads, "quadratic", e, e)
    return out.reshape(nv, h, w, t, d).transpose(3, 0, 4, 1, 2)


def sst_block(phi16, cfg: ModelConfig, weights: ModelWeights, use_encodings: bool = True) -> np.ndarray:
    """Apply ``cfg.sst_depth`` space -> stereo -> time repeats to [T, 2, d, H/16, W/16]."""
    x = np.asarray(phi16, dtype=DTYPE)
    if x.ndim != 5 or x.shape[1] != 2:
        raise ShapeError(f"expected [T, 2, d, h, w] stride-16 features, got {x.shape}")
    t, _, d, h, w = x.shape
    enc = space_time_encoding(t, h, w, d, weights, "sst.time_embed") if use_encodings else None
    for r in range(cfg.sst_depth):
        x = space_stage(x, weights, f"sst.{r}.space", cfg.heads, enc)
        x = cross_stage(x, weights, f"sst.{r}.cross", cfg.heads, enc)
        x = time_stage(x, weights, f"sst.{r}.time", cfg.heads, enc)
    return np.ascontiguousarray(x, dtype=DTYPE)
