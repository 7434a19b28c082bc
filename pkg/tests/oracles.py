"""Brute-force reference computations used by the acceptance suite."""

from __future__ import annotations

import math

import numpy as np


def correlation(fl, fr):
    t, d, h, w = fl.shape
    out = np.zeros((t, h, w, w))
    for a in range(t):
        for i in range(h):
            for j in range(w):
                for k in range(w):
                    out[a, i, j, k] = sum(float(fl[a, c, i, j]) * float(fr[a, c, i, k]) for c in range(d))
    return out / math.sqrt(d)


def block_mean(vol, s):
    t, h, w, w2 = vol.shape
    out = np.zeros((t, -(-h // s), -(-w // s), -(-w2 // s)))
    for a in range(t):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                for k in range(out.shape[3]):
                    out[a, i, j, k] = vol[a, i * s : i * s + s, j * s : j * s + s, k * s : k * s + s].mean()
    return out


def softmax_attention(q, k, v):
    n, heads, dh = q.shape
    out = np.zeros(q.shape)
    for hd in range(heads):
        for i in range(n):
            scores = np.array([float(q[i, hd] @ k[j, hd]) / math.sqrt(dh) for j in range(k.shape[0])])
            p = np.exp(scores - scores.max())
            p /= p.sum()
            out[i, hd] = sum(p[j] * v[j, hd].astype(np.float64) for j in range(k.shape[0]))
    return out


def linear_attention_weights(q, k):
    """Explicit [N, N] weight matrix of elu+1 kernel attention for one head."""
    phi = lambda x: x + 1.0 if x > 0 else math.exp(x)  # noqa: E731
    n = q.shape[0]
    w = np.zeros((n, k.shape[0]))
    for i in range(n):
        for j in range(k.shape[0]):
            w[i, j] = sum(phi(float(a)) * phi(float(b)) for a, b in zip(q[i], k[j]))
        w[i] /= w[i].sum()
    return w


def sequence_loss(preds, g, valid, gamma):
    total = 0.0
    m_total = len(preds)
    for m, p in enumerate(preds, start=1):
        for idx in zip(*np.nonzero(valid)):
            total += gamma ** (m_total - m) * abs(float(np.float32(p[idx])) - float(np.float32(g[idx])))
    return total


def tepe_per_pixel(p, g, valid):
    t, h, w = g.shape
    vals = {}
    for i in range(h):
        for j in range(w):
            terms = [((p[a, i, j] - p[a + 1, i, j]) - (g[a, i, j] - g[a + 1, i, j])) ** 2
                     for a in range(t - 1) if valid[a, i, j] and valid[a + 1, i, j]]
            if terms:
                vals[i, j] = math.sqrt(sum(terms))
    return vals
