"""Sequence loss, end-point error family and temporal consistency metrics.

All reductions run in float64 over valid pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DisparitySequence
from .tensor_kernels import DTYPE, ShapeError

DEFAULT_GAMMA = 0.9
DEFAULT_THRESHOLDS = (1.0, 3.0)


def _values(x) -> np.ndarray:
    # predictions are quantized to the float32 tensor type like the ground truth
    raw = x.values if isinstance(x, DisparitySequence) else x
    return np.asarray(raw, dtype=DTYPE).astype(np.float64)


def sequence_loss(preds: Sequence, gt: DisparitySequence, gamma: float = DEFAULT_GAMMA,
                  reduction: str = "sum") -> float:
    """sum_t sum_m gamma^(M-m) * |pred_t^(m) - gt_t|_1 over valid pixels.

    ``preds`` holds the M estimates in iteration order, each at ground-truth
    resolution. ``reduction="mean"`` divides each L1 norm by the number of
    valid pixels in that frame.
    """
    if len(preds) == 0:
        raise ValueError("sequence_loss needs at least one prediction (M = 0)")
    target = _values(gt)
    valid = gt.valid
    n_iter = len(preds)
    total = 0.0
    for m, pred in enumerate(preds, start=1):
        p = _values(pred)
        if p.shape != target.shape:
            raise ShapeError(f"prediction {m} has shape {p.shape}, ground truth {target.shape}")
        err = np.where(valid, np.abs(p - target), 0.0)
        per_frame = err.sum(axis=(1, 2))
        if reduction == "mean":
            per_frame = per_frame / np.maximum(valid.sum(axis=(1, 2)), 1)
        elif reduction != "sum":
            raise ValueError(f"unknown reduction {reduction!r}")
        total += gamma ** (n_iter - m) * per_frame.sum()
    return float(total)


def _abs_error(pred, gt: DisparitySequence) -> np.ndarray:
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return np.abs(p - g)[gt.valid]


def epe(pred, gt: DisparitySequence) -> float:
    err = _abs_error(pred, gt)
    return float(err.mean()) if err.size else 0.0


def bad_px(pred, gt: DisparitySequence, threshold: float) -> float:
    err = _abs_error(pred, gt)
    return float((err > threshold).mean()) if err.size else 0.0


def tepe_map(pred, gt: DisparitySequence) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel temporal EPE [H, W] and the mask of pixels with at least one valid frame pair.

    For each pixel: sqrt(sum_t ((p_t - p_{t+1}) - (g_t - g_{t+1}))^2), summing
    only pairs valid at both t and t+1.
    """
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    if p.shape[0] < 2:
        raise ValueError(f"temporal metrics need T >= 2 frames, got {p.shape[0]}")
    pair_valid = gt.valid[:-1] & gt.valid[1:]
    diff = (p[:-1] - p[1:]) - (g[:-1] - g[1:])
    sq = np.where(pair_valid, diff * diff, 0.0).sum(axis=0)
    return np.sqrt(sq), pair_valid.any(axis=0)


def tepe(pred, gt: DisparitySequence) -> float:
    values, mask = tepe_map(pred, gt)
    return float(values[mask].mean()) if mask.any() else 0.0


def delta_t(pred, gt: DisparitySequence, threshold: float) -> float:
    """Fraction of pixels whose per-pixel TEPE exceeds ``threshold``."""
    values, mask = tepe_map(pred, gt)
    return float((values[mask] > threshold).mean()) if mask.any() else 0.0


@dataclass
class MetricsReport:
    epe: float
    tepe: float | None
    bad_px: dict[float, float] = field(default_factory=dict)
    delta_t: dict[float, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float | None, float]]:
        """(name, threshold, value) in stable order."""
        out = [("epe", None, self.epe)]
        out += [("bad_px", t, v) for t, v in sorted(self.bad_px.items())]
        if self.tepe is not None:
            out.append(("tepe", None, self.tepe))
        out += [("delta_t", t, v) for t, v in sorted(self.delta_t.items())]
        return out

    def to_flat_text(self) -> str:
        """``key = value`` lines, e.g. ``bad_px@3 = 0.0125``."""
        lines = []
        for name, thr, value in self.rows():
            key = name if thr is None else f"{name}@{thr!r}"
            lines.append(f"{key} = {value!r}")
        return "\n".join(lines) + "\n"

    def to_table_text(self) -> str:
        """Tab-separated ``name threshold value`` lines; ``-`` marks no threshold."""
        lines = ["name\tthreshold\tvalue"]
        for name, thr, value in self.rows():
            lines.append(f"{name}\t{'-' if thr is None else repr(thr)}\t{value!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def _from_rows(cls, rows) -> "MetricsReport":
        report = cls(epe=float("nan"), tepe=None)
        for name, thr, value in rows:
            if name == "epe":
                report.epe = value
            elif name == "tepe":
                report.tepe = value
            elif name in ("bad_px", "delta_t"):
                getattr(report, name)[thr] = value
            else:
                raise ValueError(f"unknown metric {name!r}")
        return report

    @classmethod
    def from_flat_text(cls, text: str) -> "MetricsReport":
        rows = []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            name, _, thr = key.strip().partition("@")
            rows.append((name, float(thr) if thr else None, float(value)))
        return cls._from_rows(rows)

    @classmethod
    def from_table_text(cls, text: str) -> "MetricsReport":
        rows = []
        for line in text.splitlines()[1:]:
            if not line.strip():
                continue
            name, thr, value = line.split("\t")
            rows.append((name, None if thr == "-" else float(thr), float(value)))
        return cls._from_rows(rows)


def evaluate(pred, gt: DisparitySequence, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> MetricsReport:
    """EPE, bad-pixel rates, TEPE and delta_t for each threshold (temporal terms need T >= 2)."""
    thresholds = [float(t) for t in thresholds]
    temporal = _values(pred).shape[0] >= 2
    return MetricsReport(
        epe=epe(pred, gt),
        tepe=tepe(pred, gt) if temporal else None,
        bad_px={t: bad_px(pred, gt, t) for t in thresholds},
        delta_t={t: delta_t(pred, gt, t) for t in thresholds} if temporal else {},
    )
