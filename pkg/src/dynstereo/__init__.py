"""Temporally consistent stereo disparity estimation for videos."""

from __future__ import annotations

from .data import DisparitySequence, StereoVideo
from .metrics import MetricsReport, evaluate, sequence_loss, tepe
from .pipeline import InferenceConfig, forward, infer_video, plan_windows, predict_clip
from .weights import ModelConfig, ModelWeights, init_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "DisparitySequence",
    "InferenceConfig",
    "MetricsReport",
    "ModelConfig",
    "ModelWeights",
    "StereoVideo",
    "evaluate",
    "forward",
    "infer_video",
    "init_weights",
    "load_weights",
    "plan_windows",
    "predict_clip",
    "save_weights",
    "sequence_loss",
    "tepe",
]
