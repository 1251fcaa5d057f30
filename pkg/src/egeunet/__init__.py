"""Lightweight lesion segmentation on a small numpy reverse-mode autodiff core."""

from .analysis import cost_report, count_flops, count_params, gradcheck, gradcheck_suite
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .estimator import EGEUNetSegmenter
from .model import EGEUNet, ModelConfig, build, forward

__all__ = [
    "EGEUNet", "EGEUNetSegmenter", "ModelConfig", "RunConfig", "build", "cost_report", "count_flops",
    "count_params", "forward", "gradcheck", "gradcheck_suite", "load_checkpoint", "load_config",
    "parse_config", "save_checkpoint",
]
