"""Multimodal fusion toolkit: attentive pooling, attention fusion, MINE regularisation."""

import json as _json

from . import mmeb
from ._mmfuse import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    InsufficientBatchError,
    NumericError,
    asp_pool,
    asp_scores,
    at_fusion,
    concat_fusion,
    dv_lower_bound,
    encode_record,
    fit_mine,
    gaussian_mi,
    gaussian_pairs,
    gen_synthetic,
    gmu_fusion,
    gradcheck_suite,
    load_dataset,
    max_pool,
    mean_pool,
    mfb_fusion,
    mfh_fusion,
    read_record,
    run_cli,
    step_lr,
    utterance_aggregate,
    write_record,
)
from ._mmfuse import compute_metrics as _compute_metrics
from ._mmfuse import default_config as _default_config
from ._mmfuse import train_report as _train_report

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "InsufficientBatchError",
    "NumericError",
    "asp_pool",
    "asp_scores",
    "at_fusion",
    "compute_metrics",
    "concat_fusion",
    "default_config",
    "dv_lower_bound",
    "encode_record",
    "fit_mine",
    "gaussian_mi",
    "gaussian_pairs",
    "gen_synthetic",
    "gmu_fusion",
    "gradcheck_suite",
    "load_dataset",
    "max_pool",
    "mean_pool",
    "mfb_fusion",
    "mfh_fusion",
    "mmeb",
    "read_record",
    "run_cli",
    "step_lr",
    "train",
    "utterance_aggregate",
    "write_record",
]


def compute_metrics(tp, fp, tn, fn):
    """Precision, recall, F1, accuracy and specificity in percent."""
    return _json.loads(_compute_metrics(tp, fp, tn, fn))


def default_config():
    """Default training configuration as a dict."""
    return _json.loads(_default_config())


def train(manifest, **config):
    """Multi-run training on a manifest; keyword arguments override default_config()."""
    return _json.loads(_train_report(str(manifest), _json.dumps(config)))
