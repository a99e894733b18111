"""Diffusion models for ambiguous segmentation."""

from ._ambiseg import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    ShapeError,
    UsageError,
    coefficients,
    dice,
    gamma,
    ged,
    generate,
    iou,
    log_snr,
    oracle_ged,
    postprocess,
    read_dataset,
    run_cli,
    snr,
    weight,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DomainError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "coefficients",
    "dice",
    "gamma",
    "ged",
    "generate",
    "iou",
    "log_snr",
    "oracle_ged",
    "postprocess",
    "read_dataset",
    "run_cli",
    "snr",
    "weight",
]
