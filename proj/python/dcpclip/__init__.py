"""Open-vocabulary segmentation with dynamic category pre-filtering."""

from ._core import (
    AblationFlags,
    ConfigError,
    DomainError,
    Error,
    FormatError,
    Model,
    NonFiniteError,
    RunConfig,
    Scene,
    ShapeError,
    TextEmbeddings,
    VisualFeatures,
    Workbench,
    cli,
    compute_miou,
    encode_text,
    gradient_suite,
    parse_config,
)

__all__ = [
    "AblationFlags",
    "ConfigError",
    "DomainError",
    "Error",
    "FormatError",
    "Model",
    "NonFiniteError",
    "RunConfig",
    "Scene",
    "ShapeError",
    "TextEmbeddings",
    "VisualFeatures",
    "Workbench",
    "cli",
    "compute_miou",
    "encode_text",
    "gradient_suite",
    "parse_config",
]
