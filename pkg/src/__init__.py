"""動きガイダンスモジュール

学習不要の動き軌跡ガイダンスによる動画生成のツールキットです。
"""
from .exceptions import (
    MotionGuidanceError,
    ConfigurationError,
    ValidationError,
    ShapeMismatchError,
    TrajectoryError,
    ContainerFormatError,
    CheckpointError,
    NonFiniteError,
    TrainingDivergenceError,
    StructureMismatchError,
    GenerationError,
)
from .payloads import Box, TrajectorySpec, MotionSpec, KeyPoint, PointPath, parse_key_points
from .config import RunConfig
from .logger import setup_logger

__all__ = [
    "MotionGuidanceError",
    "ConfigurationError",
    "ValidationError",
    "ShapeMismatchError",
    "TrajectoryError",
    "ContainerFormatError",
    "CheckpointError",
    "NonFiniteError",
    "TrainingDivergenceError",
    "StructureMismatchError",
    "GenerationError",
    "Box",
    "TrajectorySpec",
    "MotionSpec",
    "KeyPoint",
    "PointPath",
    "parse_key_points",
    "RunConfig",
    "setup_logger",
]
