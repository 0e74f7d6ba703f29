"""合成データモジュール

移動図形の動画コーパス、ボックス軌跡の参照動画、テンソルコンテナを提供します。
"""
from .container import write_container, read_container, read_metadata
from .rendering import (
    PixelVideo,
    generate_moving_shape_video,
    synthesize_box_reference,
    box_center_pixels,
    box_pixel_extent,
)
from .trajectories import benchmark_trajectories, linear_trajectory, static_trajectory
from .corpus import CorpusConfig, ShapeCorpus, build_corpus, SHAPE_CLASSES

__all__ = [
    "write_container",
    "read_container",
    "read_metadata",
    "PixelVideo",
    "generate_moving_shape_video",
    "synthesize_box_reference",
    "box_center_pixels",
    "box_pixel_extent",
    "benchmark_trajectories",
    "linear_trajectory",
    "static_trajectory",
    "CorpusConfig",
    "ShapeCorpus",
    "build_corpus",
    "SHAPE_CLASSES",
]
