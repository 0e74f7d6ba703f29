"""相関パターンモジュール

キーポイントの写像・追跡と、温度付きソフトマックスによる相関パターン抽出を提供します。
"""
from .pattern import (
    CorrelationPattern,
    PatternBundle,
    PatternKey,
    TEMPERATURE_MODES,
    extract_pattern,
    extract_matching_bundle,
)
from .tracking import PointTrack, map_point_to_grid, track_point, track_from_path
from .reference import bundle_from_taps, reference_pattern

__all__ = [
    "CorrelationPattern",
    "PatternBundle",
    "PatternKey",
    "TEMPERATURE_MODES",
    "extract_pattern",
    "extract_matching_bundle",
    "PointTrack",
    "map_point_to_grid",
    "track_point",
    "track_from_path",
    "bundle_from_taps",
    "reference_pattern",
]
