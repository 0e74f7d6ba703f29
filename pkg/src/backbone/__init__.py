"""バックボーンモジュール

時間アテンションの出力をタップできるトイ3Dデノイザーと、その学習・保存を提供します。
"""
from .model import BackboneConfig, ToyVideoDenoiser, build_denoiser
from .taps import FeatureVolume, TapSet, FeatureTaps
from .codec import VideoCodec, LinearPixelCodec
from .training import TrainConfig, TrainResult, train_toy_backbone
from .checkpoint import save_checkpoint, load_checkpoint, content_hash

__all__ = [
    "BackboneConfig",
    "ToyVideoDenoiser",
    "build_denoiser",
    "FeatureVolume",
    "TapSet",
    "FeatureTaps",
    "VideoCodec",
    "LinearPixelCodec",
    "TrainConfig",
    "TrainResult",
    "train_toy_backbone",
    "save_checkpoint",
    "load_checkpoint",
    "content_hash",
]
