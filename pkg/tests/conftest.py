"""テスト共通のフィクスチャ

CPUで数秒以内に動く極小バックボーン (2レベル、時間アテンション4層) を使います。
"""
import numpy as np
import pytest
import torch

from src.backbone.codec import LinearPixelCodec
from src.backbone.model import BackboneConfig, build_denoiser
from src.data_synth.rendering import PixelVideo
from src.data_synth.trajectories import linear_trajectory
from src.diffusion.schedule import build_schedule

TINY_BACKBONE = dict(channels=(8, 16), heads=2, emb_dim=16, groups=4, num_classes=2, max_frames=32)


@pytest.fixture
def tiny_config() -> BackboneConfig:
    return BackboneConfig(**TINY_BACKBONE)


@pytest.fixture
def denoiser(tiny_config):
    """float64の極小デノイザー (勾配の数値検証用)"""
    return build_denoiser(tiny_config, dtype=torch.float64)


@pytest.fixture
def codec() -> LinearPixelCodec:
    return LinearPixelCodec(4, dtype=torch.float64)


@pytest.fixture
def schedule():
    return build_schedule(10)


@pytest.fixture
def short_trajectory():
    """4フレーム・16x16で画素境界にそろう左→右の軌跡"""
    return linear_trajectory((0.25, 0.5), (0.625, 0.5), 4, 0.25, 0.25)


@pytest.fixture
def static_video() -> PixelVideo:
    rng = np.random.default_rng(3)
    frame = rng.uniform(0.0, 1.0, size=(3, 1, 16, 16)).astype(np.float32)
    return PixelVideo(data=np.repeat(frame, 4, axis=1))


@pytest.fixture
def random_latent():
    generator = torch.Generator().manual_seed(7)
    return torch.randn(4, 4, 16, 16, generator=generator, dtype=torch.float64)
