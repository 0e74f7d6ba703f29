"""フレーム間類似度モジュール

バックボーンの時間アテンション特徴をフレームごとにプーリングし、
連続するフレーム間のコサイン類似度を平均します。
"""
import math
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

from src.backbone.codec import VideoCodec
from src.backbone.model import ToyVideoDenoiser
from src.backbone.taps import FeatureVolume, TapSet
from src.data_synth.rendering import PixelVideo
from src.exceptions import ValidationError
from src.payloads import TrajectorySpec

TapsProvider = Callable[[PixelVideo], TapSet]


class BackboneFeatureProvider:
    """動画をエンコードしてヌル条件で1回フォワードし、タップした特徴を返す"""

    def __init__(
        self,
        denoiser: ToyVideoDenoiser,
        codec: VideoCodec,
        t_prime: int = 1,
        layer_ids: Optional[Sequence[int]] = None,
    ):
        self.denoiser = denoiser
        self.codec = codec
        self.t_prime = t_prime
        self.layer_ids = layer_ids

    def __call__(self, video: PixelVideo) -> TapSet:
        z = self.codec.encode(video).to(self.denoiser.dtype)
        with torch.no_grad():
            _, taps = self.denoiser.denoise_with_taps(z, self.t_prime, None, self.layer_ids)
        return taps.detach()


def _pool(volume: FeatureVolume, crop: Optional[TrajectorySpec], height: int, width: int) -> torch.Tensor:
    data = volume.data
    if crop is None:
        return data.mean(dim=(2, 3)).transpose(0, 1)

    grid_h, grid_w = volume.grid_size
    pooled = []
    for frame, box in enumerate(crop.boxes):
        x0, y0, x1, y1 = box.to_pixels(height, width)
        j0 = max(math.floor(y0 * grid_h / height), 0)
        j1 = min(math.ceil(y1 * grid_h / height), grid_h)
        k0 = max(math.floor(x0 * grid_w / width), 0)
        k1 = min(math.ceil(x1 * grid_w / width), grid_w)
        if j1 <= j0 or k1 <= k0:
            raise ValidationError(f"切り出し範囲が空です (フレーム{frame})", field="crop")
        pooled.append(data[:, frame, j0:j1, k0:k1].mean(dim=(1, 2)))
    return torch.stack(pooled)


def frame_similarity(
    video: PixelVideo,
    taps_provider: TapsProvider,
    crop: Optional[TrajectorySpec] = None,
) -> float:
    """連続フレーム間の特徴コサイン類似度の平均

    Args:
        video: 評価する動画 (F ≥ 2)
        taps_provider: 動画からタップ特徴を返す関数
        crop: 指定時は各フレームのボックス内だけをプーリング

    Raises:
        ValidationError: フレーム数が不足、または切り出し範囲が空の場合
    """
    if video.num_frames < 2:
        raise ValidationError(f"フレーム類似度には2フレーム以上が必要です: {video.num_frames}", field="num_frames")
    if crop is not None and crop.num_frames != video.num_frames:
        raise ValidationError("切り出し軌跡と動画のフレーム数が一致しません", field="crop")

    taps = taps_provider(video)
    scores = []
    for volume in taps:
        pooled = _pool(volume, crop, video.height, video.width)
        scores.append(F.cosine_similarity(pooled[:-1], pooled[1:], dim=1).mean())
    return float(torch.stack(scores).mean())
