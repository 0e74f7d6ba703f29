"""エンコーダー/デコーダーモジュール

ピクセル動画と潜在変数の相互変換を提供します。
既定のコーデックは画素ごとの線形射影 (3→4チャネル、直交列) で、逆写像は転置です。
"""
from typing import Protocol, Union

import numpy as np
import torch

from src.data_synth.rendering import PixelVideo
from src.exceptions import ShapeMismatchError


class VideoCodec(Protocol):
    """差し替え可能なエンコーダー/デコーダー"""

    latent_channels: int

    def encode(self, video: Union[PixelVideo, torch.Tensor]) -> torch.Tensor:
        ...

    def decode(self, z: torch.Tensor) -> PixelVideo:
        ...


class LinearPixelCodec:
    """画素ごとの線形コーデック

    encode: z = A·(2x − 1)、decode: x = clip((Aᵀz + 1) / 2, 0, 1)。
    A は ``seed`` から生成した直交列を持つ [latent_channels, 3] 行列で、AᵀA = I です。
    """

    def __init__(self, latent_channels: int = 4, seed: int = 0, dtype: torch.dtype = torch.float32):
        if latent_channels < 3:
            raise ValueError(f"潜在チャネル数は3以上である必要があります: {latent_channels}")
        self.latent_channels = latent_channels
        self.seed = seed
        self.dtype = dtype
        generator = torch.Generator().manual_seed(seed)
        gaussian = torch.randn(latent_channels, 3, generator=generator, dtype=torch.float64)
        q, _ = torch.linalg.qr(gaussian)
        self.matrix = q.to(dtype)

    def to(self, dtype: torch.dtype) -> "LinearPixelCodec":
        return LinearPixelCodec(self.latent_channels, self.seed, dtype)

    def encode(self, video: Union[PixelVideo, torch.Tensor]) -> torch.Tensor:
        """ピクセル動画 [3, F, H, W] (またはバッチ [B, 3, F, H, W]) を潜在変数に変換"""
        data = video.data if isinstance(video, PixelVideo) else video
        x = torch.as_tensor(data).to(self.dtype)
        if x.dim() not in (4, 5) or x.shape[-4] != 3:
            raise ShapeMismatchError("ピクセル動画は[3, F, H, W]である必要があります", actual=x.shape)
        return torch.einsum("lc,...cfhw->...lfhw", self.matrix.to(x.dtype), 2.0 * x - 1.0)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-4] != self.latent_channels:
            raise ShapeMismatchError("潜在チャネル数が一致しません", expected=(self.latent_channels,), actual=z.shape)
        x = torch.einsum("lc,...lfhw->...cfhw", self.matrix.to(z.dtype), z)
        return ((x + 1.0) / 2.0).clamp(0.0, 1.0)

    def decode(self, z: torch.Tensor, fps: int = 8) -> PixelVideo:
        """潜在変数 [C, F, H, W] をピクセル動画に変換"""
        x = self.decode_tensor(z.detach())
        return PixelVideo(data=x.cpu().numpy().astype(np.float32), fps=fps)
