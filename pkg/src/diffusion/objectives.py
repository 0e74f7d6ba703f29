"""学習目的関数モジュール

ε予測の二乗誤差 (サンプルごとに要素和、バッチで平均) を計算します。
"""
import math
from typing import Callable, Optional

import torch

from src.exceptions import NonFiniteError, ValidationError
from .schedule import NoiseSchedule

# (z_t [B,...], t [B], y [B]) -> ε̂ [B,...]
BatchDenoiser = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def training_loss(
    denoiser: BatchDenoiser,
    z0: torch.Tensor,
    y: torch.Tensor,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """E_{t,ε} ‖ε − ε_θ(z_t, t, y)‖²₂ のミニバッチ推定

    tは {1..T} から一様に、εは標準正規分布からサンプリングします。
    ノルムは1サンプルの全要素にわたる和で、バッチ方向に平均します
    (出力0のデノイザーなら損失は要素数に近くなります)。

    Args:
        denoiser: バッチ入力のデノイザー
        z0: クリーンな潜在変数 [B, C, F, H, W]
        y: 条件ラベル [B]
        schedule: ノイズスケジュール
        generator: 乱数生成器 (再現性のため)

    Raises:
        NonFiniteError: 損失が非有限の場合
    """
    if z0.shape[0] == 0:
        raise ValidationError("バッチが空です", field="batch")
    batch = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (batch,), generator=generator)
    noise = torch.randn(z0.shape, generator=generator, dtype=z0.dtype).to(z0.device)

    a = schedule.alphas_cumprod[t].to(dtype=z0.dtype, device=z0.device)
    a = a.view(batch, *([1] * (z0.dim() - 1)))
    z_t = a.sqrt() * z0 + (1.0 - a).sqrt() * noise

    prediction = denoiser(z_t, t.to(z0.device), y)
    loss = (noise - prediction).pow(2).flatten(1).sum(dim=1).mean()
    if not torch.isfinite(loss):
        raise NonFiniteError(
            f"学習損失が非有限です (t={t.tolist()}, 予測の最大絶対値={prediction.detach().abs().max().item()})"
        )
    return loss


def oracle_noise(z_t: torch.Tensor, z0: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    """z_t と z0 から注入されたノイズを逆算 (テスト・診断用)"""
    a = schedule.alpha_bar(t)
    return (z_t - math.sqrt(a) * z0) / math.sqrt(1.0 - a)
