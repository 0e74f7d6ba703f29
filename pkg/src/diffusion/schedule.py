"""ノイズスケジュールモジュール

β/α/ᾱ のテーブルと前方ノイズ付加を提供します。
"""
import math
from dataclasses import dataclass
from typing import List

import torch

from src.exceptions import ShapeMismatchError, ValidationError

SCHEDULE_KINDS = ("linear", "cosine")
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """ノイズスケジュール

    テーブルは長さ T+1 で、インデックス0はクリーンな状態 (β_0=0, ᾱ_0=1) を表します。
    構築後は不変なので、複数のサンプリングから同時に参照できます。
    """
    T: int
    kind: str
    betas: torch.Tensor
    alphas: torch.Tensor
    alphas_cumprod: torch.Tensor

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValidationError(f"タイムステップが範囲外です: {t} (T={self.T})", field="t")
        return float(self.alphas_cumprod[t])

    def to_record(self) -> dict:
        return {"SCHEDULE_T": str(self.T), "SCHEDULE_KIND": self.kind}


def linear_betas(T: int) -> torch.Tensor:
    """線形スケジュール (1000ステップ相当の範囲をTに合わせてスケール)"""
    scale = 1000.0 / T
    betas = torch.linspace(scale * 1e-4, scale * 0.02, T, dtype=torch.float64)
    return betas.clamp(max=MAX_BETA)


def cosine_betas(T: int, s: float = 0.008) -> torch.Tensor:
    """コサインスケジュール (ᾱ(t) を離散化)"""
    def alpha_bar(u: float) -> float:
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    betas = [min(1 - alpha_bar((i + 1) / T) / alpha_bar(i / T), MAX_BETA) for i in range(T)]
    return torch.tensor(betas, dtype=torch.float64)


def build_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    """ノイズスケジュールを構築

    Args:
        T: 最大タイムステップ (2以上)
        kind: "linear" または "cosine"

    Returns:
        ᾱ が厳密に単調減少するスケジュール
    """
    if T < 2:
        raise ValidationError(f"Tは2以上である必要があります: {T}", field="T")
    if kind not in SCHEDULE_KINDS:
        raise ValidationError(f"未知のスケジュール種別です: {kind}", field="kind")

    betas = linear_betas(T) if kind == "linear" else cosine_betas(T)
    betas = torch.cat([torch.zeros(1, dtype=torch.float64), betas])
    alphas = 1.0 - betas
    alphas_cumprod = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(T=T, kind=kind, betas=betas, alphas=alphas, alphas_cumprod=alphas_cumprod)


def timestep_grid(T: int, steps: int) -> List[int]:
    """1..T から等間隔に選んだ昇順のタイムステップ列 (最後は必ずT)"""
    if not 0 <= steps <= T:
        raise ValidationError(f"ステップ数は0以上T以下です: {steps} (T={T})", field="steps")
    return [int(math.floor(k * T / steps + 0.5)) for k in range(1, steps + 1)]


def add_noise(z0: torch.Tensor, t: int, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε

    t=0 (ᾱ_0=1) ではz0をそのまま返します。
    """
    if z0.shape != noise.shape:
        raise ShapeMismatchError("ノイズの形状が潜在変数と一致しません", expected=z0.shape, actual=noise.shape)
    a = schedule.alpha_bar(t)
    return math.sqrt(a) * z0 + math.sqrt(1.0 - a) * noise
