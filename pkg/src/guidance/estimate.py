"""ガイド付きノイズ推定モジュール

ε̂ = ε_θ(z_t, t, y) + σ_t ∇_{z_t} L_c を1回のタップ付きフォワードで計算します。
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import torch

from src.backbone.model import ToyVideoDenoiser
from src.diffusion.ddim import cfg_noise, combine_cfg
from src.exceptions import NonFiniteError, ValidationError
from src.motion_pattern.pattern import TEMPERATURE_MODES, PatternBundle, extract_matching_bundle
from src.payloads import KeyPoint
from .loss import consistency_loss

GUIDANCE_MODES = ("reference", "trajectory")
INIT_NOISE_MODES = ("inversion", "random")

# (t, step_index) -> σ_t
SigmaSchedule = Callable[[int, int], float]


@dataclass
class GuidanceConfig:
    """動きガイダンスの設定

    ``guided_steps`` がNoneなら全サンプリングステップでガイドします。
    ``steps`` がNoneならスケジュールのT全てを使います。
    """
    sigma: float = 10000.0
    tau: float = 10.0
    guided_steps: Optional[int] = None
    steps: Optional[int] = None
    layer_ids: Optional[Tuple[int, ...]] = None
    local: Optional[int] = None
    key_points: Tuple[KeyPoint, ...] = ()
    cfg_scale: float = 12.0
    mode: str = "trajectory"
    mix_lambda: float = 1.0
    t_prime: int = 1
    temperature_mode: str = "divide"
    match_conditions: bool = False
    init_noise: str = "inversion"
    noise_seed: int = 0
    pattern_seed: int = 0
    height: int = 16
    width: int = 16
    log_interval: int = 10
    sigma_schedule: Optional[SigmaSchedule] = None

    def num_steps(self, T: int) -> int:
        return T if self.steps is None else self.steps

    def num_guided(self, T: int) -> int:
        return self.num_steps(T) if self.guided_steps is None else self.guided_steps

    def sigma_at(self, t: int, step_index: int) -> float:
        if self.sigma_schedule is None:
            return self.sigma
        return float(self.sigma_schedule(t, step_index))

    def validate(self, T: Optional[int] = None) -> None:
        """設定値を検証

        Raises:
            ValidationError: 不正な値がある場合 (全ての問題をまとめて報告)
        """
        errors: List[str] = []
        if self.sigma < 0:
            errors.append(f"sigmaは0以上である必要があります: {self.sigma}")
        if self.tau <= 0:
            errors.append(f"tauは正である必要があります: {self.tau}")
        if self.cfg_scale < 0:
            errors.append(f"cfg_scaleは0以上である必要があります: {self.cfg_scale}")
        if self.local is not None and self.local < 1:
            errors.append(f"localは1以上である必要があります: {self.local}")
        if self.guided_steps is not None and self.guided_steps < 0:
            errors.append(f"guided_stepsは0以上である必要があります: {self.guided_steps}")
        if self.steps is not None and self.steps < 1:
            errors.append(f"stepsは1以上である必要があります: {self.steps}")
        if not 0.0 <= self.mix_lambda <= 1.0:
            errors.append(f"mix_lambdaは[0, 1]である必要があります: {self.mix_lambda}")
        if self.t_prime < 1:
            errors.append(f"t_primeは1以上である必要があります: {self.t_prime}")
        if self.mode not in GUIDANCE_MODES:
            errors.append(f"未知のモードです: {self.mode}")
        if self.temperature_mode not in TEMPERATURE_MODES:
            errors.append(f"未知の温度モードです: {self.temperature_mode}")
        if self.init_noise not in INIT_NOISE_MODES:
            errors.append(f"未知の初期ノイズです: {self.init_noise}")
        if T is not None:
            steps = self.num_steps(T)
            if steps > T:
                errors.append(f"stepsはT以下である必要があります: {steps} (T={T})")
            if self.num_guided(T) > steps:
                errors.append(f"guided_stepsはサンプリングステップ数以下である必要があります: {self.num_guided(T)}")
            if self.t_prime > T:
                errors.append(f"t_primeはT以下である必要があります: {self.t_prime}")
        if errors:
            raise ValidationError("ガイダンス設定が不正です: " + "; ".join(errors), field="guidance")


@dataclass
class GuidedEstimate:
    """ガイド付きノイズ推定の結果 (noise = base + σ·gradient)"""
    noise: torch.Tensor
    base: torch.Tensor
    gradient: Optional[torch.Tensor] = None
    loss: Optional[float] = None


def guided_noise_estimate(
    denoiser: ToyVideoDenoiser,
    z_t: torch.Tensor,
    t: int,
    y: Optional[int],
    reference: PatternBundle,
    cfg: GuidanceConfig,
    sigma: Optional[float] = None,
    logger: Optional[logging.Logger] = None,
) -> GuidedEstimate:
    """ガイド付きノイズ推定

    CFGの条件付き分岐のフォワードをタップし、同じ特徴から現在の相関パターンを抽出して
    L_c の z_t に関する勾配を求めます。参照パターン束は定数です。

    Args:
        denoiser: デノイザー
        z_t: 現在の潜在変数 [C, F, H, W]
        t: タイムステップ
        y: 条件 (Noneならヌル条件)
        reference: 参照相関パターン束
        cfg: ガイダンス設定
        sigma: σ_t (Noneなら cfg.sigma)
        logger: ロガー

    Returns:
        ガイド付き推定 (σ=0ならガイダンスなしのCFG推定そのもの)

    Raises:
        NonFiniteError: 勾配が非有限の場合
        StructureMismatchError: 参照パターン束と構造が合わない場合
    """
    logger = logger or logging.getLogger(__name__)
    sigma = cfg.sigma if sigma is None else sigma
    if sigma == 0.0:
        plain = cfg_noise(denoiser, z_t, t, y, cfg.cfg_scale)
        return GuidedEstimate(noise=plain, base=plain)

    unconditional = y is None or cfg.cfg_scale == 0.0
    tap_label = None if (cfg.match_conditions or unconditional) else y

    z = z_t.detach().requires_grad_(True)
    with torch.enable_grad():
        eps_tapped, taps = denoiser.denoise_with_taps(z, t, tap_label, reference.layer_ids)
        current = extract_matching_bundle(taps, reference, logger=logger)
        loss = consistency_loss(current, reference)
        if loss.requires_grad:
            (gradient,) = torch.autograd.grad(loss, z)
        else:
            # パターンが1つもなければ L_c は定数
            logger.warning(f"参照相関パターンが空のためガイダンスを省略します (t={t})")
            gradient = torch.zeros_like(z_t)

    if not torch.isfinite(gradient).all() or not torch.isfinite(loss):
        raise NonFiniteError(f"ガイダンス勾配が非有限です (t={t})")

    eps_tapped = eps_tapped.detach()

    def branch(label: Optional[int]) -> torch.Tensor:
        if label == tap_label:
            return eps_tapped
        with torch.no_grad():
            return denoiser.predict_noise(z_t, t, label)

    if unconditional:
        base = branch(None)
    elif cfg.cfg_scale == 1.0:
        base = branch(y)
    else:
        base = combine_cfg(branch(None), branch(y), cfg.cfg_scale)

    return GuidedEstimate(
        noise=base + sigma * gradient,
        base=base,
        gradient=gradient,
        loss=float(loss.detach()),
    )
