"""動きガイダンスモジュール

動き一貫性損失、その勾配によるノイズ推定の補正、ガイド付きサンプリングを提供します。
"""
from .loss import check_structure, consistency_loss
from .estimate import GuidanceConfig, GuidedEstimate, guided_noise_estimate, GUIDANCE_MODES, INIT_NOISE_MODES
from .generator import (
    TraceRecord,
    GuidanceTrace,
    GenerationResult,
    resolve_reference,
    initial_latent,
    generate,
    generate_pair,
    sigma_sweep,
    unguided,
)

__all__ = [
    "check_structure",
    "consistency_loss",
    "GuidanceConfig",
    "GuidedEstimate",
    "guided_noise_estimate",
    "GUIDANCE_MODES",
    "INIT_NOISE_MODES",
    "TraceRecord",
    "GuidanceTrace",
    "GenerationResult",
    "resolve_reference",
    "initial_latent",
    "generate",
    "generate_pair",
    "sigma_sweep",
    "unguided",
]
