"""動きガイド付き生成モジュール

参照動画 (またはボックス軌跡から合成した動画) を反転して初期ノイズを作り、
参照相関パターン束に沿うようにDDIMサンプリングをガイドします。
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import torch

from src.backbone.codec import VideoCodec
from src.backbone.model import ToyVideoDenoiser
from src.data_synth.rendering import PixelVideo, box_center_pixels, synthesize_box_reference
from src.diffusion.ddim import cfg_noise, ddim_invert, ddim_sample
from src.diffusion.schedule import NoiseSchedule
from src.exceptions import GenerationError, MotionGuidanceError, ValidationError
from src.motion_pattern.pattern import PatternBundle
from src.motion_pattern.reference import PointSource, reference_pattern
from src.payloads import KeyPoint, PointPath, TrajectorySpec
from .estimate import GuidanceConfig, guided_noise_estimate


@dataclass(frozen=True)
class TraceRecord:
    """ガイド付きステップ1回分の記録"""
    step_index: int
    t: int
    loss: float
    grad_norm: float
    wall_time: float


@dataclass
class GuidanceTrace:
    """ガイド付きステップの記録 (ガイドしたステップごとに1件)"""
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    @property
    def mean_loss(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.loss for r in self.records) / len(self.records)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")

    @property
    def total_time(self) -> float:
        return sum(r.wall_time for r in self.records)


@dataclass
class GenerationResult:
    """生成結果

    ``video, trace = result`` のように展開できます。
    """
    video: PixelVideo
    trace: GuidanceTrace
    latent: torch.Tensor
    initial_noise: torch.Tensor
    reference: PatternBundle
    reference_video: PixelVideo

    def __iter__(self):
        return iter((self.video, self.trace))


def resolve_reference(
    reference_input: Union[PixelVideo, TrajectorySpec],
    cfg: GuidanceConfig,
) -> Tuple[PixelVideo, List[PointSource]]:
    """参照入力から参照動画とキーポイントを決定

    軌跡モードではボックス動画を合成し、キーポイントを指定しなければ
    各フレームのボックス中心の軌跡を使います。
    """
    if isinstance(reference_input, TrajectorySpec):
        reference_input.validate()
        video = synthesize_box_reference(reference_input, reference_input.num_frames, cfg.height, cfg.width)
        if cfg.key_points:
            _check_key_points(cfg.key_points, video)
            return video, list(cfg.key_points)
        centers = box_center_pixels(reference_input, cfg.height, cfg.width)
        return video, [PointPath(start_frame=0, positions=centers)]

    reference_input.validate()
    if not cfg.key_points:
        raise ValidationError("参照動画モードではキーポイントの指定が必要です", field="key_points")
    _check_key_points(cfg.key_points, reference_input)
    return reference_input, list(cfg.key_points)


def _check_key_points(points: Sequence[KeyPoint], video: PixelVideo) -> None:
    """キーポイントが動画内にあり、後続フレームを持つことを確認"""
    for point in points:
        point.validate(video.num_frames, video.height, video.width)
        if point.frame > video.num_frames - 2:
            raise ValidationError(
                f"最終フレームのキーポイントは追跡できません (フレーム: {point.frame}, F={video.num_frames})",
                field="key_points",
            )


def initial_latent(
    z_ref: torch.Tensor,
    denoiser: ToyVideoDenoiser,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    logger: Optional[logging.Logger] = None,
) -> torch.Tensor:
    """初期ノイズ z_T を作成

    inversion: z_T = √λ·反転結果 + √(1−λ)·ε、random: z_T = ε
    """
    generator = torch.Generator().manual_seed(cfg.noise_seed)
    noise = torch.randn(z_ref.shape, generator=generator, dtype=z_ref.dtype)
    if cfg.init_noise == "random":
        return noise
    inverted = ddim_invert(z_ref, denoiser, None, cfg.num_steps(schedule.T), schedule, logger=logger)
    if cfg.mix_lambda == 1.0:
        return inverted
    return math.sqrt(cfg.mix_lambda) * inverted + math.sqrt(1.0 - cfg.mix_lambda) * noise


def generate(
    reference_input: Union[PixelVideo, TrajectorySpec],
    y: Optional[int],
    cfg: GuidanceConfig,
    denoiser: ToyVideoDenoiser,
    codec: VideoCodec,
    schedule: NoiseSchedule,
    reference: Optional[PatternBundle] = None,
    logger: Optional[logging.Logger] = None,
) -> GenerationResult:
    """動きガイド付きで動画を生成

    Args:
        reference_input: 参照動画 (referenceモード) またはボックス軌跡 (trajectoryモード)
        y: 生成条件 (Noneならヌル条件)
        cfg: ガイダンス設定
        denoiser: 学習済みデノイザー
        codec: コーデック
        schedule: ノイズスケジュール
        reference: 抽出済みの参照相関パターン束 (Noneなら参照動画から抽出)
        logger: ロガー

    Returns:
        生成結果 (動画, トレース, 最終潜在変数など)

    Raises:
        GenerationError: サンプリング中に失敗した場合 (その時点までのトレース付き)
    """
    logger = logger or logging.getLogger(__name__)
    cfg.validate(schedule.T)
    expected_mode = "trajectory" if isinstance(reference_input, TrajectorySpec) else "reference"
    if cfg.mode != expected_mode:
        raise ValidationError(f"入力の種類とモードが一致しません (モード: {cfg.mode}, 入力: {expected_mode})", field="mode")

    x_ref, points = resolve_reference(reference_input, cfg)
    z_ref = codec.encode(x_ref).to(denoiser.dtype)
    trace = GuidanceTrace()

    try:
        z_T = initial_latent(z_ref, denoiser, schedule, cfg, logger=logger)
        if reference is None:
            reference = reference_pattern(
                x_ref,
                points,
                cfg.t_prime,
                denoiser,
                codec,
                schedule,
                tau=cfg.tau,
                local=cfg.local,
                mode=cfg.temperature_mode,
                seed=cfg.pattern_seed,
                layer_ids=cfg.layer_ids,
                logger=logger,
            )

        steps = cfg.num_steps(schedule.T)
        guided = cfg.num_guided(schedule.T)
        logger.info(f"サンプリングを開始します (ステップ数: {steps}, ガイド: {guided}, sigma: {cfg.sigma})")

        def estimate(z_t: torch.Tensor, t: int, step_index: int) -> torch.Tensor:
            sigma = cfg.sigma_at(t, step_index)
            if step_index >= guided or sigma == 0.0:
                return cfg_noise(denoiser, z_t, t, y, cfg.cfg_scale)
            start = time.perf_counter()
            result = guided_noise_estimate(denoiser, z_t, t, y, reference, cfg, sigma=sigma, logger=logger)
            trace.append(TraceRecord(
                step_index=step_index,
                t=t,
                loss=result.loss,
                grad_norm=float(result.gradient.norm()),
                wall_time=time.perf_counter() - start,
            ))
            return result.noise

        def report(step_index: int, t: int, z: torch.Tensor) -> None:
            if (step_index + 1) % cfg.log_interval == 0 and trace.records:
                last = trace.records[-1]
                logger.info(f"  サンプリング進捗: {step_index + 1}/{steps} (t={t}, L_c: {last.loss:.6f})")

        z0 = ddim_sample(z_T, schedule, steps, estimate, callback=report)
    except MotionGuidanceError as e:
        raise GenerationError("生成に失敗しました", trace=trace, original_error=e) from e

    video = codec.decode(z0, fps=x_ref.fps)
    logger.info(f"生成が完了しました (ガイドステップ: {len(trace)}, 平均L_c: {trace.mean_loss:.6f})")
    return GenerationResult(
        video=video,
        trace=trace,
        latent=z0,
        initial_noise=z_T,
        reference=reference,
        reference_video=x_ref,
    )


def unguided(cfg: GuidanceConfig) -> GuidanceConfig:
    """同じ初期ノイズ・シードでガイダンスを無効にした設定"""
    return replace(cfg, sigma=0.0, guided_steps=0)


def generate_pair(
    reference_input: Union[PixelVideo, TrajectorySpec],
    y: Optional[int],
    cfg: GuidanceConfig,
    denoiser: ToyVideoDenoiser,
    codec: VideoCodec,
    schedule: NoiseSchedule,
    logger: Optional[logging.Logger] = None,
) -> Tuple[GenerationResult, GenerationResult]:
    """ガイドあり/なしを同じ z_T で生成 (比較実験用)"""
    guided = generate(reference_input, y, cfg, denoiser, codec, schedule, logger=logger)
    baseline = generate(
        reference_input, y, unguided(cfg), denoiser, codec, schedule, reference=guided.reference, logger=logger
    )
    return guided, baseline


def sigma_sweep(
    reference_input: Union[PixelVideo, TrajectorySpec],
    y: Optional[int],
    cfg: GuidanceConfig,
    sigmas: Sequence[float],
    denoiser: ToyVideoDenoiser,
    codec: VideoCodec,
    schedule: NoiseSchedule,
    logger: Optional[logging.Logger] = None,
) -> List[Tuple[float, GenerationResult]]:
    """σ_tを変えて生成し、各結果を返す"""
    results = []
    reference = None
    for sigma in sigmas:
        result = generate(
            reference_input, y, replace(cfg, sigma=sigma), denoiser, codec, schedule, reference=reference, logger=logger
        )
        reference = result.reference
        results.append((sigma, result))
    return results
