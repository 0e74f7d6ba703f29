"""コマンド実装モジュール

各サブコマンド (synthesize, train, generate, invert, extract-pattern, evaluate) の処理を担当します。
どのコマンドも実行設定を検証してから計算を始め、成果物を実行ディレクトリに書き出します。
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.backbone.checkpoint import CONFIG_FILE, load_checkpoint, save_checkpoint
from src.backbone.codec import LinearPixelCodec
from src.backbone.model import ToyVideoDenoiser
from src.backbone.training import train_toy_backbone
from src.config import RunConfig
from src.converters import (
    format_metric_table,
    load_trajectory,
    read_record,
    write_record,
    write_trace,
)
from src.data_synth.container import read_container, write_container
from src.data_synth.corpus import ShapeCorpus, build_corpus
from src.data_synth.rendering import PixelVideo
from src.diffusion.ddim import ddim_invert, ddim_sample, plain_estimator
from src.diffusion.schedule import NoiseSchedule, build_schedule
from src.evaluation.metrics import BoxSequence, MetricReport, aggregate_reports, evaluate_boxes
from src.evaluation.similarity import BackboneFeatureProvider, frame_similarity
from src.exceptions import ConfigurationError, ValidationError
from src.guidance.generator import generate, resolve_reference
from src.motion_pattern.reference import reference_pattern
from src.payloads import TrajectorySpec
from .run import RunContext, torch_dtype

VIDEO_FILE = "video.mgt"
GT_SUFFIX = ".env"


@dataclass
class Backbone:
    """読み込んだ学習済みバックボーン一式"""
    model: ToyVideoDenoiser
    codec: LinearPixelCodec
    schedule: NoiseSchedule
    content_hash: str
    train_size: Optional[Tuple[int, int]] = None  # 学習コーパスの (H, W)


@dataclass
class EvaluationResult:
    """評価の結果"""
    reports: List[MetricReport] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    unmatched: List[str] = field(default_factory=list)

    def __str__(self) -> str:
        if not self.reports:
            return f"評価対象: 0件, 対応なし: {len(self.unmatched)}件"
        return (
            f"評価対象: {len(self.reports)}件, "
            f"mIoU: {self.summary['miou']:.4f}, "
            f"CD: {self.summary['centroid_distance']:.4f}, "
            f"対応なし: {len(self.unmatched)}件"
        )


def load_backbone(config: RunConfig, logger: Optional[logging.Logger] = None) -> Backbone:
    """チェックポイントからモデル・コーデック・学習時のスケジュールを読み込む"""
    config.require("checkpoint")
    if not Path(config.checkpoint).exists():
        raise ConfigurationError(f"チェックポイントが見つかりません: {config.checkpoint}", missing_fields=["CHECKPOINT"])
    model, codec, digest = load_checkpoint(config.checkpoint, dtype=torch_dtype(config.dtype), logger=logger)
    record = read_record(Path(config.checkpoint) / CONFIG_FILE)
    schedule = build_schedule(
        int(record.get("SCHEDULE_T") or config.timesteps),
        record.get("SCHEDULE_KIND") or config.schedule_kind,
    )
    train_size = None
    if record.get("TRAIN_HEIGHT") and record.get("TRAIN_WIDTH"):
        train_size = (int(record["TRAIN_HEIGHT"]), int(record["TRAIN_WIDTH"]))
    return Backbone(model=model, codec=codec, schedule=schedule, content_hash=digest, train_size=train_size)


def check_resolution(
    backbone: Backbone,
    config: RunConfig,
    source: Optional[Union[PixelVideo, TrajectorySpec]] = None,
) -> None:
    """生成・参照の解像度が学習コーパスと一致するか確認

    参照動画ならその解像度、ボックス軌跡なら HEIGHT/WIDTH を比べます。

    Raises:
        ConfigurationError: 解像度が学習時と異なる場合
    """
    if backbone.train_size is None:
        return
    if isinstance(source, PixelVideo):
        size = (source.height, source.width)
    else:
        size = (config.height, config.width)
    if size != backbone.train_size:
        raise ConfigurationError(
            f"解像度が学習時と一致しません (指定: {size[0]}x{size[1]}, "
            f"学習時: {backbone.train_size[0]}x{backbone.train_size[1]})",
            missing_fields=["HEIGHT", "WIDTH"],
        )


def load_video(path: Union[str, Path]) -> PixelVideo:
    """テンソルコンテナからピクセル動画 [3, F, H, W] を読み込む"""
    data = read_container(path)
    if data.ndim != 4 or data.shape[0] != 3:
        raise ValidationError(f"動画は[3, F, H, W]である必要があります: {data.shape} ({path})", field="video")
    video = PixelVideo(data=data.astype(np.float32))
    video.validate()
    return video


def reference_input(config: RunConfig) -> Union[PixelVideo, TrajectorySpec]:
    """設定のモードに応じて参照動画またはボックス軌跡を読み込む"""
    if config.mode == "reference":
        config.require("reference_video")
        return load_video(config.reference_video)
    config.require("trajectory")
    return load_trajectory(config.trajectory, config.resolved_frames)


def _check_mode_flags(config: RunConfig) -> None:
    if config.mode == "reference" and config.trajectory is not None:
        raise ConfigurationError("referenceモードではTRAJECTORYを指定できません")
    if config.mode == "trajectory" and config.reference_video is not None:
        raise ConfigurationError("trajectoryモードではREFERENCE_VIDEOを指定できません")


def cmd_synthesize(config: RunConfig, context: RunContext, logger: logging.Logger) -> Path:
    """学習用の合成コーパスを生成"""
    corpus = build_corpus(config.corpus_config(), logger=logger)
    directory = Path(config.corpus_dir) if config.corpus_dir else context.path("corpus")
    corpus.save(directory)
    logger.info(f"コーパスを保存しました: {directory} ({len(corpus)}本)")
    return directory


def cmd_train(config: RunConfig, context: RunContext, logger: logging.Logger) -> Path:
    """コーパスでバックボーンを学習し、チェックポイントを書き出す

    Returns:
        チェックポイントのディレクトリ
    """
    config.require("corpus_dir")
    corpus_dir = Path(config.corpus_dir)
    if not (corpus_dir / "videos.mgt").exists():
        raise ConfigurationError(f"コーパスが見つかりません: {corpus_dir}", missing_fields=["CORPUS_DIR"])

    corpus = ShapeCorpus.load(corpus_dir)
    schedule = build_schedule(config.timesteps, config.schedule_kind)
    codec = LinearPixelCodec(config.latent_channels, seed=config.codec_seed)
    train_config = config.train_config()
    train_config.progress = True

    result = train_toy_backbone(
        corpus,
        config.backbone_config(),
        schedule,
        config.train_steps,
        train_config=train_config,
        codec=codec,
        logger=logger,
    )

    checkpoint_dir = context.path("checkpoint")
    digest = save_checkpoint(
        result.model,
        checkpoint_dir,
        codec_seed=config.codec_seed,
        extra={
            **schedule.to_record(),
            "TRAIN_STEPS": config.train_steps,
            "TRAIN_HEIGHT": corpus.videos.shape[-2],
            "TRAIN_WIDTH": corpus.videos.shape[-1],
        },
        logger=logger,
    )
    (context.path("losses.txt")).write_text("".join(f"{v!r}\n" for v in result.losses), encoding="utf-8")
    context.content_hash = digest
    return checkpoint_dir


def cmd_generate(config: RunConfig, context: RunContext, logger: logging.Logger) -> Tuple[Path, Path]:
    """動きガイド付きで動画を生成

    Returns:
        (動画のパス, トレースのパス)
    """
    _check_mode_flags(config)
    backbone = load_backbone(config, logger)
    source = reference_input(config)
    check_resolution(backbone, config, source)
    cfg = config.guidance_config(backbone.schedule.T)

    result = generate(source, config.label, cfg, backbone.model, backbone.codec, backbone.schedule, logger=logger)

    video_path = write_container(result.video.data, context.path(VIDEO_FILE), {
        "kind": "generated_video",
        "mode": cfg.mode,
        "checkpoint_hash": backbone.content_hash,
        "noise_seed": str(cfg.noise_seed),
        "pattern_seed": str(cfg.pattern_seed),
    })
    write_container(result.reference_video.data, context.path("reference.mgt"), {"kind": "reference_video"})
    trace_path = write_trace(result.trace, context.path("trace.txt"))
    if isinstance(source, TrajectorySpec):
        write_record(context.path(Path(VIDEO_FILE).stem + GT_SUFFIX), source.to_record())

    write_record(context.path("run.env"), {
        "CHECKPOINT_HASH": backbone.content_hash,
        "SCHEDULE_T": backbone.schedule.T,
        "SCHEDULE_KIND": backbone.schedule.kind,
        "SAMPLING_STEPS": cfg.num_steps(backbone.schedule.T),
        "GUIDED_STEPS": len(result.trace),
        "MEAN_LOSS": repr(result.trace.mean_loss),
        "FINAL_LOSS": repr(result.trace.final_loss),
    })
    context.content_hash = backbone.content_hash
    return video_path, trace_path


def cmd_invert(config: RunConfig, context: RunContext, logger: logging.Logger) -> Path:
    """参照入力をDDIM反転し、z_T と再構成誤差を書き出す"""
    _check_mode_flags(config)
    backbone = load_backbone(config, logger)
    source = reference_input(config)
    check_resolution(backbone, config, source)
    cfg = config.guidance_config(backbone.schedule.T)
    video = resolve_reference(source, cfg)[0] if isinstance(source, TrajectorySpec) else source

    z0 = backbone.codec.encode(video).to(backbone.model.dtype)
    steps = cfg.num_steps(backbone.schedule.T)
    z_T = ddim_invert(z0, backbone.model, None, steps, backbone.schedule, logger=logger)
    reconstruction = ddim_sample(z_T, backbone.schedule, steps, plain_estimator(backbone.model, None, 1.0))
    mae = float((reconstruction - z0).abs().mean())
    logger.info(f"反転→再構成の平均絶対誤差: {mae:.6f} (ステップ数: {steps})")

    path = write_container(z_T.detach().cpu(), context.path("inverted.mgt"), {
        "kind": "inverted_latent",
        "steps": str(steps),
        "reconstruction_mae": repr(mae),
        "checkpoint_hash": backbone.content_hash,
    })
    context.content_hash = backbone.content_hash
    return path


def cmd_extract_pattern(config: RunConfig, context: RunContext, logger: logging.Logger) -> Path:
    """参照入力から相関パターン束を抽出して書き出す"""
    _check_mode_flags(config)
    backbone = load_backbone(config, logger)
    source = reference_input(config)
    check_resolution(backbone, config, source)
    cfg = config.guidance_config(backbone.schedule.T)
    video, points = resolve_reference(source, cfg)

    bundle = reference_pattern(
        video,
        points,
        cfg.t_prime,
        backbone.model,
        backbone.codec,
        backbone.schedule,
        tau=cfg.tau,
        local=cfg.local,
        mode=cfg.temperature_mode,
        seed=cfg.pattern_seed,
        layer_ids=cfg.layer_ids,
        logger=logger,
    )
    directory = bundle.export(context.path("patterns"))
    track_record = {}
    for point_index, track in bundle.tracks.items():
        for layer_id, positions in track.positions.items():
            track_record[f"TRACK_{point_index}_LAYER_{layer_id}"] = ";".join(f"{j},{k}" for j, k in positions)
    write_record(context.path("tracks.env"), track_record)
    context.content_hash = backbone.content_hash
    return directory


def evaluate_directory(
    results_dir: Path,
    gt_dir: Path,
    background: Tuple[float, ...],
    provider: Optional[BackboneFeatureProvider] = None,
    logger: Optional[logging.Logger] = None,
) -> EvaluationResult:
    """結果ディレクトリの動画 (``<name>.mgt``) と正解軌跡 (``<name>.env``) を対応付けて評価

    対応する正解がない動画は一覧に記録して評価を続けます。
    """
    logger = logger or logging.getLogger(__name__)
    result = EvaluationResult()
    for video_path in sorted(Path(results_dir).glob("*.mgt")):
        gt_path = Path(gt_dir) / f"{video_path.stem}{GT_SUFFIX}"
        if not gt_path.exists():
            result.unmatched.append(video_path.name)
            logger.warning(f"正解軌跡が見つかりません: {video_path.name}")
            continue
        try:
            video = load_video(video_path)
            gt = TrajectorySpec.from_record(read_record(gt_path))
            report = evaluate_boxes(BoxSequence.from_video(video, background), gt, name=video_path.stem)
            if provider is not None:
                report.frame_similarity = frame_similarity(video, provider, crop=gt)
        except ValidationError as e:
            result.unmatched.append(video_path.name)
            logger.warning(f"評価できませんでした: {video_path.name}: {e}")
            continue
        result.reports.append(report)
        logger.debug(f"  {report.name}: {report}")
    result.summary = aggregate_reports(result.reports)
    return result


def cmd_evaluate(config: RunConfig, context: RunContext, logger: logging.Logger) -> EvaluationResult:
    """結果ディレクトリを評価し、表と各動画のレコードを書き出す"""
    config.require("results_dir")
    results_dir = Path(config.results_dir)
    if not results_dir.is_dir():
        raise ConfigurationError(f"結果ディレクトリが見つかりません: {results_dir}", missing_fields=["RESULTS_DIR"])
    gt_dir = Path(config.gt_dir) if config.gt_dir else results_dir

    provider = None
    if config.checkpoint is not None:
        backbone = load_backbone(config, logger)
        provider = BackboneFeatureProvider(backbone.model, backbone.codec, t_prime=config.t_prime)

    background = tuple(float(v) for v in config.background.split(","))
    result = evaluate_directory(results_dir, gt_dir, background, provider=provider, logger=logger)

    for report in result.reports:
        write_record(context.path("metrics") / f"{report.name}.env", report.to_record())
    table = format_metric_table(result.reports, result.summary)
    context.path("metrics.txt").write_text("".join(f"{line}\n" for line in table), encoding="utf-8")
    for line in table:
        logger.info(line)
    if result.unmatched:
        logger.warning(f"対応する正解がないファイル: {', '.join(result.unmatched)}")
    return result
