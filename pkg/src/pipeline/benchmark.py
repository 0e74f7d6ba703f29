"""ベンチマークモジュール

8種類のボックス軌跡 × 複数シードで、同じ z_T からガイドあり/なしの動画を生成し、
軌跡整合性を比較します。あわせてσ_tを変えたときの平均L_cを記録します。
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from scipy.stats import binomtest

from src.data_synth.container import write_container
from src.data_synth.trajectories import benchmark_trajectories
from src.evaluation.metrics import BoxSequence, MetricReport, aggregate_reports, evaluate_boxes
from src.exceptions import GenerationError
from src.guidance.estimate import GuidanceConfig
from src.guidance.generator import generate_pair, sigma_sweep
from src.converters import format_metric_table, write_record
from src.config import RunConfig
from .commands import Backbone, GT_SUFFIX, check_resolution, load_backbone
from .run import RunContext


@dataclass
class PairedRun:
    """同じ初期ノイズで生成したガイドあり/なしの組"""
    name: str
    seed: int
    guided: MetricReport
    unguided: MetricReport
    mean_loss: float


@dataclass
class SignTest:
    """対応のある比較の符号検定"""
    wins: int
    losses: int
    ties: int
    p_value: float

    def __str__(self) -> str:
        return f"勝ち: {self.wins}, 負け: {self.losses}, 引き分け: {self.ties}, p={self.p_value:.4f}"


def sign_test(differences: Sequence[float]) -> SignTest:
    """差が正の組を勝ちとする片側符号検定 (引き分けは除外)"""
    wins = sum(d > 0 for d in differences)
    losses = sum(d < 0 for d in differences)
    ties = len(differences) - wins - losses
    trials = wins + losses
    p_value = binomtest(wins, trials, 0.5, alternative="greater").pvalue if trials else 1.0
    return SignTest(wins=wins, losses=losses, ties=ties, p_value=float(p_value))


@dataclass
class BenchmarkResult:
    """ベンチマークの結果"""
    pairs: List[PairedRun] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    guided_summary: Dict[str, float] = field(default_factory=dict)
    unguided_summary: Dict[str, float] = field(default_factory=dict)
    miou_test: Optional[SignTest] = None
    cd_test: Optional[SignTest] = None
    sweep: Dict[float, float] = field(default_factory=dict)

    @property
    def error_count(self) -> int:
        return len(self.failures)

    def __str__(self) -> str:
        text = f"組数: {len(self.pairs)}, 失敗: {len(self.failures)}"
        if self.pairs:
            text += (
                f", mIoU: {self.unguided_summary['miou']:.4f} -> {self.guided_summary['miou']:.4f}"
                f", CD: {self.unguided_summary['centroid_distance']:.4f} -> "
                f"{self.guided_summary['centroid_distance']:.4f}"
            )
        return text


class BenchmarkRunner:
    """ガイドあり/なしの比較ベンチマーク

    生成した動画は ``results/<name>.mgt``、正解軌跡は ``results/<name>.env`` に保存し、
    後から evaluate コマンドで再評価できます。
    """

    def __init__(
        self,
        backbone: Backbone,
        cfg: GuidanceConfig,
        run_dir: Path,
        label: Optional[int] = None,
        num_frames: int = 16,
        background: Tuple[float, ...] = (1.0, 1.0, 1.0),
        logger: Optional[logging.Logger] = None,
    ):
        """
        Args:
            backbone: 学習済みバックボーン
            cfg: ガイダンス設定 (シードはベンチマークごとに上書き)
            run_dir: 出力先の実行ディレクトリ
            label: 生成条件
            num_frames: 軌跡のフレーム数
            background: 検出に使う背景色
            logger: ロガー
        """
        self.backbone = backbone
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.label = label
        self.trajectories = benchmark_trajectories(num_frames)
        self.background = background
        self.logger = logger or logging.getLogger(__name__)

    def _save(self, name: str, video, trajectory) -> None:
        write_container(video.data, self.run_dir / "results" / f"{name}.mgt", {"kind": "benchmark_video"})
        write_record(self.run_dir / "results" / f"{name}{GT_SUFFIX}", trajectory.to_record())

    def run_pair(self, name: str, seed: int) -> PairedRun:
        """1つの軌跡・シードでガイドあり/なしを生成して評価"""
        trajectory = self.trajectories[name]
        cfg = replace(self.cfg, mode="trajectory", noise_seed=seed, pattern_seed=seed)
        guided, baseline = generate_pair(
            trajectory,
            self.label,
            cfg,
            self.backbone.model,
            self.backbone.codec,
            self.backbone.schedule,
            logger=self.logger,
        )
        run_name = f"{name}_seed{seed}"
        self._save(f"{run_name}_guided", guided.video, trajectory)
        self._save(f"{run_name}_unguided", baseline.video, trajectory)

        guided_report = evaluate_boxes(
            BoxSequence.from_video(guided.video, self.background), trajectory, name=f"{run_name}_guided"
        )
        unguided_report = evaluate_boxes(
            BoxSequence.from_video(baseline.video, self.background), trajectory, name=f"{run_name}_unguided"
        )
        return PairedRun(run_name, seed, guided_report, unguided_report, guided.trace.mean_loss)

    def run(self, seeds: Sequence[int], sigmas: Sequence[float] = ()) -> BenchmarkResult:
        """全軌跡 × 全シードを実行

        Args:
            seeds: 初期ノイズのシード
            sigmas: σ_tの比較に使う値 (空なら比較しない)
        """
        result = BenchmarkResult()
        total = len(self.trajectories) * len(seeds)
        self.logger.info(f"ベンチマークを開始します (軌跡: {len(self.trajectories)}, シード: {list(seeds)})")

        done = 0
        for name in self.trajectories:
            for seed in seeds:
                done += 1
                try:
                    pair = self.run_pair(name, seed)
                except GenerationError as e:
                    result.failures.append(f"{name}_seed{seed}")
                    self.logger.error(f"  生成に失敗しました ({name}, seed={seed}): {e}")
                    continue
                result.pairs.append(pair)
                self.logger.info(
                    f"  ベンチマーク進捗: {done}/{total} ({pair.name}: "
                    f"mIoU {pair.unguided.miou:.3f} -> {pair.guided.miou:.3f}, "
                    f"CD {pair.unguided.centroid_distance:.3f} -> {pair.guided.centroid_distance:.3f})"
                )

        result.guided_summary = aggregate_reports([p.guided for p in result.pairs])
        result.unguided_summary = aggregate_reports([p.unguided for p in result.pairs])
        result.miou_test = sign_test([p.guided.miou - p.unguided.miou for p in result.pairs])
        result.cd_test = sign_test([p.unguided.centroid_distance - p.guided.centroid_distance for p in result.pairs])

        if sigmas:
            result.sweep = self.run_sweep(sigmas, seeds[0] if seeds else 0)

        self._write_report(result)
        return result

    def run_sweep(self, sigmas: Sequence[float], seed: int) -> Dict[float, float]:
        """σ_tごとに全軌跡で生成し、ガイドステップの平均L_cを返す"""
        losses: Dict[float, List[float]] = {float(s): [] for s in sigmas}
        cfg = replace(self.cfg, mode="trajectory", noise_seed=seed, pattern_seed=seed)
        for name, trajectory in self.trajectories.items():
            results = sigma_sweep(
                trajectory,
                self.label,
                cfg,
                sigmas,
                self.backbone.model,
                self.backbone.codec,
                self.backbone.schedule,
                logger=self.logger,
            )
            for sigma, generated in results:
                losses[float(sigma)].append(generated.trace.mean_loss)
            self.logger.info(f"  σ比較: {name} 完了")
        return {sigma: sum(values) / len(values) for sigma, values in losses.items() if values}

    def _write_report(self, result: BenchmarkResult) -> None:
        reports = [r for p in result.pairs for r in (p.guided, p.unguided)]
        lines = format_metric_table(reports, aggregate_reports(reports))
        lines.append("")
        if result.pairs:
            lines.append(
                f"guided   mIoU={result.guided_summary['miou']:.4f} CD={result.guided_summary['centroid_distance']:.4f}"
            )
            lines.append(
                f"unguided mIoU={result.unguided_summary['miou']:.4f} "
                f"CD={result.unguided_summary['centroid_distance']:.4f}"
            )
        lines.append(f"sign test (mIoU): {result.miou_test}")
        lines.append(f"sign test (CD): {result.cd_test}")
        for sigma, loss in sorted(result.sweep.items()):
            lines.append(f"sigma={sigma:g} mean_loss={loss:.6f}")
        if result.failures:
            lines.append(f"failures: {', '.join(result.failures)}")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "benchmark.txt").write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def cmd_benchmark(config: RunConfig, context: RunContext, logger: logging.Logger) -> BenchmarkResult:
    """ベンチマークを実行し、結果を実行ディレクトリに書き出す"""
    backbone = load_backbone(config, logger)
    check_resolution(backbone, config)
    runner = BenchmarkRunner(
        backbone,
        config.guidance_config(backbone.schedule.T),
        context.run_dir,
        label=config.label,
        num_frames=config.frames or 16,
        background=tuple(float(v) for v in config.background.split(",")),
        logger=logger,
    )
    seeds = [int(v) for v in config.benchmark_seeds.split(",") if v.strip()]
    sigmas = [float(v) for v in config.sigma_sweep.split(",") if v.strip()]
    result = runner.run(seeds, sigmas)
    context.content_hash = backbone.content_hash
    return result
