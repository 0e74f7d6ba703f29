"""データ変換モジュール

トレース・評価結果・キー/値レコードとテキストファイルの相互変換を担当します。

トレースのスキーマ (1行1ステップ)::

    step=<i> t=<t> loss=<L_c> grad_norm=<‖∇L_c‖> wall_time=<秒>
"""
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

from dotenv import dotenv_values

from src.data_synth.trajectories import benchmark_trajectories
from src.evaluation.metrics import MetricReport
from src.exceptions import ValidationError
from src.guidance.generator import GuidanceTrace, TraceRecord
from src.payloads import TrajectorySpec

TRACE_FIELDS = ("step", "t", "loss", "grad_norm", "wall_time")


def write_record(path: Union[str, Path], record: Mapping[str, object]) -> Path:
    """``KEY=VALUE`` 形式でレコードを書き出す"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for key, value in record.items():
            f.write(f"{key}={value}\n")
    return path


def read_record(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    return dict(dotenv_values(Path(path)))


def trace_to_lines(trace: GuidanceTrace) -> List[str]:
    """トレースを行形式のテキストに変換"""
    return [
        f"step={r.step_index} t={r.t} loss={r.loss!r} grad_norm={r.grad_norm!r} wall_time={r.wall_time:.6f}"
        for r in trace
    ]


def lines_to_trace(lines: Sequence[str]) -> GuidanceTrace:
    """行形式のテキストからトレースを復元

    Raises:
        ValidationError: 行の形式が不正な場合
    """
    trace = GuidanceTrace()
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            values = dict(item.split("=", 1) for item in line.split())
            trace.append(TraceRecord(
                step_index=int(values["step"]),
                t=int(values["t"]),
                loss=float(values["loss"]),
                grad_norm=float(values["grad_norm"]),
                wall_time=float(values["wall_time"]),
            ))
        except (KeyError, ValueError) as e:
            raise ValidationError(f"トレースの{number}行目の形式が不正です: {line!r}", field="trace") from e
    return trace


def write_trace(trace: GuidanceTrace, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{line}\n" for line in trace_to_lines(trace)), encoding="utf-8")
    return path


def read_trace(path: Union[str, Path]) -> GuidanceTrace:
    return lines_to_trace(Path(path).read_text(encoding="utf-8").splitlines())


def load_trajectory(source: str, num_frames: int = 16) -> TrajectorySpec:
    """ベンチマーク軌跡名、または軌跡レコードのファイルから軌跡を読み込む

    Raises:
        ValidationError: 名前にもファイルにも該当しない場合
    """
    named = benchmark_trajectories(num_frames)
    if source in named:
        return named[source]
    path = Path(source)
    if not path.exists():
        raise ValidationError(
            f"軌跡が見つかりません: {source} (ベンチマーク軌跡: {', '.join(named)})",
            field="trajectory",
        )
    return TrajectorySpec.from_record(read_record(path))


def format_metric_table(reports: Sequence[MetricReport], summary: Mapping[str, float]) -> List[str]:
    """評価結果を表形式のテキストに変換 (最終行は平均)"""
    header = f"{'name':<32} {'mIoU':>8} {'CD':>8} {'detect':>8} {'sim':>8}"
    lines = [header, "-" * len(header)]

    def similarity(value: Optional[float]) -> str:
        return f"{value:>8.4f}" if value is not None else f"{'-':>8}"

    for report in reports:
        lines.append(
            f"{report.name:<32} {report.miou:>8.4f} {report.centroid_distance:>8.4f} "
            f"{report.detection_rate:>8.2f} {similarity(report.frame_similarity)}"
        )
    if reports:
        lines.append("-" * len(header))
        lines.append(
            f"{'mean (' + str(summary['count']) + ')':<32} {summary['miou']:>8.4f} "
            f"{summary['centroid_distance']:>8.4f} {summary['detection_rate']:>8.2f} "
            f"{similarity(summary.get('frame_similarity'))}"
        )
    return lines
