"""パイプラインモジュール

コマンドラインの各サブコマンドと、実行ディレクトリ・ベンチマークの管理を提供します。
"""
from .run import RunContext, make_run_id, torch_dtype
from .commands import (
    Backbone,
    EvaluationResult,
    check_resolution,
    load_backbone,
    load_video,
    evaluate_directory,
    cmd_synthesize,
    cmd_train,
    cmd_generate,
    cmd_invert,
    cmd_extract_pattern,
    cmd_evaluate,
)
from .benchmark import BenchmarkRunner, BenchmarkResult, PairedRun, SignTest, sign_test, cmd_benchmark

__all__ = [
    "RunContext",
    "make_run_id",
    "torch_dtype",
    "Backbone",
    "EvaluationResult",
    "check_resolution",
    "load_backbone",
    "load_video",
    "evaluate_directory",
    "cmd_synthesize",
    "cmd_train",
    "cmd_generate",
    "cmd_invert",
    "cmd_extract_pattern",
    "cmd_evaluate",
    "BenchmarkRunner",
    "BenchmarkResult",
    "PairedRun",
    "SignTest",
    "sign_test",
    "cmd_benchmark",
]
