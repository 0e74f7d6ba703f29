"""メインスクリプト

合成動画での学習、動きガイド付き生成、評価・ベンチマークを実行します。

終了コード: 0 成功、1 実行時エラー、2 設定・入力値エラー
"""
import argparse
import sys
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from src.config import DTYPES, RunConfig
from src.logger import setup_logger
from src.pipeline import (
    RunContext,
    cmd_benchmark,
    cmd_evaluate,
    cmd_extract_pattern,
    cmd_generate,
    cmd_invert,
    cmd_synthesize,
    cmd_train,
)
from src import (
    ConfigurationError,
    GenerationError,
    MotionGuidanceError,
    ValidationError,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

COMMANDS: Dict[str, Callable] = {
    "synthesize": cmd_synthesize,
    "train": cmd_train,
    "generate": cmd_generate,
    "invert": cmd_invert,
    "extract-pattern": cmd_extract_pattern,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}

COMMAND_TITLES = {
    "synthesize": "合成コーパス生成",
    "train": "バックボーン学習",
    "generate": "動きガイド付き生成",
    "invert": "DDIM反転",
    "extract-pattern": "相関パターン抽出",
    "evaluate": "評価",
    "benchmark": "ベンチマーク",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="dotenv形式の設定ファイル")
    parser.add_argument("--output-root", dest="output_root", default=None)
    parser.add_argument("--run-name", dest="run_name", default=None)
    parser.add_argument("--log-level", dest="log_level", default=None)
    parser.add_argument("--dtype", default=None, choices=DTYPES)


def _add_backbone(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", default=None)


def _add_reference(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", default=None, choices=("reference", "trajectory"))
    parser.add_argument("--reference-video", dest="reference_video", default=None)
    parser.add_argument("--trajectory", default=None, help="ベンチマーク軌跡名、または軌跡レコードのパス")
    parser.add_argument("--frames", type=int, default=None)
    parser.add_argument("--height", type=int, default=None)
    parser.add_argument("--width", type=int, default=None)
    parser.add_argument("--key-points", dest="key_points", default=None, help="frame:y:x;frame:y:x")
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--local", type=int, default=None)
    parser.add_argument("--t-prime", dest="t_prime", type=int, default=None)
    parser.add_argument("--tap-layers", dest="tap_layers", default=None, help="1,2,3")
    parser.add_argument("--temperature-mode", dest="temperature_mode", default=None, choices=("divide", "multiply"))
    parser.add_argument("--pattern-seed", dest="pattern_seed", type=int, default=None)
    parser.add_argument("--sampling-steps", dest="sampling_steps", type=int, default=None)


def _add_guidance(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--label", type=int, default=None)
    parser.add_argument("--sigma", type=float, default=None)
    parser.add_argument("--guided-steps", dest="guided_steps", type=int, default=None)
    parser.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    parser.add_argument("--mix-lambda", dest="mix_lambda", type=float, default=None)
    parser.add_argument("--init-noise", dest="init_noise", default=None, choices=("inversion", "random"))
    parser.add_argument("--noise-seed", dest="noise_seed", type=int, default=None)
    parser.add_argument("--match-conditions", dest="match_conditions", action="store_true", default=None)
    parser.add_argument("--no-guidance", dest="no_guidance", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="学習不要の動きガイダンスによる動画生成ツール")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synthesize = subparsers.add_parser("synthesize", help="学習用の合成コーパスを生成")
    _add_common(synthesize)
    synthesize.add_argument("--corpus-dir", dest="corpus_dir", default=None)
    synthesize.add_argument("--num-videos", dest="num_videos", type=int, default=None)
    synthesize.add_argument("--num-classes", dest="num_classes", type=int, default=None)

    train = subparsers.add_parser("train", help="トイバックボーンを学習")
    _add_common(train)
    train.add_argument("--corpus-dir", dest="corpus_dir", default=None)
    train.add_argument("--train-steps", dest="train_steps", type=int, default=None)
    train.add_argument("--timesteps", type=int, default=None)
    train.add_argument("--train-seed", dest="train_seed", type=int, default=None)
    train.add_argument("--backbone-seed", dest="backbone_seed", type=int, default=None)

    generate = subparsers.add_parser("generate", help="動きガイド付きで動画を生成")
    _add_common(generate)
    _add_backbone(generate)
    _add_reference(generate)
    _add_guidance(generate)

    invert = subparsers.add_parser("invert", help="参照入力をDDIM反転")
    _add_common(invert)
    _add_backbone(invert)
    _add_reference(invert)

    extract = subparsers.add_parser("extract-pattern", help="参照入力から相関パターンを抽出")
    _add_common(extract)
    _add_backbone(extract)
    _add_reference(extract)

    evaluate = subparsers.add_parser("evaluate", help="生成結果を正解軌跡と比較")
    _add_common(evaluate)
    _add_backbone(evaluate)
    evaluate.add_argument("--results-dir", dest="results_dir", default=None)
    evaluate.add_argument("--gt-dir", dest="gt_dir", default=None)
    evaluate.add_argument("--background", default=None, help="r,g,b")

    benchmark = subparsers.add_parser("benchmark", help="ガイドあり/なしの比較ベンチマーク")
    _add_common(benchmark)
    _add_backbone(benchmark)
    _add_reference(benchmark)
    _add_guidance(benchmark)
    benchmark.add_argument("--benchmark-seeds", dest="benchmark_seeds", default=None, help="0,1")
    benchmark.add_argument("--sigma-sweep", dest="sigma_sweep", default=None, help="100,10000,1000000")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """メイン処理

    Returns:
        終了コード
    """
    # .envファイルから環境変数を読み込む
    load_dotenv()

    args = build_parser().parse_args(argv)
    logger = None

    try:
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        config = RunConfig.load(args.config, overrides)
        config.validate()

        context = RunContext(args.command, config)
        logger = setup_logger(log_file=context.log_path, log_level=config.log_level)
        context.logger = logger
        context.registry.logger = logger

        logger.info("=" * 60)
        logger.info(f"{COMMAND_TITLES[args.command]}を開始します")
        logger.info("=" * 60)

        with context:
            outcome = COMMANDS[args.command](config, context, logger)

        logger.info("=" * 60)
        logger.info("処理が完了しました！")
        logger.info(f"  {outcome}")
        logger.info("=" * 60)

        incomplete = context.registry.get_incomplete()
        if incomplete:
            run_ids = ", ".join(record.run_id for record in incomplete)
            logger.warning(f"未完了の実行が{len(incomplete)}件あります: {run_ids}")

        if getattr(outcome, "error_count", 0) > 0:
            return EXIT_RUNTIME
        return EXIT_OK

    except (ConfigurationError, ValidationError) as e:
        if logger:
            logger.error(f"設定エラー: {e}", exc_info=True)
        else:
            print(f"設定エラー: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationError as e:
        steps = len(e.trace) if e.trace is not None else 0
        if logger:
            logger.error(f"生成エラー (完了したガイドステップ: {steps}): {e}", exc_info=True)
        else:
            print(f"生成エラー: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except MotionGuidanceError as e:
        if logger:
            logger.error(f"実行エラー: {e}", exc_info=True)
        else:
            print(f"実行エラー: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        if logger:
            logger.error(f"予期しないエラーが発生しました: {e}", exc_info=True)
        else:
            print(f"予期しないエラーが発生しました: {e}", file=sys.stderr)
            import traceback
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
