"""ロギング設定モジュール

アプリケーション全体のロギング設定を管理します。
"""
import sys
import logging
from pathlib import Path
from typing import Optional, Union

LOGGER_NAME = "motion_guidance"


def resolve_level(level: Union[int, str]) -> int:
    """"INFO" などのレベル名を数値に変換"""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(level.upper())
    if not isinstance(value, int):
        raise ValueError(f"未知のログレベルです: {level}")
    return value


def setup_logger(
    name: str = LOGGER_NAME,
    log_file: Optional[Union[str, Path]] = None,
    log_level: Union[int, str] = logging.INFO,
    console: bool = True,
) -> logging.Logger:
    """ロガーを設定

    Args:
        name: ロガー名
        log_file: ログファイルのパス(Noneの場合はファイル出力なし)
        log_level: ログレベル
        console: コンソール出力を行うか

    Returns:
        設定済みのロガー
    """
    level = resolve_level(log_level)
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 既存のハンドラーをクリア(重複を防ぐ)
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_path, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        ))
        logger.addHandler(file_handler)

    if console:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(level)
        console_handler.setFormatter(logging.Formatter(
            "%(asctime)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        ))
        logger.addHandler(console_handler)

    return logger
