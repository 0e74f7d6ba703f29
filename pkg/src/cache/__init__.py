"""実行レジストリモジュール

各コマンドの実行を記録し、中断された (未完了の) 実行を追跡します。
"""
from .base import RegistryBase, RunRecord, STATUS_COMPLETE, STATUS_INCOMPLETE
from .sqlite_cache import SQLiteRunRegistry

__all__ = [
    "RegistryBase",
    "RunRecord",
    "STATUS_COMPLETE",
    "STATUS_INCOMPLETE",
    "SQLiteRunRegistry",
]
