"""実行ディレクトリ管理モジュール

各コマンドの実行ディレクトリ・設定スナップショット・実行レジストリへの記録を管理します。

実行ディレクトリ::

    <output_root>/<run_id>/
        config.env   実行設定のスナップショット
        INCOMPLETE   完了するまで存在する目印
        run.log      ログ
"""
import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import torch

from src.cache import RunRecord, SQLiteRunRegistry
from src.config import RunConfig
from src.converters import write_record

SNAPSHOT_FILE = "config.env"
INCOMPLETE_MARKER = "INCOMPLETE"
LOG_FILE = "run.log"


def torch_dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


def make_run_id(command: str, config: RunConfig) -> str:
    if config.run_name:
        return config.run_name
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S-%f")
    digest = hashlib.sha256(repr(sorted(config.to_record().items())).encode("utf-8")).hexdigest()[:8]
    return f"{command}-{stamp}-{digest}"


class RunContext:
    """1回のコマンド実行

    開始時にレジストリへ ``incomplete`` で登録し、正常終了時に ``complete`` にします。
    例外で抜けた場合は未完了のまま残ります。
    """

    def __init__(self, command: str, config: RunConfig, logger: Optional[logging.Logger] = None):
        self.command = command
        self.config = config
        self.logger = logger or logging.getLogger(__name__)
        self.run_id = make_run_id(command, config)
        self.run_dir = Path(config.output_root) / self.run_id
        self.registry = SQLiteRunRegistry(config.resolved_registry_path, logger=self.logger)
        self.content_hash: Optional[str] = None

    @property
    def log_path(self) -> Path:
        return Path(self.config.log_file) if self.config.log_file else self.run_dir / LOG_FILE

    def __enter__(self) -> "RunContext":
        self.run_dir.mkdir(parents=True, exist_ok=True)
        record = self.config.to_record()
        record["COMMAND"] = self.command
        record["RUN_ID"] = self.run_id
        write_record(self.run_dir / SNAPSHOT_FILE, record)
        (self.run_dir / INCOMPLETE_MARKER).write_text(self.command + "\n", encoding="utf-8")
        self.registry.save(RunRecord(
            run_id=self.run_id,
            command=self.command,
            run_dir=str(self.run_dir),
            config=self.config.to_record(),
        ))
        self.logger.info(f"実行ディレクトリ: {self.run_dir}")
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            self.logger.warning(f"実行は未完了のまま終了しました: {self.run_id}")
            return
        self.registry.mark_complete(self.run_id, self.content_hash)
        (self.run_dir / INCOMPLETE_MARKER).unlink(missing_ok=True)

    def path(self, name: str) -> Path:
        return self.run_dir / name
