"""SQLite実行レジストリ実装

SQLiteを使用した実行レジストリの実装です。
"""
import json
import sqlite3
import logging
from pathlib import Path
from typing import List, Optional
from datetime import datetime, timezone

from src.cache.base import RegistryBase, RunRecord, STATUS_COMPLETE, STATUS_INCOMPLETE


class SQLiteRunRegistry(RegistryBase):
    """SQLiteを使用した実行レジストリ"""

    def __init__(self, db_path: Path, logger: Optional[logging.Logger] = None):
        """
        Args:
            db_path: SQLiteデータベースファイルのパス
            logger: ロガー(オプション)
        """
        self.db_path = Path(db_path)
        self.logger = logger or logging.getLogger(__name__)
        self._init_database()

    def _init_database(self) -> None:
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    command TEXT NOT NULL,
                    run_dir TEXT NOT NULL,
                    config TEXT NOT NULL,
                    status TEXT NOT NULL DEFAULT 'incomplete',
                    content_hash TEXT,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)
            conn.execute("""
                CREATE INDEX IF NOT EXISTS idx_status
                ON runs(status)
            """)
            conn.commit()

    def _get_connection(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    @staticmethod
    def _to_record(row: sqlite3.Row) -> RunRecord:
        return RunRecord(
            run_id=row["run_id"],
            command=row["command"],
            run_dir=row["run_dir"],
            config=json.loads(row["config"]),
            status=row["status"],
            content_hash=row["content_hash"],
        )

    def save(self, record: RunRecord) -> None:
        try:
            now = datetime.now(timezone.utc).isoformat()
            config_json = json.dumps(record.config, ensure_ascii=False, sort_keys=True)
            with self._get_connection() as conn:
                conn.execute("""
                    INSERT INTO runs (run_id, command, run_dir, config, status, content_hash, created_at, updated_at)
                    VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                    ON CONFLICT(run_id) DO UPDATE SET
                        command = excluded.command,
                        run_dir = excluded.run_dir,
                        config = excluded.config,
                        status = excluded.status,
                        content_hash = excluded.content_hash,
                        updated_at = excluded.updated_at
                """, (
                    record.run_id, record.command, record.run_dir, config_json,
                    record.status, record.content_hash, now, now,
                ))
                conn.commit()

            self.logger.debug(f"実行記録を保存: run_id={record.run_id}, status={record.status}")
        except Exception as e:
            self.logger.error(f"実行記録の保存エラー (run_id={record.run_id}): {e}", exc_info=True)
            raise

    def get(self, run_id: str) -> Optional[RunRecord]:
        try:
            with self._get_connection() as conn:
                row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
                return None if row is None else self._to_record(row)
        except Exception as e:
            self.logger.error(f"実行記録の取得エラー (run_id={run_id}): {e}", exc_info=True)
            return None

    def get_incomplete(self) -> List[RunRecord]:
        records = []
        try:
            with self._get_connection() as conn:
                cursor = conn.execute(
                    "SELECT * FROM runs WHERE status = ? ORDER BY created_at ASC",
                    (STATUS_INCOMPLETE,),
                )
                for row in cursor:
                    try:
                        records.append(self._to_record(row))
                    except (ValueError, KeyError) as e:
                        self.logger.warning(f"実行記録の復元エラー: {e}")
                        continue
        except Exception as e:
            self.logger.error(f"未完了の実行記録の取得エラー: {e}", exc_info=True)
        return records

    def mark_complete(self, run_id: str, content_hash: Optional[str] = None) -> None:
        try:
            now = datetime.now(timezone.utc).isoformat()
            with self._get_connection() as conn:
                conn.execute("""
                    UPDATE runs
                    SET status = ?, content_hash = COALESCE(?, content_hash), updated_at = ?
                    WHERE run_id = ?
                """, (STATUS_COMPLETE, content_hash, now, run_id))
                conn.commit()

            self.logger.debug(f"完了マーク: run_id={run_id}")
        except Exception as e:
            self.logger.error(f"完了マークエラー (run_id={run_id}): {e}", exc_info=True)
            raise
