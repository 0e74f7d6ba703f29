"""実行レジストリ基底クラス

実行記録の保存先の抽象基底クラスです。
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional

STATUS_INCOMPLETE = "incomplete"
STATUS_COMPLETE = "complete"


@dataclass
class RunRecord:
    """1回のコマンド実行の記録"""
    run_id: str
    command: str
    run_dir: str
    config: Dict[str, str] = field(default_factory=dict)
    status: str = STATUS_INCOMPLETE
    content_hash: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "run_dir": self.run_dir,
            "config": dict(self.config),
            "status": self.status,
            "content_hash": self.content_hash,
        }


class RegistryBase(ABC):
    """実行レジストリの抽象基底クラス"""

    @abstractmethod
    def save(self, record: RunRecord) -> None:
        """実行記録を保存 (同じrun_idは上書き)

        Args:
            record: 保存する実行記録
        """
        pass

    @abstractmethod
    def get(self, run_id: str) -> Optional[RunRecord]:
        """実行記録を取得

        Args:
            run_id: 実行ID

        Returns:
            実行記録(存在しない場合はNone)
        """
        pass

    @abstractmethod
    def get_incomplete(self) -> List[RunRecord]:
        """完了していない実行記録を取得"""
        pass

    @abstractmethod
    def mark_complete(self, run_id: str, content_hash: Optional[str] = None) -> None:
        """実行を完了としてマーク

        Args:
            run_id: 実行ID
            content_hash: 成果物の内容ハッシュ(オプション)
        """
        pass
