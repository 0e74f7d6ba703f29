"""モーションガイダンスの例外クラス

再利用可能で階層的なエラークラスを定義します。
"""
from typing import Optional, Sequence


class MotionGuidanceError(Exception):
    """モーションガイダンス関連の基底エラー

    すべてのモジュールのエラーの基底クラスです。
    """

    def __init__(self, message: str):
        """エラーの初期化

        Args:
            message: エラーメッセージ
        """
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class ConfigurationError(MotionGuidanceError):
    """設定エラー

    設定が不正、不足、または未知のキーを含む場合に発生します。
    """

    def __init__(self, message: str, missing_fields: Optional[list] = None):
        if missing_fields:
            fields_str = ", ".join(missing_fields)
            message = f"{message} (問題のあるフィールド: {fields_str})"
        super().__init__(message)
        self.missing_fields = missing_fields


class ValidationError(MotionGuidanceError):
    """入力値のバリデーションエラー"""

    def __init__(self, message: str = "入力値が不正です", field: Optional[str] = None):
        if field:
            message = f"{message}: {field}"
        super().__init__(message)
        self.field = field


class ShapeMismatchError(ValidationError):
    """テンソル形状の不一致エラー"""

    def __init__(
        self,
        message: str = "テンソルの形状が一致しません",
        expected: Optional[Sequence[int]] = None,
        actual: Optional[Sequence[int]] = None,
    ):
        if expected is not None or actual is not None:
            message = f"{message} (期待: {tuple(expected) if expected is not None else '?'}, 実際: {tuple(actual) if actual is not None else '?'})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TrajectoryError(ValidationError):
    """軌跡エラー

    図形やボックスがフレーム外に出る場合に発生します。
    """

    def __init__(self, message: str = "軌跡がフレームに収まりません", frame_index: Optional[int] = None):
        if frame_index is not None:
            message = f"{message} (フレーム: {frame_index})"
        super().__init__(message)
        self.frame_index = frame_index


class ContainerFormatError(MotionGuidanceError):
    """テンソルコンテナのフォーマットエラー

    ヘッダーの破損、ペイロードの欠落、メタデータとの不一致で発生します。
    """

    def __init__(self, message: str = "テンソルコンテナの形式が不正です", path: Optional[str] = None):
        if path:
            message = f"{message}: {path}"
        super().__init__(message)
        self.path = path


class CheckpointError(MotionGuidanceError):
    """チェックポイントの読み書きエラー"""

    def __init__(self, message: str, path: Optional[str] = None, original_error: Optional[Exception] = None):
        if path:
            message = f"{message}: {path}"
        super().__init__(message)
        self.path = path
        self.original_error = original_error

    def __str__(self) -> str:
        msg = self.message
        if self.original_error:
            msg = f"{msg}: {self.original_error}"
        return msg


class NonFiniteError(MotionGuidanceError):
    """数値エラー

    損失・勾配・潜在変数にNaNやInfが現れた場合に発生します。
    """

    def __init__(self, message: str = "非有限値が検出されました", step: Optional[int] = None, trace: Optional[list] = None):
        if step is not None:
            message = f"{message} (ステップ: {step})"
        super().__init__(message)
        self.step = step
        self.trace = trace or []


class TrainingDivergenceError(MotionGuidanceError):
    """学習の発散エラー"""

    def __init__(self, step: int, loss: float, initial_loss: float):
        message = (
            f"学習が発散しました (ステップ: {step}, 損失: {loss:.4f}, "
            f"初期損失: {initial_loss:.4f})"
        )
        super().__init__(message)
        self.step = step
        self.loss = loss
        self.initial_loss = initial_loss


class StructureMismatchError(ValidationError):
    """パターンバンドルの構造不一致エラー"""

    def __init__(self, message: str = "パターンバンドルの構造が一致しません", key: Optional[tuple] = None):
        if key is not None:
            message = f"{message} (最初に異なるキー: {key})"
        super().__init__(message)
        self.key = key


class GenerationError(MotionGuidanceError):
    """生成処理エラー

    サンプリング中の失敗を、その時点までのトレースと共に保持します。
    """

    def __init__(self, message: str, trace: Optional[object] = None, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.trace = trace
        self.original_error = original_error

    def __str__(self) -> str:
        msg = self.message
        if self.original_error:
            msg = f"{msg}: {self.original_error}"
        return msg
