"""ペイロード処理モジュール

軌跡・図形・キーポイントのデータクラスと、キー/値レコードとの相互変換を行います。

レコードのスキーマ (dotenv形式の ``KEY=VALUE``):

- TrajectorySpec: ``FRAMES=<F>`` と ``BOX_<f>=cx,cy,w,h`` (f は0始まり、正規化座標)
- MotionSpec: 上記に加えて ``SHAPE=square|circle``, ``SIZE=<半径px>``,
  ``COLOR=r,g,b``, ``BACKGROUND=r,g,b`` (各成分は[0,1])
- KeyPoint: ``frame:y:x`` (ピクセル座標、複数は ``;`` 区切り)
"""
from typing import List, Dict, Tuple, Mapping, Optional
from dataclasses import dataclass, field

from src.exceptions import ValidationError, TrajectoryError

SHAPE_KINDS = ("square", "circle")


@dataclass(frozen=True)
class Box:
    """正規化座標 (中心x, 中心y, 幅, 高さ) の軸平行ボックス"""
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> Tuple[float, float, float, float]:
        """(x0, y0, x1, y1) を正規化座標で返す"""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def to_pixels(self, height: int, width: int) -> Tuple[float, float, float, float]:
        """(x0, y0, x1, y1) をピクセル座標 (実数) で返す"""
        x0, y0, x1, y1 = self.corners()
        return (x0 * width, y0 * height, x1 * width, y1 * height)

    def intersects_frame(self) -> bool:
        x0, y0, x1, y1 = self.corners()
        return x1 > 0.0 and y1 > 0.0 and x0 < 1.0 and y0 < 1.0

    def to_record_value(self) -> str:
        return f"{self.cx!r},{self.cy!r},{self.w!r},{self.h!r}"

    @classmethod
    def from_record_value(cls, value: str) -> "Box":
        parts = _parse_floats(value, 4, "BOX")
        return cls(*parts)


@dataclass(frozen=True)
class TrajectorySpec:
    """フレームごとに1つのボックスを持つ軌跡"""
    boxes: Tuple[Box, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def num_frames(self) -> int:
        return len(self.boxes)

    def validate(self) -> None:
        """軌跡の妥当性を検証

        Raises:
            TrajectoryError: 幅・高さが0以下、またはボックスがフレームと交差しない場合
        """
        if not self.boxes:
            raise ValidationError("軌跡にボックスがありません", field="boxes")
        for index, box in enumerate(self.boxes):
            if box.w <= 0 or box.h <= 0:
                raise TrajectoryError("ボックスの幅・高さは正である必要があります", frame_index=index)
            if not box.intersects_frame():
                raise TrajectoryError("ボックスがフレームと交差しません", frame_index=index)

    def centers(self) -> List[Tuple[float, float]]:
        """フレームごとの (cx, cy)"""
        return [(box.cx, box.cy) for box in self.boxes]

    def to_record(self) -> Dict[str, str]:
        record = {"FRAMES": str(self.num_frames)}
        for index, box in enumerate(self.boxes):
            record[f"BOX_{index}"] = box.to_record_value()
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Optional[str]]) -> "TrajectorySpec":
        """キー/値レコードから軌跡を作成"""
        if "FRAMES" not in record or record["FRAMES"] is None:
            raise ValidationError("軌跡レコードにFRAMESがありません", field="FRAMES")
        num_frames = int(record["FRAMES"])
        boxes = []
        for index in range(num_frames):
            value = record.get(f"BOX_{index}")
            if value is None:
                raise ValidationError("軌跡レコードのボックスが不足しています", field=f"BOX_{index}")
            boxes.append(Box.from_record_value(value))
        return cls(tuple(boxes))


@dataclass(frozen=True)
class MotionSpec:
    """合成動画に描画する移動図形の仕様"""
    shape: str
    size: int  # 半径 (ピクセル)。0なら1ピクセルの点
    color: Tuple[float, float, float]
    trajectory: TrajectorySpec
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> None:
        if self.shape not in SHAPE_KINDS:
            raise ValidationError(f"未知の図形です: {self.shape}", field="SHAPE")
        if self.size < 0:
            raise ValidationError("図形サイズは0以上である必要があります", field="SIZE")
        for name, rgb in (("COLOR", self.color), ("BACKGROUND", self.background)):
            if len(rgb) != 3 or any(c < 0.0 or c > 1.0 for c in rgb):
                raise ValidationError("色は[0,1]のRGBである必要があります", field=name)
        self.trajectory.validate()

    def to_record(self) -> Dict[str, str]:
        record = {
            "SHAPE": self.shape,
            "SIZE": str(self.size),
            "COLOR": ",".join(repr(c) for c in self.color),
            "BACKGROUND": ",".join(repr(c) for c in self.background),
        }
        record.update(self.trajectory.to_record())
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Optional[str]]) -> "MotionSpec":
        return cls(
            shape=record.get("SHAPE") or "square",
            size=int(record.get("SIZE") or 0),
            color=tuple(_parse_floats(record.get("COLOR") or "0,0,0", 3, "COLOR")),
            trajectory=TrajectorySpec.from_record(record),
            background=tuple(_parse_floats(record.get("BACKGROUND") or "1,1,1", 3, "BACKGROUND")),
        )


@dataclass(frozen=True)
class KeyPoint:
    """参照動画上のキーポイント (フレーム番号は0始まり、位置はピクセル座標)"""
    frame: int
    y: int
    x: int

    def validate(self, num_frames: int, height: int, width: int) -> None:
        if not 0 <= self.frame < num_frames:
            raise ValidationError(f"キーポイントのフレームが範囲外です: {self.frame}", field="frame")
        if not (0 <= self.y < height and 0 <= self.x < width):
            raise ValidationError(f"キーポイントがフレーム外です: ({self.y}, {self.x})", field="position")

    def to_record_value(self) -> str:
        return f"{self.frame}:{self.y}:{self.x}"

    @classmethod
    def from_record_value(cls, value: str) -> "KeyPoint":
        parts = value.strip().split(":")
        if len(parts) != 3:
            raise ValidationError(f"キーポイントの形式が不正です (frame:y:x): {value}", field="KEY_POINTS")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError as e:
            raise ValidationError(f"キーポイントの形式が不正です: {value}", field="KEY_POINTS") from e


def parse_key_points(value: Optional[str]) -> List[KeyPoint]:
    """``frame:y:x;frame:y:x`` 形式の文字列をキーポイントのリストに変換"""
    if not value:
        return []
    return [KeyPoint.from_record_value(item) for item in value.split(";") if item.strip()]


@dataclass
class PointPath:
    """フレームごとのピクセル位置 (外部から注入する正解軌跡)"""
    start_frame: int
    positions: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def key_point(self) -> KeyPoint:
        y, x = self.positions[0]
        return KeyPoint(self.start_frame, y, x)


def _parse_floats(value: str, count: int, field_name: str) -> List[float]:
    try:
        parts = [float(v) for v in value.split(",")]
    except ValueError as e:
        raise ValidationError(f"数値リストの形式が不正です: {value}", field=field_name) from e
    if len(parts) != count:
        raise ValidationError(f"{count}個の値が必要です: {value}", field=field_name)
    return parts
