"""相関パターン抽出モジュール

キーポイントの特徴と後続フレームの全空間特徴とのコサイン類似度を
温度付きソフトマックスで正規化した対応マップ (相関パターン) を計算します。
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import torch
import torch.nn.functional as F

from src.backbone.taps import FeatureVolume, TapSet
from src.data_synth.container import write_container
from src.exceptions import StructureMismatchError, ValidationError

NORM_EPS = 1e-8
TEMPERATURE_MODES = ("divide", "multiply")

# (layer_id, point_index, source_frame)
PatternKey = Tuple[int, int, int]


@dataclass(frozen=True)
class CorrelationPattern:
    """1つのキーポイント・ソースフレーム・レイヤーの相関パターン

    ``maps[n]`` はフレーム ``target_frames[n]`` 上の [H_l, W_l] の分布で、総和は1です。
    """
    maps: torch.Tensor
    source_frame: int
    target_frames: Tuple[int, ...]
    point: Tuple[int, int]
    layer_id: int
    tau: float
    mode: str = "divide"

    @property
    def local(self) -> int:
        return len(self.target_frames)

    def detach(self) -> "CorrelationPattern":
        return CorrelationPattern(
            self.maps.detach(), self.source_frame, self.target_frames, self.point, self.layer_id, self.tau, self.mode
        )


@dataclass(frozen=True)
class PatternBundle:
    """損失に使う全 (レイヤー, キーポイント, ソースフレーム) の相関パターン

    抽出後は不変で、全タイムステップで共有されます。
    """
    patterns: Mapping[PatternKey, CorrelationPattern]
    tracks: Mapping[int, object] = field(default_factory=dict)

    def keys(self) -> List[PatternKey]:
        return sorted(self.patterns)

    def __iter__(self) -> Iterator[PatternKey]:
        return iter(self.keys())

    def __len__(self) -> int:
        return len(self.patterns)

    def __getitem__(self, key: PatternKey) -> CorrelationPattern:
        return self.patterns[key]

    @property
    def layer_ids(self) -> List[int]:
        return sorted({key[0] for key in self.patterns})

    @property
    def num_points(self) -> int:
        return len({key[1] for key in self.patterns})

    def detach(self) -> "PatternBundle":
        return PatternBundle({k: p.detach() for k, p in self.patterns.items()}, dict(self.tracks))

    def export(self, directory: Union[str, Path]) -> Path:
        """各パターンをテンソルコンテナとして書き出す (確認用)"""
        directory = Path(directory)
        for (layer_id, point_index, frame), pattern in sorted(self.patterns.items()):
            write_container(
                pattern.maps.detach().cpu(),
                directory / f"layer{layer_id}_point{point_index}_frame{frame}.mgt",
                {
                    "layer_id": str(layer_id),
                    "point_index": str(point_index),
                    "source_frame": str(frame),
                    "target_frames": ",".join(str(i) for i in pattern.target_frames),
                    "grid_point": f"{pattern.point[0]},{pattern.point[1]}",
                    "tau": repr(pattern.tau),
                    "mode": pattern.mode,
                },
            )
        return directory


def _volume_data(volume: Union[FeatureVolume, torch.Tensor]) -> Tuple[torch.Tensor, int]:
    if isinstance(volume, FeatureVolume):
        return volume.data, volume.layer_id
    return volume, 0


def extract_pattern(
    volume: Union[FeatureVolume, torch.Tensor],
    point: Tuple[int, int],
    frame: int,
    tau: float,
    local: Optional[int] = None,
    mode: str = "divide",
    logger: Optional[logging.Logger] = None,
) -> CorrelationPattern:
    """キーポイントの相関パターンを抽出

    M_i(j,k) = softmax_{(j,k)}( sim(f_p, f_(i,j,k)) / τ )、i = frame+1 .. frame+local

    Args:
        volume: 特徴ボリューム [C, F, H_l, W_l]
        point: グリッド上の位置 (j, k)
        frame: ソースフレーム (0始まり、F−1未満)
        tau: 温度 (正)
        local: 後続フレームの範囲 (Noneなら残り全フレーム)
        mode: "divide" は sim/τ、"multiply" は sim·τ
        logger: ロガー

    Returns:
        相関パターン
    """
    logger = logger or logging.getLogger(__name__)
    data, layer_id = _volume_data(volume)
    if data.dim() != 4:
        raise ValidationError(f"特徴ボリュームは[C, F, H, W]である必要があります: {tuple(data.shape)}", field="volume")
    _, num_frames, height, width = data.shape
    if tau <= 0:
        raise ValidationError(f"温度は正である必要があります: {tau}", field="tau")
    if mode not in TEMPERATURE_MODES:
        raise ValidationError(f"未知の温度モードです: {mode}", field="mode")
    if not 0 <= frame < num_frames - 1:
        raise ValidationError(f"ソースフレームには後続フレームが必要です: {frame} (F={num_frames})", field="frame")
    if local is not None and local < 1:
        raise ValidationError(f"localは1以上である必要があります: {local}", field="local")
    j, k = point
    if not (0 <= j < height and 0 <= k < width):
        raise ValidationError(f"グリッド位置が範囲外です: {point} (grid={height}x{width})", field="point")

    remaining = num_frames - 1 - frame
    count = remaining if local is None else min(local, remaining)

    source = data[:, frame, j, k]
    targets = data[:, frame + 1: frame + 1 + count]
    if source.norm() < NORM_EPS or (targets.norm(dim=0) < NORM_EPS).any():
        logger.warning(
            f"ノルムがほぼ0の特徴があります。下限{NORM_EPS}で正規化します "
            f"(layer={layer_id}, frame={frame}, point={point})"
        )

    source_unit = F.normalize(source, dim=0, eps=NORM_EPS)
    target_unit = F.normalize(targets, dim=0, eps=NORM_EPS)
    similarity = torch.einsum("c,cnhw->nhw", source_unit, target_unit)
    logits = similarity / tau if mode == "divide" else similarity * tau
    maps = logits.flatten(1).softmax(dim=1).view(count, height, width)

    return CorrelationPattern(
        maps=maps,
        source_frame=frame,
        target_frames=tuple(range(frame + 1, frame + 1 + count)),
        point=(int(j), int(k)),
        layer_id=layer_id,
        tau=float(tau),
        mode=mode,
    )


def extract_matching_bundle(
    taps: TapSet,
    reference: PatternBundle,
    logger: Optional[logging.Logger] = None,
) -> PatternBundle:
    """参照バンドルと同じキー・位置・範囲で、現在の特徴から相関パターンを抽出

    Raises:
        StructureMismatchError: 参照バンドルのレイヤーがタップされていない場合
    """
    available = set(taps.layer_ids)
    patterns: Dict[PatternKey, CorrelationPattern] = {}
    for key in reference.keys():
        layer_id, _, frame = key
        if layer_id not in available:
            raise StructureMismatchError("現在の特徴に参照バンドルのレイヤーがありません", key=key)
        ref = reference[key]
        patterns[key] = extract_pattern(
            taps.get(layer_id),
            ref.point,
            frame,
            ref.tau,
            local=ref.local,
            mode=ref.mode,
            logger=logger,
        )
    return PatternBundle(patterns, dict(reference.tracks))
