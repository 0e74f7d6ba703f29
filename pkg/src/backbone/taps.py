"""特徴タップモジュール

時間アテンションモジュールの出力をフォワードフックで捕捉します。
捕捉した特徴はデタッチしないため、潜在変数に対して微分可能です。
"""
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from src.exceptions import ValidationError


@dataclass(frozen=True)
class FeatureVolume:
    """1つの時間アテンションモジュールの出力 [C_l, F, H_l, W_l]"""
    data: torch.Tensor
    layer_id: int
    scale: int

    @property
    def num_frames(self) -> int:
        return int(self.data.shape[1])

    @property
    def grid_size(self) -> Tuple[int, int]:
        return int(self.data.shape[2]), int(self.data.shape[3])


@dataclass(frozen=True)
class TapSet:
    """フォワードパス1回分の特徴ボリューム (layer_id の昇順)"""
    volumes: Tuple[FeatureVolume, ...]

    def __len__(self) -> int:
        return len(self.volumes)

    def __iter__(self) -> Iterator[FeatureVolume]:
        return iter(self.volumes)

    @property
    def layer_ids(self) -> List[int]:
        return [v.layer_id for v in self.volumes]

    def get(self, layer_id: int) -> FeatureVolume:
        for volume in self.volumes:
            if volume.layer_id == layer_id:
                return volume
        raise ValidationError(f"タップされていないレイヤーです: {layer_id}", field="layer_id")

    def select(self, layer_ids: Optional[Iterable[int]]) -> "TapSet":
        if layer_ids is None:
            return self
        wanted = list(layer_ids)
        return TapSet(tuple(self.get(layer_id) for layer_id in sorted(wanted)))

    def detach(self) -> "TapSet":
        return TapSet(tuple(
            FeatureVolume(v.data.detach(), v.layer_id, v.scale) for v in self.volumes
        ))


class FeatureTaps:
    """時間アテンションの出力を捕捉するコンテキストマネージャー

    Example:
        with FeatureTaps(model.temporal_layers, layer_ids=[1, 3]) as taps:
            model(z, t, y)
        tapset = taps.to_tapset(scales)
    """

    def __init__(self, modules: Sequence[nn.Module], layer_ids: Optional[Iterable[int]] = None):
        wanted = None if layer_ids is None else set(layer_ids)
        self.targets = [m for m in modules if wanted is None or m.layer_id in wanted]
        if wanted is not None:
            available = {m.layer_id for m in modules}
            unknown = sorted(wanted - available)
            if unknown:
                raise ValidationError(f"存在しないタップレイヤーです: {unknown}", field="tap_layers")
        self.activations: List[Tuple[int, torch.Tensor]] = []
        self.handles = []

    def __enter__(self) -> "FeatureTaps":
        self.activations = []
        for module in self.targets:
            self.handles.append(module.register_forward_hook(self._record))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()

    def _record(self, module: nn.Module, inputs, output: torch.Tensor) -> None:
        self.activations.append((module.layer_id, output))

    def release(self) -> None:
        for handle in self.handles:
            handle.remove()
        self.handles = []

    def to_tapset(self, scales: dict, batch_index: int = 0) -> TapSet:
        """捕捉した出力を TapSet に変換"""
        volumes = sorted(
            (FeatureVolume(output[batch_index], layer_id, scales[layer_id]) for layer_id, output in self.activations),
            key=lambda v: v.layer_id,
        )
        return TapSet(tuple(volumes))
