"""トイ3Dデノイザーモジュール

ダウン/ミッド/アップブロック、空間アテンション、時間アテンションを持つ
小規模なε予測ネットワーク ε_θ(z_t, t, y) を定義します。
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import ShapeMismatchError, ValidationError
from .layers import (
    Downsample,
    ResBlock,
    SpatialAttention,
    TemporalAttention,
    Upsample,
    spatial_conv,
    timestep_embedding,
)
from .taps import FeatureTaps, TapSet

PLACEMENTS = ("down", "up")


@dataclass
class BackboneConfig:
    """バックボーンの構成

    時間アテンションは各解像度レベルの ``temporal_placement`` に配置され、
    タップレイヤー番号はフォワードの呼び出し順に1から振られます。
    """
    latent_channels: int = 4
    channels: Tuple[int, ...] = (32, 64)
    temporal_placement: Tuple[str, ...] = ("down", "up")
    spatial_attention_levels: Tuple[int, ...] = (1,)
    num_classes: int = 2
    heads: int = 4
    emb_dim: int = 64
    groups: int = 8
    max_frames: int = 128
    seed: int = 0

    @property
    def num_levels(self) -> int:
        return len(self.channels)

    @property
    def num_temporal_layers(self) -> int:
        return self.num_levels * len(self.temporal_placement)

    def validate(self) -> None:
        errors = []
        if self.num_levels < 1:
            errors.append("channels")
        if not self.temporal_placement or any(p not in PLACEMENTS for p in self.temporal_placement):
            errors.append("temporal_placement")
        if any(c % self.groups != 0 or c % self.heads != 0 for c in self.channels):
            errors.append("channels")
        if any(not 0 <= level < self.num_levels for level in self.spatial_attention_levels):
            errors.append("spatial_attention_levels")
        if self.num_classes < 1:
            errors.append("num_classes")
        if errors:
            raise ValidationError("バックボーン構成が不正です", field=", ".join(sorted(set(errors))))

    def to_record(self) -> Dict[str, str]:
        return {
            "LATENT_CHANNELS": str(self.latent_channels),
            "CHANNELS": ",".join(str(c) for c in self.channels),
            "TEMPORAL_PLACEMENT": ",".join(self.temporal_placement),
            "SPATIAL_ATTENTION_LEVELS": ",".join(str(level) for level in self.spatial_attention_levels),
            "NUM_CLASSES": str(self.num_classes),
            "HEADS": str(self.heads),
            "EMB_DIM": str(self.emb_dim),
            "GROUPS": str(self.groups),
            "MAX_FRAMES": str(self.max_frames),
            "SEED": str(self.seed),
        }

    @classmethod
    def from_record(cls, record: Dict[str, Optional[str]]) -> "BackboneConfig":
        def ints(value: Optional[str]) -> Tuple[int, ...]:
            return tuple(int(v) for v in (value or "").split(",") if v != "")

        return cls(
            latent_channels=int(record["LATENT_CHANNELS"]),
            channels=ints(record["CHANNELS"]),
            temporal_placement=tuple(p for p in (record.get("TEMPORAL_PLACEMENT") or "").split(",") if p),
            spatial_attention_levels=ints(record.get("SPATIAL_ATTENTION_LEVELS")),
            num_classes=int(record["NUM_CLASSES"]),
            heads=int(record["HEADS"]),
            emb_dim=int(record["EMB_DIM"]),
            groups=int(record["GROUPS"]),
            max_frames=int(record["MAX_FRAMES"]),
            seed=int(record["SEED"]),
        )


class ToyVideoDenoiser(nn.Module):
    """トイ規模の3D U-Net型デノイザー

    条件ラベルは学習可能な埋め込みで、最後の行 (インデックス ``num_classes``) がヌル条件 ∅ です。
    重みは ``config.seed`` から決定論的に初期化され、グローバルな乱数状態は変更しません。
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self._build(config)

    def _build(self, config: BackboneConfig) -> None:
        ch = config.channels
        emb = config.emb_dim
        self.null_label = config.num_classes
        self.time_mlp = nn.Sequential(nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb))
        self.label_embedding = nn.Embedding(config.num_classes + 1, emb)
        self.conv_in = spatial_conv(config.latent_channels, ch[0])

        temporal: List[TemporalAttention] = []

        def make_temporal(channels: int, level: int) -> TemporalAttention:
            module = TemporalAttention(channels, config.heads, config.max_frames)
            module.layer_id = len(temporal) + 1
            module.level = level
            temporal.append(module)
            return module

        self.down_res = nn.ModuleList()
        self.down_spatial = nn.ModuleList()
        self.down_temporal = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        in_ch = ch[0]
        for level, width in enumerate(ch):
            self.down_res.append(ResBlock(in_ch, width, emb, config.groups))
            self.down_spatial.append(SpatialAttention(width, config.heads) if level in config.spatial_attention_levels else nn.Identity())
            self.down_temporal.append(make_temporal(width, level) if "down" in config.temporal_placement else nn.Identity())
            if level < len(ch) - 1:
                self.downsamplers.append(Downsample(width, ch[level + 1]))
                in_ch = ch[level + 1]

        self.mid_res = ResBlock(ch[-1], ch[-1], emb, config.groups)
        self.mid_spatial = SpatialAttention(ch[-1], config.heads)

        self.up_res = nn.ModuleList()
        self.up_temporal = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for level in reversed(range(len(ch))):
            width = ch[level]
            self.up_res.append(ResBlock(width * 2, width, emb, config.groups))
            self.up_temporal.append(make_temporal(width, level) if "up" in config.temporal_placement else nn.Identity())
            if level > 0:
                self.upsamplers.append(Upsample(width, ch[level - 1]))

        self.norm_out = nn.GroupNorm(config.groups, ch[0])
        self.conv_out = spatial_conv(ch[0], config.latent_channels)
        # フォワードの呼び出し順に並ぶ
        self.temporal_layers: List[TemporalAttention] = temporal
        self.tap_scales = {m.layer_id: 2 ** m.level for m in temporal}

    @property
    def dtype(self) -> torch.dtype:
        return self.conv_in.weight.dtype

    @property
    def num_taps(self) -> int:
        return len(self.temporal_layers)

    def forward(self, z: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """バッチ入力のノイズ予測

        Args:
            z: [B, C, F, H, W]
            t: タイムステップ [B]
            y: 条件ラベル [B] (``num_classes`` はヌル条件)
        """
        emb = self.time_mlp(timestep_embedding(t, self.config.emb_dim).to(self.dtype))
        emb = emb + self.label_embedding(y)

        h = self.conv_in(z)
        skips = []
        for level in range(self.config.num_levels):
            h = self.down_res[level](h, emb)
            h = self.down_spatial[level](h)
            h = self.down_temporal[level](h)
            skips.append(h)
            if level < self.config.num_levels - 1:
                h = self.downsamplers[level](h)

        h = self.mid_spatial(self.mid_res(h, emb))

        for index in range(self.config.num_levels):
            h = torch.cat([h, skips.pop()], dim=1)
            h = self.up_res[index](h, emb)
            h = self.up_temporal[index](h)
            if index < self.config.num_levels - 1:
                h = self.upsamplers[index](h)

        return self.conv_out(F.silu(self.norm_out(h)))

    def _check_input(self, z: torch.Tensor) -> None:
        if z.dim() != 5:
            raise ShapeMismatchError("潜在変数は[B, C, F, H, W]である必要があります", actual=z.shape)
        factor = 2 ** (self.config.num_levels - 1)
        _, c, f, h, w = z.shape
        if c != self.config.latent_channels or h % factor or w % factor or f > self.config.max_frames:
            raise ShapeMismatchError(
                f"潜在変数の形状がバックボーン構成と一致しません (H,Wは{factor}の倍数)",
                expected=(self.config.latent_channels, "F", "H", "W"),
                actual=z.shape[1:],
            )

    def _label_tensor(self, y: Optional[int], batch: int) -> torch.Tensor:
        label = self.null_label if y is None else y
        if not 0 <= label <= self.null_label:
            raise ValidationError(f"条件ラベルが語彙外です: {y}", field="y")
        return torch.full((batch,), label, dtype=torch.long, device=self.conv_in.weight.device)

    def predict_noise(self, z: torch.Tensor, t: int, y: Optional[int]) -> torch.Tensor:
        """単一動画 [C, F, H, W] またはバッチ [B, C, F, H, W] のノイズ予測"""
        single = z.dim() == 4
        batch = z.unsqueeze(0) if single else z
        self._check_input(batch)
        timesteps = torch.full((batch.shape[0],), int(t), dtype=torch.long, device=batch.device)
        eps = self(batch, timesteps, self._label_tensor(y, batch.shape[0]))
        return eps[0] if single else eps

    def denoise_with_taps(
        self,
        z: torch.Tensor,
        t: int,
        y: Optional[int],
        layer_ids: Optional[Sequence[int]] = None,
    ) -> Tuple[torch.Tensor, TapSet]:
        """ノイズ予測と同時に時間アテンションの出力を捕捉

        Args:
            z: 単一動画の潜在変数 [C, F, H, W]
            t: タイムステップ
            y: 条件 (Noneならヌル条件)
            layer_ids: 捕捉するレイヤー (Noneなら全て)

        Returns:
            (ε̂ [C, F, H, W], TapSet)。ε̂ はタップなしのフォワードと同一です。
        """
        if z.dim() != 4:
            raise ShapeMismatchError("タップ付きのフォワードは単一動画 [C, F, H, W] のみ対応します", actual=z.shape)
        with FeatureTaps(self.temporal_layers, layer_ids) as taps:
            eps = self.predict_noise(z, t, y)
        return eps, taps.to_tapset(self.tap_scales)


def build_denoiser(config: BackboneConfig, dtype: Union[torch.dtype, None] = None) -> ToyVideoDenoiser:
    model = ToyVideoDenoiser(config)
    if dtype is not None:
        model = model.to(dtype)
    return model.eval()
