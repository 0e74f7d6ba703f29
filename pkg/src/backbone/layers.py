"""バックボーンのレイヤーモジュール

空間畳み込みのResBlock、フレームごとの空間アテンション、
空間位置ごとにフレーム方向だけを混ぜる時間アテンションを定義します。
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange


def timestep_embedding(timesteps: torch.Tensor, dim: int) -> torch.Tensor:
    """正弦波のタイムステップ埋め込み [B, dim]"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=timesteps.device) / max(half - 1, 1))
    args = timesteps.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


def frame_position_table(max_frames: int, dim: int) -> torch.Tensor:
    """フレーム位置の正弦波テーブル [max_frames, dim]"""
    return timestep_embedding(torch.arange(max_frames), dim)


def spatial_conv(in_channels: int, out_channels: int, **kwargs) -> nn.Conv3d:
    """フレームごとの3x3畳み込み (時間方向のカーネル幅1)"""
    return nn.Conv3d(in_channels, out_channels, kernel_size=(1, 3, 3), padding=(0, 1, 1), **kwargs)


class ResBlock(nn.Module):
    """埋め込み条件付きの残差ブロック"""

    def __init__(self, in_channels: int, out_channels: int, emb_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = spatial_conv(in_channels, out_channels)
        self.emb_proj = nn.Linear(emb_dim, out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = spatial_conv(out_channels, out_channels)
        self.skip = nn.Conv3d(in_channels, out_channels, kernel_size=1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SpatialAttention(nn.Module):
    """フレームごとの空間セルフアテンション"""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm = nn.LayerNorm(channels)
        self.to_qkv = nn.Linear(channels, channels * 3, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, f, h, w = x.shape
        tokens = rearrange(x, "b c f h w -> (b f) (h w) c")
        q, k, v = self.to_qkv(self.norm(tokens)).chunk(3, dim=-1)
        q, k, v = (rearrange(a, "n s (h d) -> n h s d", h=self.heads) for a in (q, k, v))
        attn = (torch.einsum("nhid,nhjd->nhij", q, k) * self.scale).softmax(dim=-1)
        out = rearrange(torch.einsum("nhij,nhjd->nhid", attn, v), "n h s d -> n s (h d)")
        out = rearrange(self.to_out(out), "(b f) (h w) c -> b c f h w", b=b, f=f, h=h, w=w)
        return x + out


class TemporalAttention(nn.Module):
    """時間アテンション

    各空間位置でフレーム方向のみのセルフアテンションを行います。
    異なる空間位置の特徴は直接は相互作用しません。
    フレーム位置埋め込みはクエリとキーにだけ加えるため、
    全フレームが同一の入力では出力も全フレームで同一になります。
    出力射影はゼロ初期化です。
    """

    def __init__(self, channels: int, heads: int = 4, max_frames: int = 128):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"チャネル数はヘッド数で割り切れる必要があります: {channels} % {heads}")
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.layer_id = 0
        self.norm = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)
        self.register_buffer("frame_positions", frame_position_table(max_frames, channels), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, f, h, w = x.shape
        tokens = rearrange(x, "b c f h w -> (b h w) f c")
        normed = self.norm(tokens)
        positioned = normed + self.frame_positions[:f].to(normed.dtype)

        q = rearrange(self.to_q(positioned), "n f (h d) -> n h f d", h=self.heads)
        k = rearrange(self.to_k(positioned), "n f (h d) -> n h f d", h=self.heads)
        v = rearrange(self.to_v(normed), "n f (h d) -> n h f d", h=self.heads)

        attn = torch.einsum("nhid,nhjd->nhij", q, k) * self.scale
        attn = attn.softmax(dim=-1)
        out = torch.einsum("nhij,nhjd->nhid", attn, v)
        out = self.to_out(rearrange(out, "n h f d -> n f (h d)"))
        out = rearrange(out, "(b h w) f c -> b c f h w", b=b, h=h, w=w)
        return x + out


class Downsample(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, kernel_size=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = spatial_conv(in_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=(1, 2, 2), mode="nearest"))
