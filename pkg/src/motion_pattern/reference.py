"""参照相関パターンモジュール

参照動画を1ステップだけノイズ化してヌル条件でデノイズし、
タップした特徴からキーポイントの相関パターン束を抽出します。
"""
import logging
from typing import Dict, Optional, Sequence, Tuple, Union

import torch

from src.backbone.codec import VideoCodec
from src.backbone.model import ToyVideoDenoiser
from src.backbone.taps import TapSet
from src.data_synth.rendering import PixelVideo
from src.diffusion.schedule import NoiseSchedule, add_noise
from src.exceptions import ValidationError
from src.payloads import KeyPoint, PointPath
from .pattern import CorrelationPattern, PatternBundle, PatternKey, extract_pattern
from .tracking import PointTrack, track_from_path, track_point

PointSource = Union[KeyPoint, PointPath]


def bundle_from_taps(
    taps: TapSet,
    points: Sequence[PointSource],
    tau: float,
    local: Optional[int] = None,
    mode: str = "divide",
    video_size: Optional[Tuple[int, int]] = None,
    logger: Optional[logging.Logger] = None,
) -> PatternBundle:
    """タップ済みの特徴からキーポイントごとの相関パターン束を作成

    KeyPoint は貪欲追跡し、PointPath はその軌跡をそのまま使います。
    各レイヤー・各ソースフレーム (開始フレーム〜F−2) で、追跡位置を起点にパターンを抽出します。
    """
    logger = logger or logging.getLogger(__name__)
    if not points:
        raise ValidationError("キーポイントが指定されていません", field="key_points")

    patterns: Dict[PatternKey, CorrelationPattern] = {}
    tracks: Dict[int, PointTrack] = {}
    for point_index, point in enumerate(points):
        for volume in taps:
            start = point.start_frame if isinstance(point, PointPath) else point.frame
            if start > volume.num_frames - 2:
                raise ValidationError(
                    f"キーポイントの後に続くフレームがありません (フレーム: {start}, F={volume.num_frames})",
                    field="key_points",
                )
        if isinstance(point, PointPath):
            track = track_from_path(taps, point, video_size)
        else:
            track = track_point(taps, point, tau, video_size=video_size, mode=mode, logger=logger)
        tracks[point_index] = track

        for volume in taps:
            last_frame = min(volume.num_frames - 2, track.end_frame)
            for frame in range(track.start_frame, last_frame + 1):
                patterns[(volume.layer_id, point_index, frame)] = extract_pattern(
                    volume,
                    track.at(volume.layer_id, frame),
                    frame,
                    tau,
                    local=local,
                    mode=mode,
                    logger=logger,
                )
    return PatternBundle(patterns, tracks)


def reference_pattern(
    x_ref: PixelVideo,
    points: Sequence[PointSource],
    t_prime: int,
    denoiser: ToyVideoDenoiser,
    codec: VideoCodec,
    schedule: NoiseSchedule,
    tau: float = 10.0,
    local: Optional[int] = None,
    mode: str = "divide",
    seed: int = 0,
    layer_ids: Optional[Sequence[int]] = None,
    logger: Optional[logging.Logger] = None,
) -> PatternBundle:
    """参照動画から相関パターン束を抽出

    Args:
        x_ref: 参照動画
        points: キーポイント、または注入する正解軌跡
        t_prime: 特徴抽出に使うタイムステップ (1以上)
        denoiser: デノイザー
        codec: ピクセル→潜在のコーデック
        schedule: ノイズスケジュール
        tau: 温度
        local: 後続フレームの範囲 (Noneなら残り全フレーム)
        mode: 温度モード
        seed: t′ノイズのシード
        layer_ids: タップするレイヤー (Noneなら全て)
        logger: ロガー

    Returns:
        参照相関パターン束 (勾配から切り離し済み)

    Raises:
        ValidationError: t′が範囲外、またはF < 2の場合
    """
    logger = logger or logging.getLogger(__name__)
    if not 1 <= t_prime <= schedule.T:
        raise ValidationError(f"t′は1以上T以下である必要があります: {t_prime}", field="t_prime")
    if x_ref.num_frames < 2:
        raise ValidationError(f"参照動画には2フレーム以上が必要です: {x_ref.num_frames}", field="num_frames")

    z_ref = codec.encode(x_ref).to(denoiser.dtype)
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn(z_ref.shape, generator=generator, dtype=z_ref.dtype)
    z_noisy = add_noise(z_ref, t_prime, noise, schedule)

    with torch.no_grad():
        _, taps = denoiser.denoise_with_taps(z_noisy, t_prime, None, layer_ids)
        bundle = bundle_from_taps(
            taps.detach(),
            points,
            tau,
            local=local,
            mode=mode,
            video_size=(x_ref.height, x_ref.width),
            logger=logger,
        )

    logger.info(
        f"参照相関パターンを抽出しました (レイヤー: {bundle.layer_ids}, "
        f"キーポイント: {bundle.num_points}, パターン数: {len(bundle)})"
    )
    return bundle.detach()
