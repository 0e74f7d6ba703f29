"""図形検出モジュール

背景色とのコントラストが閾値を超える画素の連結成分から、最大の成分の外接ボックスを返します。
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

CONTRAST_THRESHOLD = 0.5

# (x0, y0, x1, y1) ピクセル、x1/y1 は含まない
PixelBox = Tuple[int, int, int, int]


def detect_shape(
    frame: np.ndarray,
    background: Sequence[float] = (1.0, 1.0, 1.0),
    threshold: float = CONTRAST_THRESHOLD,
) -> Optional[PixelBox]:
    """1フレームから図形の外接ボックスを検出

    Args:
        frame: フレーム [3, H, W] (値は[0,1])
        background: 背景色
        threshold: 背景とのコントラスト閾値 (チャネルごとの差の最大値)

    Returns:
        最大の連結成分の外接ボックス。画素数が同じ場合は左上 (y0, x0) が小さい方。
        該当する画素がなければNone
    """
    frame = np.asarray(frame, dtype=np.float64)
    contrast = np.abs(frame - np.asarray(background, dtype=np.float64)[:, None, None]).max(axis=0)
    mask = contrast > threshold
    if not mask.any():
        return None

    labels, count = ndimage.label(mask)
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    slices = ndimage.find_objects(labels)
    best = min(
        range(count),
        key=lambda i: (-sizes[i], slices[i][0].start, slices[i][1].start),
    )
    rows, cols = slices[best]
    return (cols.start, rows.start, cols.stop, rows.stop)
