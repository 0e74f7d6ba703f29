"""テンソルコンテナモジュール

テンソルをヘッダー付きのバイナリファイルとサイドカーのメタデータに保存します。

バイトレイアウト (ヘッダーは常にリトルエンディアン):

====== ====== ==========================================
offset size   内容
====== ====== ==========================================
0      4      マジック ``b"MGTC"``
4      1      フォーマットバージョン (現在 1)
5      1      要素型コード (``DTYPE_CODES`` 参照)
6      1      ペイロードのエンディアン (書き込みは常に ``b"<"``、読み込みは ``b">"`` も可)
7      1      次元数 ``ndim``
8      8*ndim 各次元の長さ (uint64)
...    ...    C順序のフラットなペイロード
====== ====== ==========================================

サイドカー ``<path>.meta`` は dotenv 形式の ``KEY=VALUE`` レコードで、
``SHAPE`` と ``DTYPE`` に加えて任意のメタデータを保持します。
"""
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from dotenv import dotenv_values

from src.exceptions import ContainerFormatError

MAGIC = b"MGTC"
FORMAT_VERSION = 1
DTYPE_CODES: Dict[str, int] = {
    "float32": 1,
    "float64": 2,
    "float16": 3,
    "int64": 4,
    "int32": 5,
    "uint8": 6,
    "bool": 7,
}
CODE_DTYPES = {code: name for name, code in DTYPE_CODES.items()}
_FIXED_HEADER = struct.Struct("<4sBBcB")


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_container(
    x: Union[np.ndarray, torch.Tensor],
    path: Union[str, Path],
    metadata: Optional[Mapping[str, str]] = None,
) -> Path:
    """テンソルをコンテナファイルに書き込む

    Args:
        x: 保存する配列 (torch.Tensorの場合はCPUに移してから保存)
        path: 出力ファイルのパス
        metadata: サイドカーに追記するキー/値

    Returns:
        書き込んだファイルのパス
    """
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    array = np.ascontiguousarray(x)
    dtype_name = array.dtype.name
    if dtype_name not in DTYPE_CODES:
        raise ContainerFormatError(f"未対応の要素型です: {dtype_name}", path=str(path))

    # ペイロードは常にリトルエンディアン
    array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    endian = b"<"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    header = _FIXED_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_CODES[dtype_name], endian, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.tobytes(order="C"))

    record = {
        "SHAPE": ",".join(str(d) for d in array.shape),
        "DTYPE": dtype_name,
    }
    if metadata:
        record.update({k.upper(): str(v) for k, v in metadata.items()})
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        for key, value in record.items():
            f.write(f"{key}={value}\n")
    return path


def read_container(path: Union[str, Path]) -> np.ndarray:
    """コンテナファイルから配列を読み込む

    Raises:
        ContainerFormatError: ヘッダー破損、ペイロード不足、メタデータとの形状不一致の場合
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ContainerFormatError(f"コンテナを読み込めません ({e})", path=str(path)) from e

    shape, dtype = _parse_header(raw, path)
    offset = _FIXED_HEADER.size + 8 * len(shape)
    expected_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected_bytes:
        raise ContainerFormatError(
            f"ペイロード長が一致しません (期待: {expected_bytes}バイト, 実際: {len(payload)}バイト)",
            path=str(path),
        )

    meta = read_metadata(path)
    if meta.get("SHAPE") is not None:
        meta_shape = tuple(int(d) for d in meta["SHAPE"].split(",") if d != "")
        if meta_shape != shape:
            raise ContainerFormatError(
                f"メタデータの形状がヘッダーと一致しません (ヘッダー: {shape}, メタデータ: {meta_shape})",
                path=str(path),
            )

    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    # 書き込み可能なネイティブ順序のコピーを返す
    return array.astype(dtype.newbyteorder("="), copy=True)


def read_metadata(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """サイドカーのメタデータを読み込む (存在しない場合は空)"""
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        return {}
    return dict(dotenv_values(meta_path))


def _parse_header(raw: bytes, path: Path) -> Tuple[Tuple[int, ...], np.dtype]:
    if len(raw) < _FIXED_HEADER.size:
        raise ContainerFormatError("ヘッダーが切り詰められています", path=str(path))
    magic, version, code, endian, ndim = _FIXED_HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"マジックナンバーが不正です: {magic!r}", path=str(path))
    if version != FORMAT_VERSION:
        raise ContainerFormatError(f"未対応のバージョンです: {version}", path=str(path))
    if code not in CODE_DTYPES:
        raise ContainerFormatError(f"未知の要素型コードです: {code}", path=str(path))
    if endian not in (b"<", b">"):
        raise ContainerFormatError(f"エンディアン指定が不正です: {endian!r}", path=str(path))
    if len(raw) < _FIXED_HEADER.size + 8 * ndim:
        raise ContainerFormatError("形状ヘッダーが切り詰められています", path=str(path))
    shape = struct.unpack_from(f"<{ndim}Q", raw, _FIXED_HEADER.size)
    dtype = np.dtype(CODE_DTYPES[code]).newbyteorder(endian.decode())
    return tuple(int(d) for d in shape), dtype
