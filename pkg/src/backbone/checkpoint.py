"""チェックポイントモジュール

モデルの重みをテンソルコンテナの束として保存し、構成レコードと内容ハッシュを添えます。

ディレクトリ構成::

    <checkpoint>/
        config.env          BackboneConfig と CODEC_SEED, CONTENT_HASH
        tensors/<name>.mgt  state_dict の各テンソル
"""
import hashlib
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import torch
from dotenv import dotenv_values

from src.data_synth.container import read_container, write_container
from src.exceptions import CheckpointError, ContainerFormatError
from .codec import LinearPixelCodec
from .model import BackboneConfig, ToyVideoDenoiser

CONFIG_FILE = "config.env"
TENSOR_DIR = "tensors"


def content_hash(state_dict: Mapping[str, torch.Tensor]) -> str:
    """(名前, バイト列) を名前順に連結したsha256"""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(
    model: ToyVideoDenoiser,
    directory: Union[str, Path],
    codec_seed: int = 0,
    extra: Optional[Mapping[str, str]] = None,
    logger: Optional[logging.Logger] = None,
) -> str:
    """チェックポイントを保存

    Returns:
        内容ハッシュ
    """
    logger = logger or logging.getLogger(__name__)
    directory = Path(directory)
    state = model.state_dict()
    for name, tensor in state.items():
        write_container(tensor, directory / TENSOR_DIR / f"{name}.mgt", {"name": name})

    digest = content_hash(state)
    record: Dict[str, str] = dict(model.config.to_record())
    record["CODEC_SEED"] = str(codec_seed)
    record["CONTENT_HASH"] = digest
    if extra:
        record.update({k.upper(): str(v) for k, v in extra.items()})
    with open(directory / CONFIG_FILE, "w", encoding="utf-8") as f:
        for key, value in record.items():
            f.write(f"{key}={value}\n")

    logger.info(f"チェックポイントを保存しました: {directory} (hash={digest[:12]})")
    return digest


def load_checkpoint(
    directory: Union[str, Path],
    dtype: Optional[torch.dtype] = None,
    logger: Optional[logging.Logger] = None,
) -> Tuple[ToyVideoDenoiser, LinearPixelCodec, str]:
    """チェックポイントを読み込む

    Returns:
        (モデル, コーデック, 内容ハッシュ)

    Raises:
        CheckpointError: 構成や重みが読めない、またはハッシュが一致しない場合
    """
    logger = logger or logging.getLogger(__name__)
    directory = Path(directory)
    config_path = directory / CONFIG_FILE
    if not config_path.exists():
        raise CheckpointError("チェックポイントの構成ファイルがありません", path=str(config_path))

    record = dotenv_values(config_path)
    try:
        config = BackboneConfig.from_record(record)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError("チェックポイントの構成が不正です", path=str(config_path), original_error=e) from e

    model = ToyVideoDenoiser(config)
    state = {}
    try:
        for name in model.state_dict():
            state[name] = torch.from_numpy(read_container(directory / TENSOR_DIR / f"{name}.mgt"))
    except ContainerFormatError as e:
        raise CheckpointError("重みの読み込みに失敗しました", path=str(directory), original_error=e) from e
    model.load_state_dict(state)

    digest = content_hash(model.state_dict())
    expected = record.get("CONTENT_HASH")
    if expected and expected != digest:
        raise CheckpointError(f"内容ハッシュが一致しません (期待: {expected[:12]}, 実際: {digest[:12]})", path=str(directory))

    codec = LinearPixelCodec(config.latent_channels, seed=int(record.get("CODEC_SEED") or 0))
    if dtype is not None:
        model = model.to(dtype)
        codec = codec.to(dtype)
    logger.info(f"チェックポイントを読み込みました: {directory} (hash={digest[:12]})")
    return model.eval(), codec, digest
