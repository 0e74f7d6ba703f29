"""バックボーン学習モジュール

合成コーパス上でε予測の二乗誤差を最小化します。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from tqdm import tqdm

from src.data_synth.corpus import ShapeCorpus
from src.diffusion.objectives import training_loss
from src.diffusion.schedule import NoiseSchedule
from src.exceptions import NonFiniteError, TrainingDivergenceError, ValidationError
from .codec import LinearPixelCodec
from .model import BackboneConfig, ToyVideoDenoiser

DIVERGENCE_FACTOR = 10.0


@dataclass
class TrainConfig:
    """学習設定"""
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    cond_dropout: float = 0.1  # ヌル条件に置き換える確率 (CFG用)
    heldout_size: int = 8
    log_interval: int = 50
    seed: int = 0
    progress: bool = False

    def validate(self) -> None:
        if self.batch_size <= 0:
            raise ValidationError("バッチサイズは正である必要があります", field="batch_size")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ValidationError("条件ドロップ率は[0,1)である必要があります", field="cond_dropout")
        if self.heldout_size < 0:
            raise ValidationError("検証用サンプル数は0以上である必要があります", field="heldout_size")


@dataclass
class TrainResult:
    """学習の結果"""
    model: ToyVideoDenoiser
    losses: List[float] = field(default_factory=list)
    initial_heldout_loss: float = float("nan")
    final_heldout_loss: float = float("nan")

    def __str__(self) -> str:
        return (
            f"ステップ数: {len(self.losses)}, "
            f"検証損失: {self.initial_heldout_loss:.2f} -> {self.final_heldout_loss:.2f}"
        )


def _heldout_loss(model: ToyVideoDenoiser, latents: torch.Tensor, labels: torch.Tensor, schedule: NoiseSchedule, seed: int) -> float:
    if latents.shape[0] == 0:
        return float("nan")
    generator = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        return float(training_loss(model, latents, labels, schedule, generator))


def train_toy_backbone(
    corpus: ShapeCorpus,
    backbone_config: BackboneConfig,
    schedule: NoiseSchedule,
    steps: int,
    train_config: Optional[TrainConfig] = None,
    codec: Optional[LinearPixelCodec] = None,
    logger: Optional[logging.Logger] = None,
) -> TrainResult:
    """トイバックボーンを学習

    Args:
        corpus: 合成コーパス
        backbone_config: バックボーン構成
        schedule: ノイズスケジュール
        steps: 学習ステップ数 (正)
        train_config: 学習設定
        codec: ピクセル→潜在のコーデック
        logger: ロガー

    Returns:
        学習済みモデルと損失履歴

    Raises:
        TrainingDivergenceError: 損失が初期損失の10倍を超えた場合
        NonFiniteError: 損失が非有限になった場合
    """
    logger = logger or logging.getLogger(__name__)
    train_config = train_config or TrainConfig()
    train_config.validate()
    if steps <= 0:
        raise ValidationError(f"学習ステップ数は正である必要があります: {steps}", field="steps")
    if int(corpus.labels.max()) >= backbone_config.num_classes:
        raise ValidationError("コーパスのラベルがバックボーンの語彙を超えています", field="num_classes")

    codec = codec or LinearPixelCodec(backbone_config.latent_channels)
    latents = codec.encode(torch.as_tensor(corpus.videos))
    labels = torch.as_tensor(corpus.labels, dtype=torch.long)

    heldout = min(train_config.heldout_size, max(len(corpus) - 1, 0))
    train_latents, train_labels = latents[: len(corpus) - heldout], labels[: len(corpus) - heldout]
    heldout_latents, heldout_labels = latents[len(corpus) - heldout:], labels[len(corpus) - heldout:]

    model = ToyVideoDenoiser(backbone_config)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=train_config.learning_rate, weight_decay=train_config.weight_decay)
    generator = torch.Generator().manual_seed(train_config.seed)

    result = TrainResult(model=model)
    result.initial_heldout_loss = _heldout_loss(model, heldout_latents, heldout_labels, schedule, train_config.seed)
    logger.info(
        f"学習を開始します (ステップ数: {steps}, 学習データ: {train_latents.shape[0]}本, "
        f"検証損失: {result.initial_heldout_loss:.2f})"
    )

    initial_loss: Optional[float] = None
    for step in tqdm(range(steps), desc="train", disable=not train_config.progress):
        index = torch.randint(0, train_latents.shape[0], (train_config.batch_size,), generator=generator)
        z0 = train_latents[index]
        y = train_labels[index].clone()
        drop = torch.rand(y.shape, generator=generator) < train_config.cond_dropout
        y[drop] = model.null_label

        try:
            loss = training_loss(model, z0, y, schedule, generator)
        except NonFiniteError as e:
            raise NonFiniteError(f"学習が中断されました: {e.message}", step=step) from e

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        value = float(loss.detach())
        result.losses.append(value)
        if initial_loss is None:
            initial_loss = value
        elif value > initial_loss * DIVERGENCE_FACTOR or not math.isfinite(value):
            raise TrainingDivergenceError(step=step, loss=value, initial_loss=initial_loss)

        if (step + 1) % train_config.log_interval == 0 or step == steps - 1:
            window = result.losses[-train_config.log_interval:]
            logger.info(f"  学習進捗: {step + 1}/{steps} (平均損失: {sum(window) / len(window):.2f})")

    model.eval()
    result.final_heldout_loss = _heldout_loss(model, heldout_latents, heldout_labels, schedule, train_config.seed)
    logger.info(f"学習が完了しました: {result}")
    return result
