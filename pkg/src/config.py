"""設定管理モジュール

コマンドラインフラグ・設定ファイル・環境変数から実行設定を読み込むモジュールです。

優先順位: フラグ > 設定ファイル > 環境変数 (``MG_<KEY>``) > 既定値。
設定ファイルはdotenv形式 (``KEY=VALUE``) で、キーはフィールド名の大文字です。
"""
import os
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values

from src.backbone.model import BackboneConfig
from src.backbone.training import TrainConfig
from src.data_synth.corpus import CorpusConfig
from src.diffusion.schedule import SCHEDULE_KINDS
from src.exceptions import ConfigurationError, ValidationError
from src.guidance.estimate import GUIDANCE_MODES, INIT_NOISE_MODES, GuidanceConfig
from src.motion_pattern.pattern import TEMPERATURE_MODES
from src.payloads import parse_key_points

ENV_PREFIX = "MG_"
DTYPES = ("float32", "float64")
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass
class RunConfig:
    """実行設定クラス"""
    # 出力・ログ
    output_root: Path = Path("runs")
    run_name: Optional[str] = None
    log_file: Optional[str] = None
    log_level: str = "INFO"
    registry_path: Optional[Path] = None
    dtype: str = "float32"

    # 合成コーパス
    corpus_dir: Optional[Path] = None
    num_videos: int = 256
    corpus_frames: int = 16
    corpus_height: int = 16
    corpus_width: int = 16
    num_classes: int = 2

    # バックボーン
    checkpoint: Optional[Path] = None
    latent_channels: int = 4
    channels: str = "32,64"
    temporal_placement: str = "down,up"
    heads: int = 4
    emb_dim: int = 64
    groups: int = 8
    backbone_seed: int = 0
    codec_seed: int = 0

    # ノイズスケジュール (学習時の長さ。チェックポイントに記録される)
    timesteps: int = 50
    schedule_kind: str = "linear"

    # 学習
    train_steps: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    cond_dropout: float = 0.1
    train_seed: int = 0
    log_interval: int = 50  # 進捗表示間隔

    # ガイダンス
    mode: str = "trajectory"
    reference_video: Optional[Path] = None
    trajectory: Optional[str] = None  # ベンチマーク軌跡名、または軌跡レコードのパス
    frames: Optional[int] = None  # Noneならモードに応じて trajectory=16, reference=32
    height: int = 16
    width: int = 16
    label: Optional[int] = None
    key_points: str = ""
    sigma: float = 10000.0
    tau: float = 10.0
    guided_steps: Optional[int] = None
    sampling_steps: Optional[int] = None
    tap_layers: str = ""
    local: Optional[int] = None
    cfg_scale: float = 12.0
    mix_lambda: float = 1.0
    t_prime: int = 1
    temperature_mode: str = "divide"
    match_conditions: bool = False
    init_noise: str = "inversion"
    noise_seed: int = 0
    pattern_seed: int = 0
    no_guidance: bool = False

    # 評価・ベンチマーク
    results_dir: Optional[Path] = None
    gt_dir: Optional[Path] = None
    background: str = "1,1,1"
    benchmark_seeds: str = "0,1"
    sigma_sweep: str = "100,10000,1000000"

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name.upper() for f in fields(cls)]

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """環境変数 (``MG_<KEY>``) から設定を読み込む"""
        return cls.load(environ=environ)

    @classmethod
    def load(
        cls,
        config_file: Optional[Path] = None,
        overrides: Optional[Mapping[str, object]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "RunConfig":
        """全ての設定源をマージして読み込む

        Args:
            config_file: dotenv形式の設定ファイル
            overrides: コマンドラインフラグ (値がNoneのキーは無視)
            environ: 環境変数 (Noneなら ``os.environ``)

        Raises:
            ConfigurationError: 未知のキーや変換できない値がある場合
        """
        environ = os.environ if environ is None else environ
        known = set(cls.keys())
        raw: Dict[str, str] = {}

        for key, value in environ.items():
            if key.startswith(ENV_PREFIX) and key[len(ENV_PREFIX):] in known and value is not None:
                raw[key[len(ENV_PREFIX):]] = value

        if config_file is not None:
            path = Path(config_file)
            if not path.exists():
                raise ConfigurationError(f"設定ファイルが見つかりません: {path}")
            file_values = {k.upper(): v for k, v in dotenv_values(path).items()}
            unknown = sorted(set(file_values) - known)
            if unknown:
                raise ConfigurationError(f"未知の設定キーがあります: {', '.join(unknown)}")
            raw.update({k: v for k, v in file_values.items() if v is not None})

        if overrides:
            flag_values = {k.upper(): v for k, v in overrides.items() if v is not None}
            unknown = sorted(set(flag_values) - known)
            if unknown:
                raise ConfigurationError(f"未知の設定キーがあります: {', '.join(unknown)}")
            raw.update({k: _to_text(v) for k, v in flag_values.items()})

        return cls.from_record(raw)

    @classmethod
    def from_record(cls, record: Mapping[str, str]) -> "RunConfig":
        """``KEY=VALUE`` レコードから設定を作成 (記載のないキーは既定値)"""
        hints = typing.get_type_hints(cls)
        values = {}
        errors = []
        for f in fields(cls):
            key = f.name.upper()
            if key not in record:
                continue
            try:
                values[f.name] = _parse_value(record[key], hints[f.name])
            except ValueError:
                errors.append(f"{key} の値を変換できません: {record[key]!r}")
        if errors:
            raise ConfigurationError("\n".join(errors))
        return cls(**values)

    def to_record(self) -> Dict[str, str]:
        """全フィールドのスナップショット (再現用)"""
        return {k.upper(): _to_text(v) for k, v in asdict(self).items() if v is not None}

    def resolved_sampling_steps(self, T: Optional[int] = None) -> int:
        """サンプリングステップ数 (未指定ならモードに応じて trajectory=50, reference=30、Tが上限)"""
        T = self.timesteps if T is None else T
        if self.sampling_steps is not None:
            return self.sampling_steps
        return min(50 if self.mode == "trajectory" else 30, T)

    @property
    def resolved_frames(self) -> int:
        if self.frames is not None:
            return self.frames
        return 16 if self.mode == "trajectory" else 32

    @property
    def resolved_registry_path(self) -> Path:
        return self.registry_path or self.output_root / "registry.db"

    @property
    def tap_layer_ids(self) -> Optional[Tuple[int, ...]]:
        return _int_tuple(self.tap_layers) or None

    def validate(self) -> None:
        """設定の妥当性を検証 (全ての問題をまとめて報告)"""
        errors = []
        if self.dtype not in DTYPES:
            errors.append(f"DTYPE は {DTYPES} のいずれかです: {self.dtype}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            errors.append(f"SCHEDULE_KIND は {SCHEDULE_KINDS} のいずれかです: {self.schedule_kind}")
        if self.mode not in GUIDANCE_MODES:
            errors.append(f"MODE は {GUIDANCE_MODES} のいずれかです: {self.mode}")
        if self.temperature_mode not in TEMPERATURE_MODES:
            errors.append(f"TEMPERATURE_MODE は {TEMPERATURE_MODES} のいずれかです: {self.temperature_mode}")
        if self.init_noise not in INIT_NOISE_MODES:
            errors.append(f"INIT_NOISE は {INIT_NOISE_MODES} のいずれかです: {self.init_noise}")
        if self.timesteps < 2:
            errors.append(f"TIMESTEPS は2以上である必要があります: {self.timesteps}")
        if self.train_steps <= 0:
            errors.append(f"TRAIN_STEPS は正である必要があります: {self.train_steps}")
        if self.log_interval <= 0:
            errors.append(f"LOG_INTERVAL は正である必要があります: {self.log_interval}")
        for name in ("channels", "tap_layers", "benchmark_seeds"):
            try:
                _int_tuple(getattr(self, name))
            except ValueError:
                errors.append(f"{name.upper()} は整数のカンマ区切りです: {getattr(self, name)}")
        for name in ("sigma_sweep", "background"):
            try:
                _float_tuple(getattr(self, name))
            except ValueError:
                errors.append(f"{name.upper()} は数値のカンマ区切りです: {getattr(self, name)}")
        try:
            parse_key_points(self.key_points)
        except ValidationError as e:
            errors.append(str(e))
        for check in (self.guidance_config, self.backbone_config, self.train_config):
            try:
                config = check()
                if isinstance(config, GuidanceConfig):
                    config.validate(self.timesteps)
                else:
                    config.validate()
            except (ValidationError, ValueError) as e:
                errors.append(str(e))
        if self.reference_video is not None and self.trajectory is not None:
            errors.append("REFERENCE_VIDEO と TRAJECTORY は同時に指定できません")

        if errors:
            raise ConfigurationError("\n".join(dict.fromkeys(errors)))

    def require(self, *names: str) -> None:
        """コマンドに必要なフィールドが設定されていることを確認"""
        missing = [name.upper() for name in names if getattr(self, name) in (None, "")]
        if missing:
            raise ConfigurationError(
                "\n".join(f"{name} が設定されていません" for name in missing),
                missing_fields=missing,
            )

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            latent_channels=self.latent_channels,
            channels=_int_tuple(self.channels),
            temporal_placement=tuple(p.strip() for p in self.temporal_placement.split(",") if p.strip()),
            num_classes=self.num_classes,
            heads=self.heads,
            emb_dim=self.emb_dim,
            groups=self.groups,
            seed=self.backbone_seed,
        )

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(
            num_videos=self.num_videos,
            num_frames=self.corpus_frames,
            height=self.corpus_height,
            width=self.corpus_width,
            num_classes=self.num_classes,
            seed=self.train_seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            cond_dropout=self.cond_dropout,
            log_interval=self.log_interval,
            seed=self.train_seed,
        )

    def guidance_config(self, T: Optional[int] = None) -> GuidanceConfig:
        """ガイダンス設定 (Tはサンプリングに使うスケジュールの長さ)"""
        sigma = 0.0 if self.no_guidance else self.sigma
        guided_steps = 0 if self.no_guidance else self.guided_steps
        return GuidanceConfig(
            sigma=sigma,
            tau=self.tau,
            guided_steps=guided_steps,
            steps=self.resolved_sampling_steps(T),
            layer_ids=self.tap_layer_ids,
            local=self.local,
            key_points=tuple(parse_key_points(self.key_points)),
            cfg_scale=self.cfg_scale,
            mode=self.mode,
            mix_lambda=self.mix_lambda,
            t_prime=self.t_prime,
            temperature_mode=self.temperature_mode,
            match_conditions=self.match_conditions,
            init_noise=self.init_noise,
            noise_seed=self.noise_seed,
            pattern_seed=self.pattern_seed,
            height=self.height,
            width=self.width,
            log_interval=max(1, self.log_interval // 5),
        )


def _parse_value(value: str, annotation) -> object:
    """型注釈に従って文字列を変換"""
    args = typing.get_args(annotation)
    if type(None) in args:
        if value.strip() == "":
            return None
        annotation = next(a for a in args if a is not type(None))
    if annotation is bool:
        lowered = value.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(value)
    if annotation is int:
        return int(value)
    if annotation is float:
        return float(value)
    if annotation is Path:
        return Path(value)
    return value


def _to_text(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _int_tuple(value: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _float_tuple(value: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())
