"""拡散モデルのコアモジュール

ノイズスケジュール、前方ノイズ付加、DDIMサンプリング/反転、学習目的関数を提供します。
"""
from .schedule import NoiseSchedule, build_schedule, add_noise, timestep_grid
from .ddim import (
    NoisePredictor,
    NoiseEstimator,
    ddim_step,
    ddim_transfer,
    ddim_invert,
    ddim_sample,
    cfg_noise,
    combine_cfg,
    plain_estimator,
    predict_x0,
)
from .objectives import training_loss, oracle_noise

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "add_noise",
    "timestep_grid",
    "NoisePredictor",
    "NoiseEstimator",
    "ddim_step",
    "ddim_transfer",
    "ddim_invert",
    "ddim_sample",
    "cfg_noise",
    "combine_cfg",
    "plain_estimator",
    "predict_x0",
    "training_loss",
    "oracle_noise",
]
