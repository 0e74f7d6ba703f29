"""動き一貫性損失モジュール"""
import torch

from src.exceptions import StructureMismatchError
from src.motion_pattern.pattern import PatternBundle


def check_structure(current: PatternBundle, reference: PatternBundle) -> None:
    """2つのパターン束のキーと形状が一致することを確認

    Raises:
        StructureMismatchError: 最初に異なるキー付き
    """
    current_keys = current.keys()
    reference_keys = reference.keys()
    for cur_key, ref_key in zip(current_keys, reference_keys):
        if cur_key != ref_key:
            raise StructureMismatchError(key=min(cur_key, ref_key))
        if current[cur_key].maps.shape != reference[ref_key].maps.shape:
            raise StructureMismatchError("相関パターンの形状が一致しません", key=cur_key)
    if len(current_keys) != len(reference_keys):
        longer = current_keys if len(current_keys) > len(reference_keys) else reference_keys
        raise StructureMismatchError(key=longer[min(len(current_keys), len(reference_keys))])


def consistency_loss(current: PatternBundle, reference: PatternBundle) -> torch.Tensor:
    """L_c = Σ_レイヤー Σ_キーポイント Σ_f Σ_{i>f} ‖M′_i − M_i‖²

    正規化しない単純和です。参照側は定数として扱います。
    """
    check_structure(current, reference)
    terms = [
        (current[key].maps - reference[key].maps.detach()).square().sum()
        for key in current.keys()
    ]
    if not terms:
        return torch.zeros(())
    return torch.stack(terms).sum()
