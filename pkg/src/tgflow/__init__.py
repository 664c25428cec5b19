"""Tensor gauge flow models: gauge-corrected flow matching on R^N."""

from .algebra import SkewBasis, lie_action, linfty_action, so_basis, tensor_contract
from .dataset import MixtureSpec, mixture_means, sample
from .models import TgfmModel, VariantKind, Widths, build_model, match_parameters
from .training import TrainConfig, cfm_pair, fm_loss, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "SkewBasis",
    "so_basis",
    "lie_action",
    "linfty_action",
    "tensor_contract",
    "MixtureSpec",
    "mixture_means",
    "sample",
    "TgfmModel",
    "VariantKind",
    "Widths",
    "build_model",
    "match_parameters",
    "TrainConfig",
    "cfm_pair",
    "fm_loss",
    "total_loss",
    "train",
]
