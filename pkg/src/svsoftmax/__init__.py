"""Support-vector guided softmax losses on the unit hypersphere.

Losses and their analytic gradients, a finite-difference gradient checker,
a small numpy trainer on synthetic clusters, and verification metrics.
"""

__version__ = "0.1.0"

from ._accel import BACKEND
from .errors import (
    CenterCollision, DegenerateVector, DimensionMismatch, Diverged, InsufficientData, InvalidMargin,
    InvalidValue, MissingArtifacts, ParseError, StaleForward, SvSoftmaxError, UnknownKey,
)
from .evaluation import EvalReport, PairSet, angular_stats, build_pairs, rank1_identification, tpr_at_far
from .geometry import FeatureBatch, cosine_logits, normalize_backward, normalize_rows
from .gradients import BackwardOutput, GradCheckReport, finite_difference_check, full_backward, loss_backward
from .losses import (
    ForwardOutput, LossSpec, MarginParams, MiningParams, SvParams, Variant, focal_weight, h_indicator,
    hm_select, loss_forward, margin_f, sv_mask, sv_x_mask,
)
from .trainer import EmbeddingNet, SyntheticSpec, TrainConfig, TrainHistory, make_synthetic, train

__all__ = [
    "BACKEND", "BackwardOutput", "CenterCollision", "DegenerateVector", "DimensionMismatch", "Diverged",
    "EmbeddingNet", "EvalReport", "FeatureBatch", "ForwardOutput", "GradCheckReport", "InsufficientData",
    "InvalidMargin", "InvalidValue", "LossSpec", "MarginParams", "MiningParams", "MissingArtifacts",
    "PairSet", "ParseError", "StaleForward", "SvParams", "SvSoftmaxError", "SyntheticSpec", "TrainConfig",
    "TrainHistory", "UnknownKey", "Variant", "angular_stats", "build_pairs", "cosine_logits",
    "finite_difference_check", "focal_weight", "full_backward", "h_indicator", "hm_select", "loss_backward",
    "loss_forward", "make_synthetic", "margin_f", "normalize_backward", "normalize_rows",
    "rank1_identification", "sv_mask", "sv_x_mask", "tpr_at_far", "train",
]
