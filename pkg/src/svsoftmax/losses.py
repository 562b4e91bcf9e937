"""Forward passes for the softmax loss family on the unit hypersphere.

All variants reduce to a single row kernel: the ground-truth logit is
``s * f(m, cos_y)``, and non-target logits flagged as support vectors are
lifted to ``s * (t * cos_k + t - 1)``, which is ``s * cos_k + log h`` with
``h = exp(s (t - 1)(cos_k + 1))``. Mining variants then multiply the
per-sample cross entropy by a weight ``g(p_y)``.
"""

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, InvalidMargin, InvalidValue

DEFAULT_SCALE = 30.0
DEFAULT_T = 1.2
DEFAULT_GAMMA = 2.0
DEFAULT_HARD_FRACTION = 0.7
AM_MARGIN = 0.35
ARC_MARGIN = 0.5
T_DIVERGENCE_GUIDANCE = 1.4


class Variant(str, enum.Enum):
    SOFTMAX = "softmax"
    FOCAL = "focal_softmax"
    HM = "hm_softmax"
    MARGIN = "margin_softmax"
    NAIVE_FOCAL = "naive_fused_focal"
    NAIVE_HM = "naive_fused_hm"
    SV = "sv_softmax"
    SVX = "svx_softmax"

    @property
    def uses_margin(self):
        return self in (Variant.MARGIN, Variant.NAIVE_FOCAL, Variant.NAIVE_HM, Variant.SVX)

    @property
    def uses_t(self):
        return self in (Variant.SV, Variant.SVX)

    @property
    def uses_gamma(self):
        return self in (Variant.FOCAL, Variant.NAIVE_FOCAL)

    @property
    def uses_hard_fraction(self):
        return self in (Variant.HM, Variant.NAIVE_HM)


@dataclass(frozen=True)
class MarginParams:
    """Combined margin ``f(m, theta) = cos(m1 * theta + m3) - m2``."""

    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.m1 >= 1.0:
            raise InvalidMargin(f"m1 must be >= 1, got {self.m1}")
        if not 0.0 <= self.m2 < 1.0:
            raise InvalidMargin(f"m2 must lie in [0, 1), got {self.m2}")
        if not 0.0 <= self.m3 < math.pi / 2:
            raise InvalidMargin(f"m3 must lie in [0, pi/2), got {self.m3}")

    @property
    def is_identity(self):
        return self.m1 == 1.0 and self.m2 == 0.0 and self.m3 == 0.0

    def astuple(self):
        return (self.m1, self.m2, self.m3)


@dataclass(frozen=True)
class SvParams:
    t: float = 1.0
    s: float = DEFAULT_SCALE

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "s", float(self.s))
        if not self.t >= 1.0:
            raise InvalidValue(f"t must be >= 1, got {self.t}")
        if not (self.s > 0.0 and math.isfinite(self.s)):
            raise InvalidValue(f"s must be positive, got {self.s}")


@dataclass(frozen=True)
class MiningParams:
    gamma: float = 0.0
    hard_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "hard_fraction", float(self.hard_fraction))
        if not self.gamma >= 0.0:
            raise InvalidValue(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.hard_fraction <= 1.0:
            raise InvalidValue(f"hard_fraction must lie in (0, 1], got {self.hard_fraction}")


@dataclass(frozen=True)
class LossSpec:
    """A loss variant together with every parameter group.

    Groups a variant does not read must hold their identity values, so two
    specs compare equal exactly when they define the same loss. Use
    :meth:`make` to get variant-appropriate defaults.
    """

    variant: Variant
    margin: MarginParams = field(default_factory=MarginParams)
    sv: SvParams = field(default_factory=SvParams)
    mining: MiningParams = field(default_factory=MiningParams)
    differentiate_focal_weight: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        v = self.variant
        if not v.uses_margin and not self.margin.is_identity:
            raise InvalidValue(f"{v.value} takes no margin, got {self.margin}")
        if not v.uses_t and self.sv.t != 1.0:
            raise InvalidValue(f"{v.value} takes no t, got t={self.sv.t}")
        if not v.uses_gamma and self.mining.gamma != 0.0:
            raise InvalidValue(f"{v.value} takes no gamma, got {self.mining.gamma}")
        if not v.uses_hard_fraction and self.mining.hard_fraction != 1.0:
            raise InvalidValue(f"{v.value} takes no hard_fraction, got {self.mining.hard_fraction}")

    @classmethod
    def make(cls, variant, *, s=None, t=None, m1=None, m2=None, m3=None, gamma=None,
             hard_fraction=None, differentiate_focal_weight=False):
        """Build a spec, filling unset parameters with the variant's defaults.

        Margin variants default to the additive cosine margin ``m2 = 0.35``
        when no margin component is given.
        """
        variant = Variant(variant)
        if variant.uses_margin and m1 is None and m2 is None and m3 is None:
            m2 = AM_MARGIN
        margin = MarginParams(1.0 if m1 is None else m1, 0.0 if m2 is None else m2, 0.0 if m3 is None else m3)
        sv = SvParams(t=(DEFAULT_T if variant.uses_t else 1.0) if t is None else t,
                      s=DEFAULT_SCALE if s is None else s)
        mining = MiningParams(
            gamma=(DEFAULT_GAMMA if variant.uses_gamma else 0.0) if gamma is None else gamma,
            hard_fraction=(DEFAULT_HARD_FRACTION if variant.uses_hard_fraction else 1.0)
            if hard_fraction is None else hard_fraction,
        )
        return cls(variant, margin, sv, mining, bool(differentiate_focal_weight))

    def with_t(self, t):
        return replace(self, sv=SvParams(t=t, s=self.sv.s))

    @property
    def mask_kind(self):
        if self.variant is Variant.SV:
            return _kernels.MASK_PLAIN
        if self.variant is Variant.SVX:
            return _kernels.MASK_MARGIN
        return _kernels.MASK_NONE


@dataclass
class ForwardOutput:
    """Result of a loss forward pass over a batch.

    ``loss`` is the per-sample loss after mining weights, ``ce`` the
    unweighted cross entropy ``-log prob[i, y_i]``, so ``loss = weight * ce``.
    ``margin_slope`` is d f / d cos_y at each ground-truth entry.
    """

    loss: np.ndarray
    prob: np.ndarray
    adjusted_logits: np.ndarray
    mask: np.ndarray
    ce: np.ndarray
    weight: np.ndarray
    margin_slope: np.ndarray

    @property
    def batch_loss(self):
        return math.fsum(self.loss) / len(self.loss)

    @property
    def p_target(self):
        return np.exp(-self.ce)


# ---------------------------------------------------------------------------
# scalar pieces


def _as_margin(m):
    if isinstance(m, MarginParams):
        return m
    return MarginParams(*m)


def margin_f(cos_y, m):
    """Combined margin applied to a ground-truth cosine (scalar or array).

    The angle ``m1 * theta + m3`` is clamped to pi so the result stays
    monotone for angular multipliers above 1.
    """
    m = _as_margin(m)
    out = _kernels.margin_f_np(cos_y, *m.astuple())
    return float(out) if np.ndim(out) == 0 else out


def margin_df(cos_y, m):
    """Derivative of :func:`margin_f` with respect to ``cos_y``."""
    m = _as_margin(m)
    out = _kernels.margin_df_np(cos_y, *m.astuple())
    return float(out) if np.ndim(out) == 0 else out


def focal_weight(p_y, gamma):
    return (1.0 - np.asarray(p_y, dtype=np.float64)) ** gamma


def h_indicator(cos_k, masked, s, t):
    return np.exp(s * (t - 1.0) * (np.asarray(cos_k, dtype=np.float64) + 1.0) * np.asarray(masked, dtype=np.float64))


def hard_count(n, hard_fraction):
    # round first so 0.7 * 10 does not become 8
    return max(1, min(n, math.ceil(round(hard_fraction * n, 9))))


def hm_select(per_sample_loss, hard_fraction):
    """Indicator of the ``ceil(hard_fraction * N)`` largest losses.

    Ties go to the lower sample index.
    """
    losses = np.asarray(per_sample_loss, dtype=np.float64)
    if not 0.0 < hard_fraction <= 1.0:
        raise InvalidValue(f"hard_fraction must lie in (0, 1], got {hard_fraction}")
    n = losses.shape[0]
    order = np.lexsort((np.arange(n), -losses))
    keep = np.zeros(n)
    keep[order[: hard_count(n, hard_fraction)]] = 1.0
    return keep


# ---------------------------------------------------------------------------
# masks


def _check(cos, labels):
    cos = np.ascontiguousarray(cos, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if cos.ndim != 2 or labels.shape != (cos.shape[0],):
        raise DimensionMismatch(f"cosines {cos.shape} do not match labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= cos.shape[1]):
        raise InvalidValue("label out of range")
    return cos, labels


def sv_mask(cos, labels):
    """Non-target entries whose cosine beats the ground-truth cosine (strictly)."""
    cos, labels = _check(cos, labels)
    ref = np.ascontiguousarray(cos[np.arange(cos.shape[0]), labels])
    return _kernels.support_mask(cos, labels, ref)


def sv_x_mask(cos, labels, m):
    """Like :func:`sv_mask` but against the margin-adjusted ground-truth score."""
    m = _as_margin(m)
    cos, labels = _check(cos, labels)
    ref = _kernels.margin_f_np(cos[np.arange(cos.shape[0]), labels], *m.astuple())
    return _kernels.support_mask(cos, labels, np.ascontiguousarray(ref))


# ---------------------------------------------------------------------------
# forwards


def _run(cos, labels, s, t, margin, mask_kind, frozen_mask=None):
    adjusted, prob, ce, mask, _, dfy = _kernels.forward(
        cos, labels, float(s), float(t), *margin.astuple(), mask_kind, frozen_mask
    )
    ones = np.ones(cos.shape[0])
    return ForwardOutput(ce.copy(), prob, adjusted, mask, ce, ones, dfy)


def softmax_forward(cos, labels, s):
    cos, labels = _check(cos, labels)
    if not s > 0:
        raise InvalidValue(f"s must be positive, got {s}")
    return _run(cos, labels, s, 1.0, MarginParams(), _kernels.MASK_NONE)


def margin_softmax_forward(cos, labels, s, m):
    cos, labels = _check(cos, labels)
    return _run(cos, labels, s, 1.0, _as_margin(m), _kernels.MASK_NONE)


def sv_softmax_forward(cos, labels, sv, frozen_mask=None):
    cos, labels = _check(cos, labels)
    return _run(cos, labels, sv.s, sv.t, MarginParams(), _kernels.MASK_PLAIN, frozen_mask)


def sv_x_softmax_forward(cos, labels, sv, m, frozen_mask=None):
    cos, labels = _check(cos, labels)
    return _run(cos, labels, sv.s, sv.t, _as_margin(m), _kernels.MASK_MARGIN, frozen_mask)


def _apply_weights(out, weight):
    out.weight = np.asarray(weight, dtype=np.float64)
    out.loss = out.weight * out.ce
    return out


def mining_weights(out, spec):
    if spec.variant.uses_gamma:
        return focal_weight(out.p_target, spec.mining.gamma)
    if spec.variant.uses_hard_fraction:
        return hm_select(out.ce, spec.mining.hard_fraction)
    return np.ones_like(out.ce)


def mining_margin_forward(cos, labels, spec, frozen_weight=None):
    """Mining weight times the margin-softmax cross entropy.

    Covers the focal and hard-mining variants with and without a margin.
    ``frozen_weight`` replaces the computed weights, which is how the
    gradient check holds mining constant.
    """
    if spec.variant not in (Variant.FOCAL, Variant.HM, Variant.NAIVE_FOCAL, Variant.NAIVE_HM):
        raise InvalidValue(f"{spec.variant.value} is not a mining variant")
    out = margin_softmax_forward(cos, labels, spec.sv.s, spec.margin)
    weight = mining_weights(out, spec) if frozen_weight is None else frozen_weight
    return _apply_weights(out, weight)


def loss_forward(cos, labels, spec, frozen_mask=None, frozen_weight=None):
    """Dispatch to the forward pass of ``spec.variant``."""
    v = spec.variant
    if v is Variant.SOFTMAX:
        return softmax_forward(cos, labels, spec.sv.s)
    if v is Variant.MARGIN:
        return margin_softmax_forward(cos, labels, spec.sv.s, spec.margin)
    if v is Variant.SV:
        return sv_softmax_forward(cos, labels, spec.sv, frozen_mask)
    if v is Variant.SVX:
        return sv_x_softmax_forward(cos, labels, spec.sv, spec.margin, frozen_mask)
    return mining_margin_forward(cos, labels, spec, frozen_weight)
