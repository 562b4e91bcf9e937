"""Closed-form backward passes and a finite-difference gradient check."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BoundaryProximity, StaleForward
from .geometry import cosine_logits, normalize_backward, normalize_rows, row_norms
from .losses import ForwardOutput, LossSpec, Variant, loss_forward, margin_df  # noqa: F401

REL_ERROR_FLOOR = 1e-8
BOUNDARY_FACTOR = 10.0


@dataclass
class BackwardOutput:
    d_cos: np.ndarray
    d_weights: np.ndarray
    d_features: np.ndarray
    forward: ForwardOutput = field(repr=False, default=None)
    cos: np.ndarray = field(repr=False, default=None)


def sample_coefficients(spec, forward):
    """Per-sample factor on the cross-entropy gradient, before the 1/N mean.

    Equal to the mining weight, unless the focal weight is differentiated,
    in which case d[(1-p)^g * ce]/d ce = (1-p)^g + g * p * (1-p)^(g-1) * ce.
    """
    if spec.variant.uses_gamma and spec.differentiate_focal_weight:
        gamma = spec.mining.gamma
        p = forward.p_target
        q = 1.0 - p
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(q > 0.0, gamma * p * q ** (gamma - 1.0) * forward.ce, 0.0)
        return q**gamma + extra
    return forward.weight


def loss_backward(cos, labels, spec, forward):
    """Gradient of the mean batch loss with respect to the cosine matrix.

    Non-target entries get ``s * p_k``, multiplied by ``t`` where the
    support-vector mask is set; the target entry gets
    ``s * (p_y - 1) * f'(cos_y)``. The mask is the one stored in ``forward``.
    """
    cos = np.asarray(cos, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if forward.prob.shape != cos.shape or forward.ce.shape != labels.shape:
        raise StaleForward(f"forward has shape {forward.prob.shape}, cosines have {cos.shape}")
    coef = sample_coefficients(spec, forward) / cos.shape[0]
    return _kernels.backward(
        forward.prob, forward.mask, labels, spec.sv.s, spec.sv.t,
        np.ascontiguousarray(forward.margin_slope), np.ascontiguousarray(coef, dtype=np.float64),
    )


def full_backward(x, w, labels, spec, frozen_mask=None, frozen_weight=None):
    """Gradients of the mean loss with respect to raw features and raw weights.

    Both ``x`` and ``w`` are row-normalized inside; the chain rule runs
    through both normalizations.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    xh = normalize_rows(x)
    wh = normalize_rows(w)
    cos = cosine_logits(xh, wh)
    fwd = loss_forward(cos, labels, spec, frozen_mask=frozen_mask, frozen_weight=frozen_weight)
    d_cos = loss_backward(cos, labels, spec, fwd)
    d_w = normalize_backward(w, d_cos.T @ xh)
    d_x = normalize_backward(x, d_cos @ wh)
    return BackwardOutput(d_cos, d_w, d_x, fwd, cos)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_entry: tuple
    step: float
    tolerance: float
    passed: bool
    checked_entries: int = 0
    excluded_samples: tuple = ()

    def to_text(self, name=None):
        lines = []
        if name is not None:
            lines.append(f"loss: {name}")
        lines += [
            f"passed: {str(self.passed).lower()}",
            f"max_relative_error: {self.max_relative_error:.17g}",
            f"worst_entry: {self.worst_entry[0]}[{self.worst_entry[1]}][{self.worst_entry[2]}]",
            f"step: {self.step:.17g}",
            f"tolerance: {self.tolerance:.17g}",
            f"checked_entries: {self.checked_entries}",
            "excluded_samples: " + (",".join(str(i) for i in self.excluded_samples) or "none"),
        ]
        return "\n".join(lines) + "\n"


def _unit_differences(v, h):
    """Normalized rows and the exact differences ``u(v + h e_j) - u(v - h e_j)``.

    Returns ``u_minus`` and ``du`` of shape R x D x D, indexed by
    (row, perturbed coordinate, component). Written without subtracting
    nearly equal quantities so ``du`` is accurate relative to its own size.
    """
    d = v.shape[1]
    eye = np.eye(d, dtype=v.dtype)
    r2 = np.einsum("rd,rd->r", v, v)[:, None]
    rp = np.sqrt(r2 + 2 * h * v + h * h)
    rm = np.sqrt(r2 - 2 * h * v + h * h)
    # 1/r+ - 1/r- = -4 h v_j / ((r+ + r-) r+ r-)
    inv_gap = -4 * h * v / ((rp + rm) * rp * rm)
    du = v[:, None, :] * inv_gap[:, :, None] + h * eye[None] * (1 / rp + 1 / rm)[:, :, None]
    u_minus = (v[:, None, :] - h * eye[None]) / rm[:, :, None]
    return u_minus, du


def _reference_differences(x, w, labels, spec, h, weight):
    """Central-difference numerators ``L(+h) - L(-h)`` for every raw coordinate.

    The loss is evaluated in its literal form, ``-log(e^{s f} / (e^{s f} +
    sum_k h_k e^{s cos_k}))``, in extended precision. Each difference is
    propagated stage by stage (unit vectors, cosines, angles, logits, log-sum)
    so the result carries no cancellation error from subtracting two losses.
    Rows: x coordinates in C order, then w coordinates in C order.
    """
    ld = np.longdouble
    x = x.astype(ld)
    w = w.astype(ld)
    h = ld(h)
    n, d = x.shape
    k = w.shape[0]
    s, t = ld(spec.sv.s), ld(spec.sv.t)
    m1, m2, m3 = (ld(v) for v in spec.margin.astuple())
    xh = x / np.sqrt(np.einsum("nd,nd->n", x, x))[:, None]
    wh = w / np.sqrt(np.einsum("kd,kd->k", w, w))[:, None]
    cos0 = np.clip(xh @ wh.T, ld(-1), ld(1))
    rows = np.arange(n)
    target = np.zeros((n, k), dtype=bool)
    target[rows, labels] = True

    identity = spec.margin.m1 == 1.0 and spec.margin.m3 == 0.0
    cy0 = cos0[rows, labels]
    fy0 = cy0 - m2 if identity else np.cos(np.minimum(m1 * np.arccos(cy0) + m3, ld(np.pi))) - m2
    if spec.variant is Variant.SV:
        mask = ((cy0[:, None] - cos0) < 0) & ~target
    elif spec.variant is Variant.SVX:
        mask = ((fy0[:, None] - cos0) < 0) & ~target
    else:
        mask = np.zeros((n, k), dtype=bool)

    # cosines at the minus point and their exact change, P x N x K
    p_total = (n + k) * d
    cm = np.broadcast_to(cos0, (p_total, n, k)).copy()
    dc = np.zeros((p_total, n, k), dtype=ld)
    xm, dx = _unit_differences(x, h)
    wm, dw = _unit_differences(w, h)
    for i in range(n):
        sl = slice(i * d, (i + 1) * d)
        cm[sl, i, :] = xm[i] @ wh.T
        dc[sl, i, :] = dx[i] @ wh.T
    for j in range(k):
        sl = slice(n * d + j * d, n * d + (j + 1) * d)
        cm[sl, :, j] = (wm[j] @ xh.T)
        dc[sl, :, j] = (dw[j] @ xh.T)
    cm = np.clip(cm, ld(-1), ld(1))

    cy = cm[:, rows, labels]
    dcy = dc[:, rows, labels]
    if identity:
        fy, dfy = cy - m2, dcy
    else:
        sm = np.sqrt(1 - cy * cy)
        cp = cy + dcy
        sp = np.sqrt(np.maximum(1 - cp * cp, ld(0)))
        ds = -dcy * (cp + cy) / np.where(sp + sm > 0, sp + sm, ld(1))
        dtheta = np.arcsin(np.clip(ds * cy - dcy * sm, ld(-1), ld(1)))
        a_minus = m1 * np.arccos(cy) + m3
        a_plus = a_minus + m1 * dtheta
        clamped = a_minus >= ld(np.pi)
        fy = np.where(clamped, ld(-1), np.cos(np.minimum(a_minus, ld(np.pi)))) - m2
        dfy = np.where(clamped, ld(0), -2 * np.sin((a_plus + a_minus) / 2) * np.sin(m1 * dtheta / 2))

    log_h = s * (t - 1) * (cm + 1) * mask
    a = s * cm + log_h
    da = s * dc * np.where(mask, t, ld(1))
    b = a - (s * fy)[..., None]
    db = da - (s * dfy)[..., None]
    b[:, target] = 0
    db[:, target] = 0
    eb = np.exp(b)
    z = eb.sum(axis=-1)
    dz = (eb * np.expm1(db)).sum(axis=-1)
    dce = np.log1p(dz / z)

    if weight is not None:
        dl = weight * dce
    else:
        gamma = ld(spec.mining.gamma)
        ce = np.log(z)
        q = -np.expm1(-ce)
        dq = np.exp(-ce) * -np.expm1(-dce)
        g = q**gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            dg = np.where(q > 0, g * np.expm1(gamma * np.log1p(dq / np.where(q > 0, q, ld(1)))), np.abs(dq) ** gamma)
        dl = g * dce + (ce + dce) * dg
    return dl.sum(axis=-1) / n


def boundary_slack(x, w, labels, spec):
    """Distance of each sample from a non-differentiable point of its loss.

    Measured in cosine units: the nearest support-vector decision boundary
    and, for angular margins, the clamp at pi and the singularity at zero
    angle. Infinite when the sample's loss is smooth everywhere.
    """
    xh = normalize_rows(x)
    wh = normalize_rows(w)
    cos = cosine_logits(xh, wh)
    n = cos.shape[0]
    rows = np.arange(n)
    cy = cos[rows, labels]
    slack = np.full(n, np.inf)
    if spec.variant in (Variant.SV, Variant.SVX):
        ref = cy if spec.variant is Variant.SV else _kernels.margin_f_np(cy, *spec.margin.astuple())
        gap = np.abs(ref[:, None] - cos)
        gap[rows, labels] = np.inf
        slack = np.minimum(slack, gap.min(axis=1))
    m = spec.margin
    if spec.variant.uses_margin and not (m.m1 == 1.0 and m.m3 == 0.0):
        theta = np.arccos(cy)
        slack = np.minimum(slack, np.abs(m.m1 * theta + m.m3 - np.pi))
        slack = np.minimum(slack, theta)
    return slack


def finite_difference_check(x, w, labels, spec, step=1e-6, tolerance=1e-5, backward=full_backward):
    """Compare ``backward`` against central differences of the loss.

    Every raw coordinate of ``x`` and ``w`` is moved by +-``step``. Mining
    weights are held at their unperturbed values unless the focal weight is
    differentiated, matching what the analytic backward treats as constant.
    Samples within ``10 * step`` (scaled by the inverse input norms) of a
    non-differentiable point are dropped with a :class:`BoundaryProximity`
    warning.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not 1e-8 <= step <= 1e-4:
        raise ValueError(f"step must lie in [1e-8, 1e-4], got {step}")

    sensitivity = np.maximum(1.0 / row_norms(x), np.max(1.0 / row_norms(w)))
    near = boundary_slack(x, w, labels, spec) < BOUNDARY_FACTOR * step * sensitivity
    excluded = tuple(int(i) for i in np.flatnonzero(near))
    if excluded:
        warnings.warn(f"samples {excluded} lie on a decision boundary; excluded", BoundaryProximity, stacklevel=2)
    keep = np.flatnonzero(~near)
    if keep.size == 0:
        return GradCheckReport(0.0, ("none", -1, -1), step, tolerance, True, 0, excluded)

    frozen = None
    if spec.variant.uses_hard_fraction or (spec.variant.uses_gamma and not spec.differentiate_focal_weight):
        # taken on the full batch so hard-mining selection is not redone on the subset
        frozen = loss_forward(cosine_logits(normalize_rows(x), normalize_rows(w)), labels, spec).weight[keep]
    x, labels = x[keep], labels[keep]
    analytic = backward(x, w, labels, spec, frozen_weight=frozen)

    n, d = x.shape
    weight = None if frozen is None else frozen.astype(np.longdouble)
    diffs = _reference_differences(x, w, labels, spec, step, weight)
    numeric = (diffs / (2 * np.longdouble(step))).astype(np.float64)

    exact = np.concatenate([analytic.d_features.ravel(), analytic.d_weights.ravel()])
    denom = np.maximum(np.maximum(np.abs(exact), np.abs(numeric)), REL_ERROR_FLOOR)
    rel = np.abs(exact - numeric) / denom
    worst = int(np.argmax(rel))
    if worst < n * d:
        entry = ("x", int(keep[worst // d]), worst % d)
    else:
        entry = ("w", (worst - n * d) // d, (worst - n * d) % d)
    max_rel = float(rel[worst])
    passed = bool(max_rel < tolerance) and bool(np.all(np.isfinite(exact)))
    return GradCheckReport(max_rel, entry, step, tolerance, passed, int(rel.size), excluded)


def random_instance(rng, max_n=8, max_k=6, max_d=8):
    """Random raw features, weights and labels for gradient checks."""
    n = int(rng.integers(1, max_n + 1))
    k = int(rng.integers(2, max_k + 1))
    d = int(rng.integers(2, max_d + 1))
    x = rng.standard_normal((n, d))
    w = rng.standard_normal((k, d))
    labels = rng.integers(0, k, size=n)
    return x, w, labels


def random_spec(rng, variant):
    """A spec of ``variant`` with parameters drawn from their valid ranges."""
    variant = Variant(variant)
    kw = {"s": float(rng.uniform(2.0, 32.0))}
    if variant.uses_t:
        kw["t"] = float(rng.uniform(1.0, 1.4))
    if variant.uses_margin:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            kw["m2"] = float(rng.uniform(0.0, 0.5))
        elif kind == 1:
            kw["m3"] = float(rng.uniform(0.0, 0.6))
        else:
            kw.update(m1=float(rng.integers(1, 5)), m2=float(rng.uniform(0.0, 0.2)), m3=float(rng.uniform(0.0, 0.3)))
    if variant.uses_gamma:
        kw["gamma"] = float(rng.uniform(0.0, 3.0))
    if variant.uses_hard_fraction:
        kw["hard_fraction"] = float(rng.uniform(0.2, 1.0))
    return LossSpec.make(variant, **kw)


def relative_error(a, b, floor=REL_ERROR_FLOOR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


__all__ = [
    "BackwardOutput", "GradCheckReport", "loss_backward", "margin_df", "full_backward",
    "finite_difference_check", "boundary_slack", "random_instance", "random_spec",
    "relative_error", "sample_coefficients",
]
