"""Row kernels for the loss forward and backward passes.

Every kernel exists twice: a loop version compiled by numba and a
vectorized numpy version. The public names at the bottom point at one or
the other depending on :mod:`svsoftmax._accel`. Both versions perform the
same floating point operations per entry; only the order of the row sums
differs, so they agree to a few ulps.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

MASK_NONE = 0
MASK_PLAIN = 1
MASK_MARGIN = 2

# Below this sin(theta) the margin derivative switches to its small-angle series.
SIN_GUARD = 1e-7
# Angle of the largest double below 1.0; used when cos_y rounds to exactly 1.
THETA_FLOOR = math.sqrt(2.0 * 2.0**-53)


# ---------------------------------------------------------------------------
# scalar margin function, shared by the compiled kernels


def _margin_f_scalar(c, m1, m2, m3):
    if m1 == 1.0 and m3 == 0.0:
        return c - m2
    c = min(1.0, max(-1.0, c))
    a = m1 * math.acos(c) + m3
    if a >= math.pi:
        a = math.pi
    return math.cos(a) - m2


def _margin_df_scalar(c, m1, m2, m3):
    if m1 == 1.0 and m3 == 0.0:
        return 1.0
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    a = m1 * theta + m3
    if a >= math.pi:
        return 0.0
    st = math.sin(theta)
    if st < SIN_GUARD and theta < 1.0:
        th = max(theta, THETA_FLOOR)
        return m1 * (math.sin(m3) + m1 * th * math.cos(m3)) / th
    return m1 * math.sin(a) / max(st, 1e-300)


margin_f_nb = njit(_margin_f_scalar)
margin_df_nb = njit(_margin_df_scalar)


def margin_f_np(c, m1, m2, m3):
    c = np.asarray(c, dtype=np.float64)
    if m1 == 1.0 and m3 == 0.0:
        return c - m2
    a = np.minimum(m1 * np.arccos(np.clip(c, -1.0, 1.0)) + m3, np.pi)
    return np.cos(a) - m2


def margin_df_np(c, m1, m2, m3):
    c = np.asarray(c, dtype=np.float64)
    if m1 == 1.0 and m3 == 0.0:
        return np.ones_like(c)
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    a = m1 * theta + m3
    st = np.sin(theta)
    th = np.maximum(theta, THETA_FLOOR)
    series = m1 * (np.sin(m3) + m1 * th * np.cos(m3)) / th
    exact = m1 * np.sin(a) / np.maximum(st, 1e-300)
    out = np.where((st < SIN_GUARD) & (theta < 1.0), series, exact)
    return np.where(a >= np.pi, 0.0, out)


# ---------------------------------------------------------------------------
# forward


def _forward_loop(cos, labels, s, t, m1, m2, m3, mask_kind, use_frozen, frozen):
    n, k = cos.shape
    adjusted = np.empty((n, k))
    prob = np.empty((n, k))
    ce = np.empty(n)
    fy = np.empty(n)
    dfy = np.empty(n)
    mask = np.zeros((n, k), dtype=np.bool_)
    boost = s * (t - 1.0)
    for i in range(n):
        y = labels[i]
        cy = cos[i, y]
        f = margin_f_nb(cy, m1, m2, m3)
        fy[i] = f
        dfy[i] = margin_df_nb(cy, m1, m2, m3)
        ref = cy if mask_kind == MASK_PLAIN else f
        for j in range(k):
            if j == y:
                adjusted[i, j] = s * f
                continue
            if use_frozen:
                hit = frozen[i, j]
            elif mask_kind == MASK_NONE:
                hit = False
            else:
                hit = (ref - cos[i, j]) < 0.0
            mask[i, j] = hit
            a = s * cos[i, j]
            if hit:
                a = a + boost * (cos[i, j] + 1.0)
            adjusted[i, j] = a
        jmax = 0
        for j in range(1, k):
            if adjusted[i, j] > adjusted[i, jmax]:
                jmax = j
        top = adjusted[i, jmax]
        rest = 0.0
        for j in range(k):
            if j != jmax:
                e = math.exp(adjusted[i, j] - top)
                prob[i, j] = e
                rest += e
        prob[i, jmax] = 1.0
        denom = 1.0 + rest
        for j in range(k):
            prob[i, j] = prob[i, j] / denom
        ce[i] = math.log1p(rest) - (adjusted[i, y] - top)
    return adjusted, prob, ce, mask, fy, dfy


forward_nb = njit(_forward_loop)


def forward_np(cos, labels, s, t, m1, m2, m3, mask_kind, use_frozen, frozen):
    n, k = cos.shape
    rows = np.arange(n)
    cy = cos[rows, labels]
    fy = margin_f_np(cy, m1, m2, m3)
    dfy = margin_df_np(cy, m1, m2, m3)
    target = np.zeros((n, k), dtype=np.bool_)
    target[rows, labels] = True
    if use_frozen:
        mask = frozen.astype(np.bool_) & ~target
    elif mask_kind == MASK_NONE:
        mask = np.zeros((n, k), dtype=np.bool_)
    else:
        ref = cy if mask_kind == MASK_PLAIN else fy
        mask = ((ref[:, None] - cos) < 0.0) & ~target
    boost = s * (t - 1.0)
    adjusted = s * cos
    adjusted = np.where(mask, adjusted + boost * (cos + 1.0), adjusted)
    adjusted[rows, labels] = s * fy
    jmax = np.argmax(adjusted, axis=1)
    top = adjusted[rows, jmax]
    e = np.exp(adjusted - top[:, None])
    e[rows, jmax] = 0.0
    rest = e.sum(axis=1)
    e[rows, jmax] = 1.0
    prob = e / (1.0 + rest)[:, None]
    ce = np.log1p(rest) - (adjusted[rows, labels] - top)
    return adjusted, prob, ce, mask, fy, dfy


# ---------------------------------------------------------------------------
# backward


def _backward_loop(prob, mask, labels, s, t, dfy, coef):
    n, k = prob.shape
    out = np.empty((n, k))
    for i in range(n):
        y = labels[i]
        for j in range(k):
            if j == y:
                out[i, j] = s * (prob[i, j] - 1.0) * coef[i] * dfy[i]
            else:
                g = s * prob[i, j] * coef[i]
                if mask[i, j]:
                    g = g * t
                out[i, j] = g
    return out


backward_nb = njit(_backward_loop)


def backward_np(prob, mask, labels, s, t, dfy, coef):
    n = prob.shape[0]
    rows = np.arange(n)
    out = s * prob * coef[:, None]
    out = np.where(mask, out * t, out)
    out[rows, labels] = s * (prob[rows, labels] - 1.0) * coef * dfy
    return out


# ---------------------------------------------------------------------------
# support-vector mask on its own


def _mask_loop(cos, labels, ref):
    n, k = cos.shape
    mask = np.zeros((n, k), dtype=np.bool_)
    for i in range(n):
        y = labels[i]
        for j in range(k):
            if j != y:
                mask[i, j] = (ref[i] - cos[i, j]) < 0.0
    return mask


mask_nb = njit(_mask_loop)


def mask_np(cos, labels, ref):
    n = cos.shape[0]
    mask = (ref[:, None] - cos) < 0.0
    mask[np.arange(n), labels] = False
    return mask


_NO_FROZEN = np.zeros((0, 0), dtype=np.bool_)

if USE_NUMBA:
    _forward, _backward, _mask = forward_nb, backward_nb, mask_nb
else:
    _forward, _backward, _mask = forward_np, backward_np, mask_np


def forward(cos, labels, s, t, m1, m2, m3, mask_kind, frozen=None):
    if frozen is None:
        return _forward(cos, labels, s, t, m1, m2, m3, mask_kind, False, _NO_FROZEN)
    return _forward(cos, labels, s, t, m1, m2, m3, mask_kind, True, np.ascontiguousarray(frozen, dtype=np.bool_))


def backward(prob, mask, labels, s, t, dfy, coef):
    return _backward(prob, mask, labels, s, t, dfy, coef)


def support_mask(cos, labels, ref):
    return _mask(cos, labels, ref)
