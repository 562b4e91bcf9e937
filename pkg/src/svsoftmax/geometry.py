"""Unit normalization, cosine logits and the normalization Jacobian."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector, DimensionMismatch, InvalidValue

NORM_FLOOR = 1e-12


@dataclass
class FeatureBatch:
    """Samples as rows of ``data`` with integer ``labels`` in ``[0, num_classes)``."""

    data: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 2:
            raise InvalidValue(f"feature matrix must be N x D with N >= 1, D >= 2, got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise DimensionMismatch("labels must have one entry per sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InvalidValue(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.data.shape[0]


def row_norms(m):
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def normalize_rows(m, norm_floor=NORM_FLOOR):
    """Scale every row of ``m`` to unit L2 norm.

    Raises
    ------
    DegenerateVector
        If any row norm is ``<= norm_floor``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        return normalize_rows(m[None, :], norm_floor)[0]
    norms = row_norms(m)
    bad = np.flatnonzero(~(norms > norm_floor))
    if bad.size:
        raise DegenerateVector(f"row {bad[0]} has norm {norms[bad[0]]:.3g} <= {norm_floor:g}")
    return m / norms[:, None]


def cosine_logits(x, w):
    """Cosine matrix ``x @ w.T`` of row-normalized inputs, clamped to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionMismatch(f"cannot pair features {x.shape} with weights {w.shape}")
    return np.clip(x @ w.T, -1.0, 1.0)


def normalize_backward(v, upstream, norm_floor=NORM_FLOOR):
    """Pull ``upstream`` (a gradient w.r.t. ``v/|v|``) back to ``v``.

    Returns ``(I - u u^T) upstream / |v|`` with ``u = v/|v|``. Works row-wise
    on matrices as well as on single vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if v.shape != upstream.shape:
        raise DimensionMismatch(f"shape {v.shape} vs upstream {upstream.shape}")
    if v.ndim == 1:
        return normalize_backward(v[None, :], upstream[None, :], norm_floor)[0]
    norms = row_norms(v)
    bad = np.flatnonzero(~(norms > norm_floor))
    if bad.size:
        raise DegenerateVector(f"row {bad[0]} has norm {norms[bad[0]]:.3g} <= {norm_floor:g}")
    u = v / norms[:, None]
    radial = np.einsum("ij,ij->i", u, upstream)
    return (upstream - u * radial[:, None]) / norms[:, None]
