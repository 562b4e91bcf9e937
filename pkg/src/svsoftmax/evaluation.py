"""Verification and identification metrics on unit embeddings."""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData
from .geometry import normalize_rows

log = logging.getLogger(__name__)

DEFAULT_PAIR_CAP = 10_000


@dataclass
class PairSet:
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray


@dataclass
class EvalReport:
    tpr_at_far: list = field(default_factory=list)  # (far, threshold, tpr)
    rank1: float = 0.0
    mean_intra_angle: float = 0.0
    min_inter_center_angle: float = 0.0

    def to_json(self):
        doc = {
            "tpr_at_far": [
                {"far": float(far), "threshold": _finite_threshold(thr), "tpr": float(tpr)}
                for far, thr, tpr in self.tpr_at_far
            ],
            "rank1": float(self.rank1),
            "mean_intra_angle": float(self.mean_intra_angle),
            "min_inter_center_angle": float(self.min_inter_center_angle),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        rows = [(r["far"], r["threshold"], r["tpr"]) for r in doc["tpr_at_far"]]
        return cls(rows, doc["rank1"], doc["mean_intra_angle"], doc["min_inter_center_angle"])


def _finite_threshold(thr):
    # "accept nothing" is reported at the top of the score range
    return 1.0 if math.isinf(thr) else float(thr)


def build_pairs(embeddings, labels, max_pairs_per_kind=DEFAULT_PAIR_CAP, seed=0):
    """Cosine scores of same-class and cross-class pairs, seeded and capped.

    All unordered pairs are enumerated; a kind with more than
    ``max_pairs_per_kind`` pairs is subsampled without replacement, keeping
    the enumeration order of the survivors.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    i, j = np.triu_indices(len(labels), k=1)
    same = labels[i] == labels[j]
    rng = np.random.default_rng([int(seed), 7])
    out = []
    for sel in (same, ~same):
        a, b = i[sel], j[sel]
        if a.size == 0:
            raise InsufficientData("need at least one same-class and one cross-class pair")
        if a.size > max_pairs_per_kind:
            pick = np.sort(rng.choice(a.size, size=max_pairs_per_kind, replace=False))
            a, b = a[pick], b[pick]
        out.append(np.clip(np.einsum("nd,nd->n", emb[a], emb[b]), -1.0, 1.0))
    return PairSet(out[0], out[1])


def tpr_at_far(pairs, far_target):
    """Operating threshold and true positive rate at a false accept target.

    A pair is accepted when ``score >= threshold``. Candidate thresholds are
    the impostor scores plus +inf; the smallest candidate whose false accept
    rate does not exceed ``far_target`` is chosen.
    """
    if not 0.0 < far_target <= 1.0:
        raise ValueError(f"far_target must lie in (0, 1], got {far_target}")
    imp = np.sort(np.asarray(pairs.impostor_scores, dtype=np.float64))
    gen = np.sort(np.asarray(pairs.genuine_scores, dtype=np.float64))
    if imp.size == 0 or gen.size == 0:
        raise InsufficientData("tpr_at_far needs genuine and impostor scores")
    cand = np.append(np.unique(imp), np.inf)
    fa = (imp.size - np.searchsorted(imp, cand, side="left")) / imp.size
    # fa is non-increasing along cand, so the first hit is the smallest threshold
    thr = float(cand[np.argmax(fa <= far_target)])
    tpr = (gen.size - np.searchsorted(gen, thr, side="left")) / gen.size
    return thr, float(tpr)


def roc_points(pairs):
    """(threshold, far, tpr) for every impostor-score threshold, descending."""
    imp = np.sort(np.asarray(pairs.impostor_scores, dtype=np.float64))
    gen = np.sort(np.asarray(pairs.genuine_scores, dtype=np.float64))
    cand = np.unique(imp)[::-1]
    far = (imp.size - np.searchsorted(imp, cand, side="left")) / imp.size
    tpr = (gen.size - np.searchsorted(gen, cand, side="left")) / gen.size
    return cand, far, tpr


def rank1_identification(gallery_embeddings, gallery_labels, probe_embeddings, probe_labels):
    gallery = np.asarray(gallery_embeddings, dtype=np.float64)
    probes = np.asarray(probe_embeddings, dtype=np.float64)
    if gallery.shape[0] == 0 or probes.shape[0] == 0:
        raise InsufficientData("gallery and probe sets must be nonempty")
    best = np.argmax(probes @ gallery.T, axis=1)  # first maximum = lowest gallery index
    return float(np.mean(np.asarray(gallery_labels)[best] == np.asarray(probe_labels)))


def angular_stats(embeddings, labels, w):
    """Mean angle between each embedding and its class weight, and the
    smallest angle between any two class weights (radians)."""
    wh = normalize_rows(w)
    emb = np.asarray(embeddings, dtype=np.float64)
    own = np.clip(np.einsum("nd,nd->n", emb, wh[np.asarray(labels)]), -1.0, 1.0)
    gram = np.clip(wh @ wh.T, -1.0, 1.0)
    iu = np.triu_indices(wh.shape[0], k=1)
    return float(np.mean(np.arccos(own))), float(np.min(np.arccos(gram[iu])))


def gallery_split(labels, per_class=1):
    """Indices of the first ``per_class`` samples of each class, and the rest."""
    labels = np.asarray(labels)
    gallery = []
    for c in np.unique(labels):
        gallery.extend(np.flatnonzero(labels == c)[:per_class].tolist())
    gallery = np.array(sorted(gallery), dtype=np.int64)
    probes = np.setdiff1d(np.arange(len(labels)), gallery)
    return gallery, probes


def effective_far(far_target, num_impostors):
    """Clamp a FAR target to the smallest rate the impostor set can resolve."""
    floor = 1.0 / num_impostors
    if far_target < floor:
        log.warning("far target %g below 1/%d impostor pairs; clamped to %g", far_target, num_impostors, floor)
        return floor
    return far_target


def evaluate_embeddings(embeddings, labels, classifier, far_targets, pair_cap=DEFAULT_PAIR_CAP,
                        seed=0, gallery_per_class=1):
    pairs = build_pairs(embeddings, labels, pair_cap, seed)
    rows = []
    for far in far_targets:
        far = effective_far(far, pairs.impostor_scores.size)
        thr, tpr = tpr_at_far(pairs, far)
        rows.append((far, thr, tpr))
    gallery, probes = gallery_split(labels, gallery_per_class)
    if probes.size == 0:
        raise InsufficientData("no probes left after taking the gallery")
    rank1 = rank1_identification(embeddings[gallery], labels[gallery], embeddings[probes], labels[probes])
    intra, inter = angular_stats(embeddings, labels, classifier)
    return EvalReport(rows, rank1, intra, inter), pairs
