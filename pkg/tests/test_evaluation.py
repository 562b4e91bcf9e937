import json
import logging
import math

import numpy as np
import pytest

from oracles import rank1_brute, tpr_sweep
from svsoftmax.errors import InsufficientData
from svsoftmax.evaluation import (
    EvalReport, PairSet, angular_stats, build_pairs, effective_far, evaluate_embeddings, gallery_split,
    rank1_identification, roc_points, tpr_at_far,
)
from svsoftmax.geometry import normalize_rows

WORKED = PairSet(np.array([0.9, 0.8, 0.3]), np.array([0.5, 0.2, 0.1, 0.05]))


def test_worked_example():
    thr, tpr = tpr_at_far(WORKED, 0.25)
    assert thr == 0.5
    assert tpr == 2 / 3


def test_far_one_accepts_everything():
    thr, tpr = tpr_at_far(WORKED, 1.0)
    assert thr == 0.05 and tpr == 1.0


def test_perfect_separation():
    pairs = PairSet(np.array([0.8, 0.9, 0.95]), np.array([0.1, 0.2, 0.3, 0.4]))
    # smallest positive rate the impostor set can express
    thr, tpr = tpr_at_far(pairs, 1 / 4)
    assert tpr == 1.0 and thr == 0.4
    assert tpr_at_far(pairs, 1e-9) == (math.inf, 0.0)


def test_ties_at_threshold_count_as_false_accepts():
    pairs = PairSet(np.array([0.5, 0.6]), np.array([0.5, 0.5, 0.1, 0.0]))
    assert tpr_at_far(pairs, 0.5) == (0.5, 1.0)
    assert tpr_at_far(pairs, 0.25) == (math.inf, 0.0)


def test_tpr_errors():
    with pytest.raises(InsufficientData):
        tpr_at_far(PairSet(np.array([0.5]), np.array([])), 0.1)
    with pytest.raises(ValueError):
        tpr_at_far(WORKED, 0.0)


def test_tpr_matches_sweep_and_is_monotone():
    rng = np.random.default_rng(0)
    for _ in range(300):
        ng, ni = int(rng.integers(1, 100)), int(rng.integers(1, 100))
        gen = np.round(rng.uniform(-1, 1, ng), 2)  # rounding plants ties
        imp = np.round(rng.uniform(-1, 1, ni), 2)
        pairs = PairSet(gen, imp)
        prev = -1.0
        for far in sorted(rng.uniform(0, 1, 4).tolist() + [1.0 / ni, 1.0]):
            got = tpr_at_far(pairs, far)
            assert got == tpr_sweep(gen.tolist(), imp.tolist(), far)
            assert got[1] >= prev
            prev = got[1]


def test_roc_points_consistent_with_tpr():
    rng = np.random.default_rng(1)
    pairs = PairSet(rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 60))
    for thr, far, tpr in zip(*roc_points(pairs)):
        assert far == np.mean(pairs.impostor_scores >= thr)
        assert tpr == np.mean(pairs.genuine_scores >= thr)


def test_build_pairs_examples():
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pairs = build_pairs(emb, np.array([0, 0, 1]))
    assert pairs.genuine_scores.tolist() == [1.0]
    assert pairs.impostor_scores.tolist() == [0.0, 0.0]


def test_build_pairs_cap_and_determinism():
    rng = np.random.default_rng(2)
    emb = normalize_rows(rng.standard_normal((60, 4)))
    labels = np.repeat(np.arange(6), 10)
    a = build_pairs(emb, labels, max_pairs_per_kind=100, seed=5)
    b = build_pairs(emb, labels, max_pairs_per_kind=100, seed=5)
    c = build_pairs(emb, labels, max_pairs_per_kind=100, seed=6)
    assert a.genuine_scores.size == 100 and a.impostor_scores.size == 100
    np.testing.assert_array_equal(a.genuine_scores, b.genuine_scores)
    np.testing.assert_array_equal(a.impostor_scores, b.impostor_scores)
    assert not np.array_equal(a.impostor_scores, c.impostor_scores)
    full = build_pairs(emb, labels)
    assert full.genuine_scores.size == 6 * 45 and full.impostor_scores.size == 60 * 59 // 2 - 270


def test_build_pairs_insufficient():
    with pytest.raises(InsufficientData):
        build_pairs(np.eye(3), np.array([0, 1, 2]))


def test_rank1_examples():
    rng = np.random.default_rng(3)
    g = normalize_rows(rng.standard_normal((5, 3)))
    labels = np.arange(5)
    assert rank1_identification(g, labels, g, labels) == 1.0
    gallery = np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])
    probe = np.array([[1.0, 0.0, 0.0]])  # orthogonal to both: tie goes to index 0
    assert rank1_identification(gallery, np.array([7, 8]), probe, np.array([7])) == 1.0
    assert rank1_identification(gallery, np.array([7, 8]), probe, np.array([8])) == 0.0
    with pytest.raises(InsufficientData):
        rank1_identification(np.zeros((0, 3)), np.array([]), probe, np.array([0]))


def test_rank1_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(300):
        ng, npr, d = int(rng.integers(1, 21)), int(rng.integers(1, 30)), int(rng.integers(2, 6))
        g = normalize_rows(rng.standard_normal((ng, d)))
        p = normalize_rows(rng.standard_normal((npr, d)))
        gl, pl = rng.integers(0, 4, ng), rng.integers(0, 4, npr)
        assert rank1_identification(g, gl, p, pl) == rank1_brute(g, gl, p, pl)


def test_rank1_rotation_invariant():
    rng = np.random.default_rng(5)
    g = normalize_rows(rng.standard_normal((20, 6)))
    p = normalize_rows(rng.standard_normal((40, 6)))
    gl, pl = rng.integers(0, 5, 20), rng.integers(0, 5, 40)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    assert rank1_identification(g, gl, p, pl) == rank1_identification(g @ q, gl, p @ q, pl)


def test_angular_stats_examples():
    w = np.array([[1.0, 0.0], [0.0, 2.0]])
    emb = np.array([[1.0, 0.0], [0.0, 1.0]])
    intra, inter = angular_stats(emb, np.array([0, 1]), w)
    assert intra == 0.0
    assert inter == pytest.approx(math.pi / 2, abs=1e-15)


def test_angular_stats_random_case():
    rng = np.random.default_rng(6)
    w = rng.standard_normal((3, 4))
    emb = normalize_rows(rng.standard_normal((9, 4)))
    labels = np.array([0, 1, 2] * 3)
    wh = [[a / math.sqrt(sum(b * b for b in v)) for a in v] for v in w.tolist()]
    ref_intra = sum(math.acos(max(-1, min(1, sum(a * b for a, b in zip(e, wh[l])))))
                    for e, l in zip(emb.tolist(), labels)) / 9
    ref_inter = min(math.acos(sum(a * b for a, b in zip(wh[i], wh[j]))) for i in range(3) for j in range(i + 1, 3))
    intra, inter = angular_stats(emb, labels, w)
    assert abs(intra - ref_intra) < 1e-12 and abs(inter - ref_inter) < 1e-12
    assert 0 <= intra <= math.pi and 0 <= inter <= math.pi


def test_gallery_split():
    gallery, probes = gallery_split(np.array([2, 0, 0, 1, 2, 1]))
    assert gallery.tolist() == [0, 1, 3]
    assert probes.tolist() == [2, 4, 5]


def test_effective_far_clamps(caplog):
    with caplog.at_level(logging.WARNING):
        assert effective_far(1e-9, 100) == 0.01
    assert "clamped" in caplog.text
    assert effective_far(0.1, 100) == 0.1


def test_report_json_fields():
    rng = np.random.default_rng(7)
    emb = normalize_rows(rng.standard_normal((40, 4)))
    labels = np.repeat(np.arange(4), 10)
    report, _ = evaluate_embeddings(emb, labels, rng.standard_normal((4, 4)), [0.1, 1e-9])
    doc = json.loads(report.to_json())
    assert set(doc) == {"tpr_at_far", "rank1", "mean_intra_angle", "min_inter_center_angle"}
    for row in doc["tpr_at_far"]:
        assert set(row) == {"far", "threshold", "tpr"}
        assert -1.0 <= row["threshold"] <= 1.0 and 0.0 <= row["tpr"] <= 1.0
    assert doc["tpr_at_far"][1]["far"] == 1.0 / 600  # clamped to one impostor pair
    back = EvalReport.from_json(report.to_json())
    assert back.to_json() == report.to_json()
