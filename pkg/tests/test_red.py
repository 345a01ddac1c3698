import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from cloudshield import synth
from cloudshield.red import (DENSITY_FLOOR, KdeDetector, RedSet, build_detector, calibrate_eer_threshold,
                             calibrate_normal_threshold, compute_red, dumps_detector,
                             eer_threshold_from_scores, error_rates, loads_detector, red_magnitude,
                             scott_bandwidth, update_detector)


def brute_density(ref, b, x):
    n, d = ref.shape
    norm = (2 * math.pi) ** (-d / 2) * b ** (-d) / n
    return norm * math.fsum(math.exp(-float(np.sum((x - r) ** 2)) / (2 * b * b)) for r in ref)


def near_queries(rng, ref, k, spread):
    return ref[rng.integers(len(ref), size=k)] + spread * rng.standard_normal((k, ref.shape[1]))


def test_standard_normal_kernel_peak():
    det = build_detector(RedSet(np.zeros((1, 1))), bandwidth=1.0)
    assert det.density(np.zeros(1)) == pytest.approx(0.398942, abs=5e-7)
    assert det.density(np.zeros(1)) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)


@pytest.mark.parametrize("d", [1, 2, 13])
def test_density_matches_brute_force(d):
    rng = np.random.default_rng(d)
    ref = rng.standard_normal((60, d))
    det = build_detector(RedSet(ref))
    q = near_queries(rng, ref, 30, det.bandwidth)
    got = det.density(q)
    for k in range(len(q)):
        assert got[k] == pytest.approx(brute_density(ref, det.bandwidth, q[k]), rel=1e-12)


def test_one_dimensional_density_integrates_to_one():
    rng = np.random.default_rng(0)
    det = build_detector(RedSet(rng.standard_normal((200, 1))))
    total, _ = quad(lambda x: float(det.density(np.array([x]))), -12, 12, limit=400)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_far_query_hits_the_floor():
    det = build_detector(RedSet(np.zeros((5, 2))), bandwidth=0.1)
    assert det.score(np.array([1e3, 1e3])) == pytest.approx(-math.log(DENSITY_FLOOR))
    assert det.density(np.array([1e3, 1e3])) == 0.0


def test_tail_decays_like_the_kernel():
    det = build_detector(RedSet(np.zeros((1, 1))), bandwidth=1.0)
    assert det.log_density(np.array([5.0])) == pytest.approx(-12.5 - 0.5 * math.log(2 * math.pi), rel=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_update_equals_rebuild(seed, d):
    rng = np.random.default_rng(seed)
    a = RedSet(rng.standard_normal((rng.integers(1, 40), d)))
    b = RedSet(rng.standard_normal((rng.integers(1, 40), d)))
    base = build_detector(a).with_threshold(3.0)
    upd = update_detector(base, b)
    full = build_detector(a + b, bandwidth=base.bandwidth, threshold=3.0)
    q = rng.standard_normal((20, d))
    np.testing.assert_allclose(upd.log_density(q), full.log_density(q), rtol=1e-12, atol=0)
    assert upd.bandwidth == base.bandwidth and upd.threshold == 3.0


def test_update_dimension_checked():
    det = build_detector(RedSet(np.zeros((3, 2))))
    with pytest.raises(ValueError):
        update_detector(det, RedSet(np.zeros((1, 3))))


@pytest.mark.parametrize("d", [2, 13])
def test_truncated_agrees_with_exact(d):
    rng = np.random.default_rng(d)
    ref = RedSet(rng.standard_normal((500, d)))
    exact = build_detector(ref)
    fast = build_detector(ref, truncated=True)
    q = np.vstack([near_queries(rng, ref.samples, 50, 1.0), 30 * rng.standard_normal((5, d))])
    np.testing.assert_allclose(fast.log_density(q), exact.log_density(q), rtol=1e-9)


def test_scott_bandwidth():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((1000, 3)) * np.array([1.0, 2.0, 3.0])
    expected = 1000 ** (-1 / 7) * ref.std(axis=0).mean()
    assert scott_bandwidth(ref) == pytest.approx(expected)
    assert scott_bandwidth(np.zeros((5, 2))) > 0


def test_detector_validation():
    with pytest.raises(ValueError):
        KdeDetector(RedSet(np.zeros((2, 2))), bandwidth=0.0)
    with pytest.raises(ValueError):
        KdeDetector(RedSet(np.zeros((2, 2))), bandwidth=1.0, kind="other")
    with pytest.raises(ValueError):
        build_detector(RedSet(np.zeros((2, 2)))).score(np.zeros(3))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300, unique=True))
def test_normal_threshold_coverage(scores):
    theta = calibrate_normal_threshold(None, scores, 0.80)
    n = len(scores)
    covered = np.mean(np.asarray(scores) <= theta)
    assert covered >= 0.80 - 1.0 / n
    assert covered <= 0.80 + 1.0 / n
    assert theta == pytest.approx(np.quantile(scores, 0.80), rel=1e-12, abs=1e-9)


def test_normal_threshold_with_ties_is_the_plain_quantile():
    assert calibrate_normal_threshold(None, [0.0] * 6) == 0.0
    assert calibrate_normal_threshold(None, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) == pytest.approx(5.0)


def oracle_min_gap(pos, neg):
    """Smallest |FPR - FNR| over every distinct accept-if-score<=t rule."""
    pooled = sorted(set(pos) | set(neg))
    best = None
    for t in [pooled[0] - 1.0] + pooled:
        fpr = Fraction(sum(s <= t for s in neg), len(neg))
        fnr = Fraction(sum(s > t for s in pos), len(pos))
        gap = abs(fpr - fnr)
        best = gap if best is None else min(best, gap)
    return best


@given(st.lists(st.integers(-20, 20), min_size=1, max_size=40),
       st.lists(st.integers(-20, 20), min_size=1, max_size=40))
def test_eer_threshold_matches_exhaustive_sweep(pos, neg):
    pos = [float(v) for v in pos]
    neg = [float(v) for v in neg]
    theta = eer_threshold_from_scores(pos, neg)
    fpr = Fraction(sum(s <= theta for s in neg), len(neg))
    fnr = Fraction(sum(s > theta for s in pos), len(pos))
    assert abs(fpr - fnr) == oracle_min_gap(pos, neg)


def test_eer_separable_classes():
    theta = eer_threshold_from_scores([1.0, 2.0, 3.0], [10.0, 11.0])
    assert 3.0 <= theta < 10.0
    assert error_rates(theta, [1.0, 2.0, 3.0], [10.0, 11.0]) == (0.0, 0.0)


def test_eer_with_detector():
    rng = np.random.default_rng(0)
    inside = RedSet(rng.standard_normal((200, 2)))
    det = build_detector(inside)
    theta = calibrate_eer_threshold(det, RedSet(rng.standard_normal((100, 2))),
                                    RedSet(rng.standard_normal((100, 2)) + 6))
    assert det.with_threshold(theta).accepts(np.zeros(2))
    assert not det.with_threshold(theta).accepts(np.full(2, 6.0))


def test_profile_round_trip():
    rng = np.random.default_rng(0)
    det = build_detector(RedSet(rng.standard_normal((30, 4)), "unit test"), "known_attack", threshold=12.5)
    text = dumps_detector(det)
    back = loads_detector(text)
    assert back.kind == "known_attack" and back.threshold == 12.5 and back.bandwidth == det.bandwidth
    np.testing.assert_array_equal(back.reference.samples, det.reference.samples)
    assert dumps_detector(back) == text


def test_profile_rejects_bad_text():
    with pytest.raises(ValueError):
        loads_detector("version=1\nkind=known_attack\n")


def test_compute_red_shapes(small_model, catalog):
    tr = synth.generate(catalog.workloads["database"], [], 100, seed=4)
    red = compute_red(small_model, tr)
    assert red.samples.shape == (100 - small_model.history_len, 13)
    np.testing.assert_array_equal(red.t_ms, tr.t_ms[small_model.history_len:])
    assert red_magnitude(red).shape == (len(red),)


def test_attack_residuals_are_larger(small_model, catalog):
    w = catalog.workloads["database"]
    clean = red_magnitude(compute_red(small_model, synth.generate(w, [], 200, seed=1)))
    hit = red_magnitude(compute_red(small_model, synth.generate(w, [catalog.attacks["l1pp"]], 200, seed=1)))
    assert np.median(hit) > 2 * np.median(clean)
