import numpy as np
import pytest
from hypothesis import given, strategies as st

from cloudshield import synth
from cloudshield.trace import N_EVENTS


def test_preset_sizes(catalog):
    assert catalog.sizes() == (5, 11, 9)
    assert set(catalog.workloads) == {"ml_training", "database", "stream_server", "web_server", "mapreduce"}
    assert {"spectre_v3", "spectre_v4", "fr", "ff", "l1pp", "l3pp"} <= set(catalog.attacks)
    assert {"gpg-rsa", "gcc", "libquantum"} <= set(catalog.benign)


def test_zero_day_split_names_exist(catalog):
    assert set(synth.KNOWN_ATTACKS_ZERO_DAY) < set(catalog.attacks)
    assert set(synth.CONCURRENT_BENIGN) <= set(catalog.benign)


def test_generation_is_deterministic(catalog):
    w = catalog.workloads["database"]
    a = synth.generate(w, [catalog.attacks["l1pp"]], 300, seed=7)
    b = synth.generate(w, [catalog.attacks["l1pp"]], 300, seed=7)
    c = synth.generate(w, [catalog.attacks["l1pp"]], 300, seed=8)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)
    assert a.label.workload == "database" and a.label.attack == "l1pp"


def test_noise_free_workload_is_its_deterministic_part():
    base = np.full(N_EVENTS, 100.0)
    spec = synth.WorkloadSpec("flat", base, np.full(N_EVENTS, 1e-300))
    tr = synth.generate(spec, [], 50, seed=0)
    np.testing.assert_allclose(tr.counts, 100.0, rtol=0, atol=1e-12)


def test_counts_are_clamped_non_negative():
    spec = synth.WorkloadSpec("tiny", np.zeros(N_EVENTS), np.ones(N_EVENTS))
    tr = synth.generate(spec, [], 200, seed=0)
    assert tr.counts.min() == 0.0


@given(st.integers(1, 20), st.integers(0, 20), st.integers(1, 200))
def test_duty_pattern(on, off, n):
    p = synth.PerturbSpec("x", "attack", np.ones(N_EVENTS), np.zeros(N_EVENTS), (on, off))
    mask = p.active(n)
    assert mask[0]
    expected = [(k % (on + off)) < on for k in range(n)]
    assert mask.tolist() == expected
    np.testing.assert_array_equal(synth.attack_mask([p], n), mask)


def test_benign_perturbation_has_no_attack_truth(catalog):
    assert not synth.attack_mask([catalog.benign["gcc"]], 100).any()


def test_attack_shifts_counters(catalog):
    w = catalog.workloads["web_server"]
    clean = synth.generate(w, [], 600, seed=1).counts.mean(axis=0)
    hit = synth.generate(w, [catalog.attacks["l3pp"]], 600, seed=1).counts.mean(axis=0)
    miss = synth.EVENTS.index("l1d_read_miss")
    assert hit[miss] > clean[miss] + 500


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.WorkloadSpec("bad", np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        synth.PerturbSpec("bad", "neutral", np.ones(N_EVENTS), np.zeros(N_EVENTS))
    with pytest.raises(ValueError):
        synth.PerturbSpec("bad", "attack", np.zeros(N_EVENTS), np.zeros(N_EVENTS))
    with pytest.raises(ValueError):
        synth.generate(None, [], 10, seed=0)


def test_catalog_file_round_trip(catalog, tmp_path):
    synth.save_catalog(catalog, tmp_path / "presets.ini")
    back = synth.load_catalog(tmp_path / "presets.ini")
    assert back == catalog
    w = back.workloads["mapreduce"]
    np.testing.assert_array_equal(synth.generate(w, [], 50, 3).counts,
                                  synth.generate(catalog.workloads["mapreduce"], [], 50, 3).counts)


def test_unknown_preset_section():
    with pytest.raises(ValueError, match="unknown preset section"):
        synth.loads_catalog("[gizmo x]\nfoo=1\n")


def test_scenario_seed_is_stable():
    assert synth.scenario_seed(1, "a", "b") == synth.scenario_seed(1, "a", "b")
    assert synth.scenario_seed(1, "a", "b") != synth.scenario_seed(1, "b", "a")
