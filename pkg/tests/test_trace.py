import numpy as np
import pytest
from hypothesis import given, strategies as st

from cloudshield.trace import (CSV_HEADER, EVENTS, ManifestEntry, ProgramManifest, ScenarioLabel, Trace,
                               TraceFormatError, Verdict, digest_bytes, load_trace, parse_manifest,
                               save_trace, split_trace, verify_manifest)

LABEL = ScenarioLabel(workload="database")


def make_trace(n=10, interval=10.0, seed=0):
    rng = np.random.default_rng(seed)
    return Trace(np.arange(n) * interval, rng.uniform(0, 1000, (n, len(EVENTS))), LABEL, interval_ms=interval)


def write_csv(path, rows, header=CSV_HEADER):
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def test_header_is_timestamp_plus_13_events():
    assert CSV_HEADER[0] == "t_ms"
    assert len(EVENTS) == 13
    assert EVENTS[0] == "instruction" and EVENTS[-1] == "context_switch"


def test_round_trip_is_exact(tmp_path):
    tr = make_trace(25)
    save_trace(tr, tmp_path / "t.csv")
    back = load_trace(tmp_path / "t.csv", LABEL)
    np.testing.assert_array_equal(back.counts, tr.counts)
    np.testing.assert_array_equal(back.t_ms, tr.t_ms)
    assert back.interval_ms == 10.0


def test_interval_inferred_from_first_rows(tmp_path):
    rows = [[t * 5.0] + [1] * 13 for t in range(4)]
    write_csv(tmp_path / "t.csv", rows)
    assert load_trace(tmp_path / "t.csv", LABEL).interval_ms == 5.0


@pytest.mark.parametrize("mutate, kind", [
    (lambda rows: [r[:-1] for r in rows], "schema-mismatch"),
    (lambda rows: [rows[0], [rows[1][0]] + [-1] * 13] + rows[2:], "negative-count"),
    (lambda rows: [rows[0], [rows[1][0]] + ["nan"] * 13] + rows[2:], "non-finite-count"),
    (lambda rows: [rows[1], rows[0]] + rows[2:], "non-monotone-timestamp"),
    (lambda rows: rows[:2] + [[r[0] + 5.0] + r[1:] for r in rows[2:]], "interval-mismatch"),
    (lambda rows: [["x"] + [1] * 13] + rows[1:], "parse-error"),
])
def test_bad_csv_kinds(tmp_path, mutate, kind):
    rows = [[t * 10.0] + [1] * 13 for t in range(5)]
    write_csv(tmp_path / "t.csv", mutate(rows))
    with pytest.raises(TraceFormatError) as err:
        load_trace(tmp_path / "t.csv", LABEL)
    assert err.value.kind == kind


def test_wrong_header_rejected(tmp_path):
    write_csv(tmp_path / "t.csv", [[0] + [1] * 13], header=("t_ms",) + tuple(reversed(EVENTS)))
    with pytest.raises(TraceFormatError, match="schema-mismatch"):
        load_trace(tmp_path / "t.csv", LABEL)


def test_empty_file(tmp_path):
    (tmp_path / "t.csv").write_text("")
    with pytest.raises(TraceFormatError) as err:
        load_trace(tmp_path / "t.csv", LABEL)
    assert err.value.kind == "empty"


def test_trace_is_read_only():
    tr = make_trace()
    with pytest.raises(ValueError):
        tr.counts[0, 0] = 1.0


def test_label_needs_something():
    with pytest.raises(ValueError):
        ScenarioLabel()
    assert ScenarioLabel(workload="w", attack="l1pp").tag() == "workload=w,attack=l1pp"


@given(st.integers(min_value=3, max_value=500))
def test_split_is_contiguous_and_balanced(n):
    tr = make_trace(n)
    parts = split_trace(tr)
    assert sum(len(p) for p in parts) == n
    np.testing.assert_array_equal(np.concatenate([p.t_ms for p in parts]), tr.t_ms)
    for p in parts:
        assert abs(len(p) - n / 3) <= 1


def test_split_too_short():
    with pytest.raises(TraceFormatError, match="too-short"):
        split_trace(make_trace(2))


def test_manifest_round_trip_and_verdicts():
    payload = b"\x7fELF fake binary"
    m = ProgramManifest((ManifestEntry("gcc", "benign", digest_bytes(payload)),))
    back = parse_manifest("# programs\n" + m.dumps())
    assert back == m
    assert verify_manifest(payload, "gcc", back) is Verdict.PASS
    assert verify_manifest(payload + b"!", "gcc", back) is Verdict.DIGEST_MISMATCH
    assert verify_manifest(payload, "bzip2", back) is Verdict.UNKNOWN_PROGRAM


@pytest.mark.parametrize("text", [
    "gcc\tbenign\t" + "0" * 64 + "\n",
    "digest=sha256\ngcc benign " + "0" * 64 + "\n",
    "digest=sha256\ngcc\tcompiler\t" + "0" * 64 + "\n",
    "digest=sha256\ngcc\tbenign\tabc\n",
    "digest=nosuchhash\n",
])
def test_bad_manifests(text):
    with pytest.raises(TraceFormatError, match="bad-manifest"):
        parse_manifest(text)
