import csv

import numpy as np
import pytest

from cloudshield.cli import build_parser, main
from cloudshield.red import RedSet, build_detector, save_detector

SUBCOMMANDS = ("simulate", "select-features", "train", "profile", "detect", "evaluate")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sim, model, prof = root / "sim", root / "model.json", root / "prof"
    assert main(["simulate", "--out", str(sim), "--n-samples", "600", "--seed", "3"]) == 0
    assert main(["train", "--traces", str(sim / "workloads"), "--out", str(model), "--epochs", "3",
                 "--hidden", "8", "--history", "8", "--split", "--seed", "1"]) == 0
    assert main(["profile", "--model", str(model), "--workloads", str(sim / "workloads"),
                 "--attacks", str(sim / "attacks"), "--benign", str(sim / "benign"), "--out", str(prof)]) == 0
    return root


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_every_flag(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_unknown_flag_is_a_usage_error(cmd):
    assert main([cmd, "--no-such-flag"]) == 2


def test_missing_directory_is_a_usage_error(tmp_path):
    assert main(["select-features", "--traces", str(tmp_path / "nope"), "--out", str(tmp_path / "r.csv")]) == 2
    assert main(["train", "--traces", str(tmp_path / "nope"), "--out", str(tmp_path / "m.json")]) == 2


def test_simulate_layout(pipeline):
    sim = pipeline / "sim"
    assert len(list((sim / "workloads").glob("*.csv"))) == 5
    assert len(list((sim / "benign").glob("*.csv"))) == 11
    assert len(list((sim / "attacks").glob("*.csv"))) == 9
    assert len(list((sim / "scenarios").glob("*.csv"))) == 45
    assert (sim / "idle.csv").exists()


def test_simulate_is_byte_identical(tmp_path, pipeline):
    assert main(["simulate", "--out", str(tmp_path), "--n-samples", "600", "--seed", "3", "--scenarios", "none"]) == 0
    for path in (tmp_path / "workloads").glob("*.csv"):
        assert path.read_bytes() == (pipeline / "sim" / "workloads" / path.name).read_bytes()


def test_train_is_byte_identical(tmp_path, pipeline):
    out = tmp_path / "again.json"
    assert main(["train", "--traces", str(pipeline / "sim" / "workloads"), "--out", str(out), "--epochs", "3",
                 "--hidden", "8", "--history", "8", "--split", "--seed", "1"]) == 0
    assert out.read_bytes() == (pipeline / "model.json").read_bytes()


def test_profiles_written(pipeline):
    names = sorted(p.name for p in (pipeline / "prof").iterdir())
    assert names == ["attack.kde", "benign.kde", "normal.kde"]


def test_detect_flags_an_attack_trace(pipeline):
    out = pipeline / "events.log"
    code = main(["detect", "--model", str(pipeline / "model.json"), "--profiles", str(pipeline / "prof"),
                 "--trace", str(pipeline / "sim" / "scenarios" / "database+l3pp.csv"),
                 "--continuation", str(pipeline / "sim" / "attacks" / "l3pp.csv"), "--out", str(out)])
    assert code == 0
    verdicts = [ln.split()[2] for ln in out.read_text().splitlines()]
    assert "Case2" in verdicts


def test_detect_rejects_mismatched_profiles(pipeline, tmp_path):
    det = build_detector(RedSet(np.zeros((4, 2))))
    for name in ("normal.kde", "attack.kde", "benign.kde"):
        save_detector(det, tmp_path / name)
    code = main(["detect", "--model", str(pipeline / "model.json"), "--profiles", str(tmp_path),
                 "--trace", str(pipeline / "sim" / "idle.csv"), "--out", str(tmp_path / "ev.log")])
    assert code == 3


def test_detect_rejects_bad_trace(pipeline, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_ms,a,b\n0,1,2\n")
    code = main(["detect", "--model", str(pipeline / "model.json"), "--profiles", str(pipeline / "prof"),
                 "--trace", str(bad), "--out", str(tmp_path / "ev.log")])
    assert code == 3


def test_corrupt_model_is_an_input_error(pipeline, tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    code = main(["detect", "--model", str(tmp_path / "m.json"), "--profiles", str(pipeline / "prof"),
                 "--trace", str(pipeline / "sim" / "idle.csv"), "--out", str(tmp_path / "ev.log")])
    assert code == 3


def test_select_features_on_traces(pipeline, tmp_path):
    out = tmp_path / "report.csv"
    assert main(["select-features", "--traces", str(pipeline / "sim" / "workloads"), "--universe", "13",
                 "--threshold", "0.01", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 13
    assert sum(float(r["eta_bar"]) for r in rows) == pytest.approx(1.0)


def test_select_features_on_published_fixture(tmp_path):
    from cloudshield.features import published_eta_bar

    table = tmp_path / "eta.csv"
    table.write_text("event,eta_bar\n" + "".join(f"{k},{v}\n" for k, v in published_eta_bar().items()))
    out = tmp_path / "report.csv"
    assert main(["select-features", "--eta-csv", str(table), "--out", str(out)]) == 0
    assert sum(int(r["selected"]) for r in csv.DictReader(out.open())) == 13


def test_constant_traces_are_a_numerical_failure(tmp_path):
    d = tmp_path / "flat"
    d.mkdir()
    (d / "w.csv").write_text("t_ms,a,b\n0,1,1\n10,1,1\n20,1,1\n")
    (tmp_path / "u.txt").write_text("a\nb\n")
    code = main(["select-features", "--traces", str(d), "--universe", str(tmp_path / "u.txt"),
                 "--out", str(tmp_path / "r.csv")])
    assert code == 4


def test_evaluate_writes_latency_table(tmp_path):
    code = main(["evaluate", "--out", str(tmp_path), "--w", "1,5,10,50,100", "--n-samples", "300",
                 "--epochs", "1", "--workloads", "database", "--benign", "gcc,bzip2",
                 "--attacks", "l1pp,l3pp", "--concurrent-benign", "gcc", "--seed", "5"])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "latency.csv").open()))
    got = [(float(r["no_anomaly_ms"]), float(r["attack_ms"])) for r in rows]
    expected = [(10.78, 32.38), (50.78, 112.38), (100.79, 212.41), (500.80, 1012.44), (1000.81, 2012.48)]
    assert got == pytest.approx(expected, abs=0.01)


def test_evaluate_unknown_preset(tmp_path):
    assert main(["evaluate", "--out", str(tmp_path), "--attacks", "nonesuch"]) == 2
