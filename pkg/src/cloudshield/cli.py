"""Command-line entry point.

Subcommands follow the offline/online/evaluation split:

    simulate         write synthetic traces from the presets
    select-features  rank counters by first-PC importance
    train            fit the next-sample predictor on workload traces
    profile          build the normal, attack and benign detectors
    detect           replay a trace and write the event log
    evaluate         run the desk-scale experiment and write CSV reports

Exit codes: 0 ok, 2 usage, 3 input format, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth
from .engine import DetectorSet, EngineConfig, run_offline, write_event_log
from .evaluation import (DEFAULT_WINDOWS, ExperimentConfig, ProgramProfile, build_experiment,
                         profile_step2, run_evaluation)
from .features import (ALL_EVENTS, DegenerateCovariance, EventUniverse, ImportanceReport,
                       load_feature_matrix, select_by_threshold, select_features)
from .predictor import TrainConfig, TrainingDiverged, load_model, save_model, train
from .red import (RedSet, build_detector, calibrate_normal_threshold, compute_red, load_detector,
                  save_detector)
from .trace import EVENTS, ScenarioLabel, TraceFormatError, load_trace, save_trace, split_trace

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4

PROFILE_FILES = {"normal": "normal.kde", "attack": "attack.kde", "benign": "benign.kde"}

log = logging.getLogger("cloudshield")


class UsageError(Exception):
    pass


class InputFormatError(Exception):
    pass


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"not a directory: {path}")
    return p


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load_model(path: str):
    p = _existing_file(path)
    try:
        return load_model(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputFormatError(f"{p}: {exc}") from None


def _csv_files(directory: Path) -> list[Path]:
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise UsageError(f"no .csv traces in {directory}")
    return files


def _load_dir(directory: Path, role: str):
    return [load_trace(p, ScenarioLabel(**{role: p.stem})) for p in _csv_files(directory)]


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("window sizes must be positive integers")
    return values


def _name_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    catalog = synth.load_catalog(_existing_file(args.catalog)) if args.catalog else synth.builtin_scenarios()
    out = Path(args.out)
    n, seed = args.n_samples, args.seed
    for sub in ("workloads", "benign", "attacks", "scenarios"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for name, spec in catalog.workloads.items():
        save_trace(synth.generate(spec, [], n, synth.scenario_seed(seed, "workload", name)),
                   out / "workloads" / f"{name}.csv")
    for kind, specs in (("benign", catalog.benign), ("attacks", catalog.attacks)):
        for name, spec in specs.items():
            save_trace(synth.generate(None, [spec], n, synth.scenario_seed(seed, "solo", name)),
                       out / kind / f"{name}.csv")
    save_trace(synth.generate(catalog.idle, [], n, synth.scenario_seed(seed, "solo", "idle")), out / "idle.csv")
    if args.scenarios != "none":
        combos = [(w, None, a) for w in catalog.workloads for a in catalog.attacks]
        if args.scenarios == "all":
            combos += [(w, b, None) for w in catalog.workloads for b in catalog.benign]
        for w, b, a in combos:
            perturbs = [catalog.benign[b]] if b else []
            perturbs += [catalog.attacks[a]] if a else []
            name = "+".join(x for x in (w, b, a) if x)
            trace = synth.generate(catalog.workloads[w], perturbs, n, synth.scenario_seed(seed, "scenario", name))
            save_trace(trace, out / "scenarios" / f"{name}.csv")
    if args.dump_catalog:
        synth.save_catalog(catalog, out / "catalog.ini")
    print(f"wrote synthetic traces to {out}")
    return EXIT_OK


# --- select-features ----------------------------------------------------------

def _universe(spec: str) -> EventUniverse:
    if spec == "34":
        return EventUniverse(ALL_EVENTS)
    if spec == "13":
        return EventUniverse(EVENTS)
    return EventUniverse.from_file(_existing_file(spec))


def _read_eta_csv(path: Path) -> tuple[tuple[str, ...], np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "event" not in reader.fieldnames or "eta_bar" not in reader.fieldnames:
            raise InputFormatError(f"{path}: need 'event' and 'eta_bar' columns")
        rows = [(r["event"], float(r["eta_bar"])) for r in reader]
    if not rows:
        raise InputFormatError(f"{path} has no rows")
    return tuple(r[0] for r in rows), np.array([r[1] for r in rows])


def cmd_select_features(args) -> int:
    if args.eta_csv:
        events, eta_bar = _read_eta_csv(_existing_file(args.eta_csv))
        selected = select_by_threshold(events, eta_bar, args.threshold)
        report = ImportanceReport(events, {}, eta_bar, args.threshold, selected)
    else:
        if not args.traces:
            raise UsageError("select-features needs --traces or --eta-csv")
        universe = _universe(args.universe)
        files = _csv_files(_existing_dir(args.traces))
        try:
            samples = {p.stem: load_feature_matrix(p, universe) for p in files}
        except ValueError as exc:
            raise InputFormatError(str(exc)) from None
        report = select_features(samples, universe, args.threshold, standardize=not args.raw)
    Path(args.out).write_text(report.to_csv())
    print(f"selected {len(report.selected)} events: {','.join(report.selected)}")
    return EXIT_OK


# --- train / profile -------------------------------------------------------------

def cmd_train(args) -> int:
    traces = _load_dir(_existing_dir(args.traces), "workload")
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                      history_len=args.history, hidden_dim=args.hidden, seed=args.seed, clip_norm=args.clip)
    parts = [split_trace(t)[0] for t in traces] if args.split else traces
    model = train(parts, cfg)
    save_model(model, args.out)
    print(f"trained on {len(traces)} traces; final loss {model.train_losses[-1]:.6g}; wrote {args.out}")
    return EXIT_OK


def _program_profiles(model, directory: Path, kind: str) -> dict[str, ProgramProfile]:
    out = {}
    role = "benign" if kind == "benign" else "attack"
    for trace in _load_dir(directory, role):
        name = trace.label.benign or trace.label.attack
        out[name] = ProgramProfile(name, kind, *(compute_red(model, p) for p in split_trace(trace)))
    return out


def cmd_profile(args) -> int:
    model = _load_model(args.model)
    workloads = _load_dir(_existing_dir(args.workloads), "workload")
    attack_dir, benign_dir = _existing_dir(args.attacks), _existing_dir(args.benign)
    empty = RedSet(np.zeros((0, model.input_dim)))
    train_red, val_red = empty, empty
    for tr in workloads:
        first, second, _ = split_trace(tr)
        train_red = train_red + compute_red(model, first)
        val_red = val_red + compute_red(model, second)
    normal = build_detector(train_red, "normal_workload")
    normal = normal.with_threshold(calibrate_normal_threshold(normal, val_red, args.coverage))
    programs = _program_profiles(model, attack_dir, "attack") | _program_profiles(model, benign_dir, "benign")
    attacks = [n for n, p in programs.items() if p.kind == "attack"]
    benign = [n for n, p in programs.items() if p.kind == "benign"]
    attack_det, benign_det = profile_step2(programs, attacks, benign)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for key, det in (("normal", normal), ("attack", attack_det), ("benign", benign_det)):
        save_detector(det, out / PROFILE_FILES[key])
        print(f"{key}: bandwidth {det.bandwidth:.6g}, threshold {det.threshold:.6g}")
    return EXIT_OK


# --- detect ---------------------------------------------------------------------

def _load_detectors(directory: Path) -> DetectorSet:
    dets = {}
    for key, fname in PROFILE_FILES.items():
        path = directory / fname
        if not path.is_file():
            raise UsageError(f"missing profile {path}")
        try:
            dets[key] = load_detector(path)
        except (ValueError, KeyError) as exc:
            raise InputFormatError(f"{path}: {exc}") from None
    return DetectorSet(**dets)


def cmd_detect(args) -> int:
    model = _load_model(args.model)
    detectors = _load_detectors(_existing_dir(args.profiles))
    try:
        detectors.check(model)
    except ValueError as exc:
        raise InputFormatError(str(exc)) from None
    trace = load_trace(_existing_file(args.trace), ScenarioLabel(workload=Path(args.trace).stem))
    cont = None
    if args.continuation:
        path = _existing_file(args.continuation)
        cont = load_trace(path, ScenarioLabel(benign=path.stem))
    cfg = EngineConfig(window=args.window, interval_ms=trace.interval_ms)
    try:
        events = run_offline(trace, model, detectors, cfg, continuation=cont)
    except ValueError as exc:
        raise InputFormatError(str(exc)) from None
    write_event_log(events, args.out)
    counts = {}
    for ev in events:
        if ev.stage == "step2":
            counts[ev.verdict] = counts.get(ev.verdict, 0) + 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no anomalies"
    print(f"{len(events)} events ({summary}); wrote {args.out}")
    return EXIT_OK


# --- evaluate -------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    catalog = synth.load_catalog(_existing_file(args.catalog)) if args.catalog else synth.builtin_scenarios()
    for flag, names, pool in (("--workloads", args.workloads, catalog.workloads),
                              ("--benign", args.benign, catalog.benign),
                              ("--concurrent-benign", args.concurrent_benign, catalog.benign),
                              ("--attacks", args.attacks, catalog.attacks)):
        unknown = [n for n in names or () if n not in pool]
        if unknown:
            raise UsageError(f"{flag}: unknown preset(s) {','.join(unknown)}")
    cfg = ExperimentConfig(
        n_samples=args.n_samples, seed=args.seed, windows=args.w,
        train=TrainConfig(epochs=args.epochs, seed=args.seed),
        workloads=args.workloads, benign=args.benign, attacks=args.attacks,
        concurrent_benign=args.concurrent_benign,
    )
    exp = build_experiment(cfg, catalog)
    report = run_evaluation(exp, window=args.window, windows=args.w, latency_windows=args.w)
    report.write(args.out)
    sys.stdout.write(report.summary_text())
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudshield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic traces from the presets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-samples", type=int, default=3000, help="samples per trace (default 3000)")
    p.add_argument("--seed", type=int, default=2024, help="base random seed")
    p.add_argument("--catalog", help="preset file to use instead of the built-in presets")
    p.add_argument("--scenarios", choices=("none", "attack", "all"), default="attack",
                   help="which mixed workload scenarios to write (default: workload+attack)")
    p.add_argument("--dump-catalog", action="store_true", help="also write the presets as catalog.ini")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-features", help="rank counters by first-PC importance")
    p.add_argument("--traces", help="directory of per-workload CSVs over the event universe")
    p.add_argument("--universe", default="34",
                   help="'34' (full list), '13' (monitored set) or a file with one event per line")
    p.add_argument("--threshold", type=float, default=0.01, help="keep events with mean importance >= this")
    p.add_argument("--eta-csv", help="rank a precomputed event,eta_bar table instead of traces")
    p.add_argument("--raw", action="store_true", help="skip per-column standardization")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("train", help="fit the next-sample predictor on workload traces")
    p.add_argument("--traces", required=True, help="directory of workload-only trace CSVs")
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05, help="initial learning rate")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--history", type=int, default=16, help="history length L")
    p.add_argument("--hidden", type=int, default=32, help="hidden units")
    p.add_argument("--clip", type=float, default=5.0, help="gradient clip norm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", action="store_true", help="train on the first third of each trace only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="build the three detector profiles")
    p.add_argument("--model", required=True)
    p.add_argument("--workloads", required=True, help="directory of workload-only traces")
    p.add_argument("--attacks", required=True, help="directory of standalone attack traces")
    p.add_argument("--benign", required=True, help="directory of standalone benign program traces")
    p.add_argument("--coverage", type=float, default=0.80, help="normal-detector quantile (default 0.80)")
    p.add_argument("--out", required=True, help="directory for normal.kde, attack.kde, benign.kde")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", help="replay a trace and write the event log")
    p.add_argument("--model", required=True)
    p.add_argument("--profiles", required=True, help="directory written by 'profile'")
    p.add_argument("--trace", required=True, help="monitored trace CSV")
    p.add_argument("--continuation", help="workload-free trace used for step 2 (default: the trace itself)")
    p.add_argument("--window", type=int, default=5, help="window size w")
    p.add_argument("--out", required=True, help="event log path")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="run the synthetic experiment and write reports")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--w", type=_int_list, default=DEFAULT_WINDOWS,
                   help="window sizes for the sweep and latency table, e.g. 1,5,10,50,100")
    p.add_argument("--window", type=int, default=5, help="window size for the per-scenario tables")
    p.add_argument("--n-samples", type=int, default=3000)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--catalog", help="preset file to use instead of the built-in presets")
    p.add_argument("--workloads", type=_name_list, help="comma-separated subset of workloads")
    p.add_argument("--benign", type=_name_list, help="comma-separated subset of benign programs")
    p.add_argument("--attacks", type=_name_list, help="comma-separated subset of attacks")
    p.add_argument("--concurrent-benign", type=_name_list, default=synth.CONCURRENT_BENIGN,
                   help="benign programs also run alongside every attack (default gpg-rsa,gcc,libquantum; "
                        "pass '' for none)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceFormatError, InputFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TrainingDiverged, DegenerateCovariance, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
