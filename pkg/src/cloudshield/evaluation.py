"""Desk-scale reproduction of the detection experiments on synthetic presets.

An :class:`Experiment` trains the shared predictor on workload-only traces,
profiles the three detectors, and scores every scenario's test split once.
Window sweeps, rate tables and the zero-day holdout all reuse those scores.

Step 2 for a scenario reads the matching test split of the workload-free
recording of whatever else was running (the benign program, the attack, both,
or an idle core for workload-only scenarios).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .engine import (ALARM_CASES, DetectionEvent, DetectorSet, EngineConfig, PUBLISHED_STAGE_COSTS,
                     latency_model, step2_verdict)
from .predictor import PredictorModel, TrainConfig, train
from .red import (RedSet, build_detector, calibrate_eer_threshold, calibrate_normal_threshold,
                  compute_red)
from .trace import split_trace

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = (1, 5, 10, 50, 100, 200)
CASES = ("Case1", "Case2", "Case3", "Case4")


class UncoveredTimestamp(ValueError):
    pass


@dataclass(frozen=True)
class TruthInterval:
    """Half-open ``[start_ms, end_ms)`` span with a single ground-truth label."""

    start_ms: float
    end_ms: float
    attack: bool


def truth_from_mask(t_ms, mask, interval_ms: float) -> list[TruthInterval]:
    t_ms = np.asarray(t_ms, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    out = []
    start = 0
    for k in range(1, len(mask) + 1):
        if k == len(mask) or mask[k] != mask[start]:
            out.append(TruthInterval(float(t_ms[start]), float(t_ms[k - 1] + interval_ms), bool(mask[start])))
            start = k
    return out


@dataclass(frozen=True)
class Rates:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def fpr(self) -> float:
        return self.fp / self.negatives if self.negatives else float("nan")

    @property
    def fnr(self) -> float:
        return self.fn / self.positives if self.positives else float("nan")


def _window_is_attack(start: float, end: float, truth) -> bool:
    hit_any = False
    is_attack = False
    for iv in truth:
        if iv.start_ms <= end and start < iv.end_ms:
            hit_any = True
            is_attack |= iv.attack
    if not hit_any:
        raise UncoveredTimestamp(f"window [{start}, {end}] ms is not covered by the ground truth")
    return is_attack


def compute_rates(events, truth) -> Rates:
    """Confusion counts over window decisions.

    Each step-1 event is one window decision; an anomaly must be followed by
    its step-2 event. The window raises an alarm iff that step-2 verdict is
    Case 1, 2 or 4. A window counts as attack if any attack sample lies in it.
    """
    truth = list(truth)
    tp = fn = tn = fp = 0
    events = list(events)
    k = 0
    while k < len(events):
        ev = events[k]
        if ev.stage != "step1":
            raise ValueError(f"expected a step-1 event at position {k}, got {ev.stage}")
        alarm = False
        if ev.verdict == "anomaly":
            if k + 1 >= len(events) or events[k + 1].stage != "step2":
                raise ValueError(f"anomaly at t={ev.t_ms} has no step-2 event")
            alarm = events[k + 1].verdict in ALARM_CASES
            k += 1
        start = ev.window_start_ms if ev.window_start_ms is not None else ev.t_ms
        attack = _window_is_attack(start, ev.t_ms, truth)
        if attack:
            tp += alarm
            fn += not alarm
        else:
            fp += alarm
            tn += not alarm
        k += 1
    return Rates(tp, fn, tn, fp)


@dataclass(frozen=True)
class ExperimentConfig:
    n_samples: int = 3000
    seed: int = 2024
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    train: TrainConfig = field(default_factory=TrainConfig)
    coverage: float = 0.80
    workloads: tuple[str, ...] | None = None
    benign: tuple[str, ...] | None = None
    attacks: tuple[str, ...] | None = None
    concurrent_benign: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_samples < 3 * (self.train.history_len + 1):
            raise ValueError("n_samples too small for a three-way split with the history length")


@dataclass
class Scenario:
    name: str
    workload: str
    benign: str | None
    attack: str | None
    program: str
    t_ms: np.ndarray
    scores: np.ndarray
    attack_truth: np.ndarray
    interval_ms: float

    @property
    def has_attack(self) -> bool:
        return bool(self.attack_truth.any())

    @property
    def truth(self) -> list[TruthInterval]:
        return truth_from_mask(self.t_ms, self.attack_truth, self.interval_ms)


@dataclass
class ProgramProfile:
    """REDs of one workload-free recording, split into train/val/test."""

    name: str
    kind: str
    train: RedSet
    val: RedSet
    test: RedSet
    attack_scores: np.ndarray | None = None
    benign_scores: np.ndarray | None = None


@dataclass
class Experiment:
    cfg: ExperimentConfig
    catalog: synth.Catalog
    model: PredictorModel
    detectors: DetectorSet
    scenarios: list[Scenario]
    programs: dict[str, ProgramProfile]

    def events_for(self, scenario: Scenario, window: int, detectors: DetectorSet | None = None):
        return scenario_events(scenario, self.programs[scenario.program], detectors or self.detectors, window)


def _programs_for(cfg: ExperimentConfig, catalog: synth.Catalog):
    workloads = cfg.workloads or tuple(catalog.workloads)
    benign = cfg.benign or tuple(catalog.benign)
    attacks = cfg.attacks or tuple(catalog.attacks)
    return workloads, benign, attacks


def profile_program(model: PredictorModel, name: str, perturbs, catalog: synth.Catalog,
                    cfg: ExperimentConfig, kind: str) -> ProgramProfile:
    if name == "idle":
        trace = synth.generate(catalog.idle, [], cfg.n_samples, synth.scenario_seed(cfg.seed, "solo", name))
    else:
        trace = synth.generate(None, perturbs, cfg.n_samples, synth.scenario_seed(cfg.seed, "solo", name))
    parts = [compute_red(model, p) for p in split_trace(trace)]
    return ProgramProfile(name, kind, *parts)


def build_experiment(cfg: ExperimentConfig | None = None, catalog: synth.Catalog | None = None) -> Experiment:
    cfg = cfg or ExperimentConfig()
    catalog = catalog or synth.builtin_scenarios()
    workloads, benign, attacks = _programs_for(cfg, catalog)
    n = cfg.n_samples

    normal_splits = {}
    for w in workloads:
        tr = synth.generate(catalog.workloads[w], [], n, synth.scenario_seed(cfg.seed, "workload", w))
        normal_splits[w] = split_trace(tr)
    log.info("training predictor on %d workloads", len(workloads))
    model = train([normal_splits[w][0] for w in workloads], cfg.train)

    red_n_train = sum((compute_red(model, normal_splits[w][0]) for w in workloads), RedSet(np.zeros((0, 13))))
    red_n_val = sum((compute_red(model, normal_splits[w][1]) for w in workloads), RedSet(np.zeros((0, 13))))
    normal = build_detector(red_n_train, "normal_workload")
    normal = normal.with_threshold(calibrate_normal_threshold(normal, red_n_val, cfg.coverage))

    programs: dict[str, ProgramProfile] = {}
    for b in benign:
        programs[b] = profile_program(model, b, [catalog.benign[b]], catalog, cfg, "benign")
    for a in attacks:
        programs[a] = profile_program(model, a, [catalog.attacks[a]], catalog, cfg, "attack")
    programs["idle"] = profile_program(model, "idle", [], catalog, cfg, "idle")
    for b in cfg.concurrent_benign:
        for a in attacks:
            key = f"{b}+{a}"
            programs[key] = profile_program(model, key, [catalog.benign[b], catalog.attacks[a]],
                                            catalog, cfg, "concurrent")

    attack_det, benign_det = profile_step2(programs, attacks, benign)
    detectors = DetectorSet(normal, attack_det, benign_det)
    score_programs(programs, detectors)

    scenarios = []
    combos = [(w, None, None) for w in workloads]
    combos += [(w, b, None) for w in workloads for b in benign]
    combos += [(w, None, a) for w in workloads for a in attacks]
    combos += [(w, b, a) for w in workloads for b in cfg.concurrent_benign for a in attacks]
    for w, b, a in combos:
        scenarios.append(make_scenario(model, normal, catalog, cfg, w, b, a, normal_splits))
    return Experiment(cfg, catalog, model, detectors, scenarios, programs)


def profile_step2(programs, attacks, benign, attack_bandwidth: float | None = None):
    """Attack and benign detectors, each EER-calibrated against the pooled other class."""
    empty = RedSet(np.zeros((0, 13)))
    a_train = sum((programs[a].train for a in attacks), empty)
    b_train = sum((programs[b].train for b in benign), empty)
    a_val = sum((programs[a].val for a in attacks), empty)
    b_val = sum((programs[b].val for b in benign), empty)
    attack_det = build_detector(a_train, "known_attack", bandwidth=attack_bandwidth)
    benign_det = build_detector(b_train, "benign_program")
    attack_det = attack_det.with_threshold(calibrate_eer_threshold(attack_det, a_val, b_val))
    benign_det = benign_det.with_threshold(calibrate_eer_threshold(benign_det, b_val, a_val))
    return attack_det, benign_det


def score_programs(programs, detectors: DetectorSet) -> None:
    for prof in programs.values():
        prof.attack_scores = detectors.attack.score(prof.test)
        prof.benign_scores = detectors.benign.score(prof.test)


def make_scenario(model, normal, catalog, cfg, workload, benign, attack, normal_splits=None) -> Scenario:
    perturbs = []
    if benign is not None:
        perturbs.append(catalog.benign[benign])
    if attack is not None:
        perturbs.append(catalog.attacks[attack])
    name = "+".join(x for x in (workload, benign, attack) if x)
    if not perturbs and normal_splits is not None:
        trace_splits = normal_splits[workload]
        full_mask = np.zeros(cfg.n_samples, dtype=bool)
    else:
        trace = synth.generate(catalog.workloads[workload], perturbs, cfg.n_samples,
                               synth.scenario_seed(cfg.seed, "scenario", name))
        trace_splits = split_trace(trace)
        full_mask = synth.attack_mask(perturbs, cfg.n_samples)
    test = trace_splits[2]
    red = compute_red(model, test)
    offset = cfg.n_samples - len(test) + model.history_len
    program = "+".join(x for x in (benign, attack) if x) or "idle"
    return Scenario(name, workload, benign, attack, program, red.t_ms, normal.score(red),
                    full_mask[offset:], test.interval_ms)


def scenario_events(scenario: Scenario, program: ProgramProfile, detectors: DetectorSet,
                    window: int) -> list[DetectionEvent]:
    """Window decisions over non-overlapping blocks of ``window`` test samples."""
    n = min(len(scenario.scores), len(program.attack_scores)) // window
    theta = detectors.normal.threshold
    events = []
    for k in range(n):
        sl = slice(k * window, (k + 1) * window)
        s = scenario.scores[sl]
        t0, t1 = float(scenario.t_ms[sl.start]), float(scenario.t_ms[sl.stop - 1])
        if np.all(s > theta):
            events.append(DetectionEvent(t1, "step1", "anomaly", "none", "pause_workload",
                                         float(s.min()), float(s.max()), t0))
            cont_t = t1 + window * scenario.interval_ms
            events.append(step2_verdict(program.attack_scores[sl], program.benign_scores[sl],
                                        detectors, cont_t, t1 + scenario.interval_ms))
        else:
            events.append(DetectionEvent(t1, "step1", "normal", "none", "none",
                                         float(s.min()), float(s.max()), t0))
    return events


# --- reports -------------------------------------------------------------------

@dataclass
class ScenarioResult:
    scenario: str
    workload: str
    benign: str | None
    attack: str | None
    window: int
    rates: Rates
    step1_anomalies: int
    cases: dict[str, int]


def evaluate_window(exp: Experiment, window: int, detectors: DetectorSet | None = None) -> list[ScenarioResult]:
    out = []
    for scn in exp.scenarios:
        events = exp.events_for(scn, window, detectors)
        cases = {c: 0 for c in CASES}
        anomalies = 0
        for ev in events:
            if ev.stage == "step2":
                cases[ev.verdict] += 1
            elif ev.verdict == "anomaly":
                anomalies += 1
        out.append(ScenarioResult(scn.name, scn.workload, scn.benign, scn.attack, window,
                                  compute_rates(events, scn.truth), anomalies, cases))
    return out


def _mean(values) -> float:
    vals = [v for v in values if v == v]
    return float(np.mean(vals)) if vals else float("nan")


def summarize(results: list[ScenarioResult]) -> dict[str, float]:
    """Unweighted means over scenarios: FPR over attack-free, FNR over attack ones."""
    clean = [r for r in results if r.attack is None]
    attacked = [r for r in results if r.attack is not None]
    benign = [r for r in clean if r.benign is not None]
    false_alarms = sum(r.step1_anomalies for r in benign)
    resolved = sum(r.cases["Case3"] for r in benign)
    return {
        "fpr": _mean(r.rates.fpr for r in clean),
        "fnr": _mean(r.rates.fnr for r in attacked),
        "benign_step1_false_alarms": false_alarms,
        "benign_resolved_case3": resolved,
        "false_alarm_reduction": resolved / false_alarms if false_alarms else float("nan"),
    }


def window_sweep(exp: Experiment, windows=DEFAULT_WINDOWS) -> list[dict]:
    """Per-workload and overall FPR/FNR for each window size."""
    rows = []
    for w in windows:
        results = evaluate_window(exp, w)
        for workload in sorted({r.workload for r in results}):
            sub = [r for r in results if r.workload == workload]
            s = summarize(sub)
            rows.append({"window": w, "workload": workload, "fpr": s["fpr"], "fnr": s["fnr"]})
        s = summarize(results)
        rows.append({"window": w, "workload": "ALL", "fpr": s["fpr"], "fnr": s["fnr"],
                     "false_alarm_reduction": s["false_alarm_reduction"]})
    return rows


def case_distribution(exp: Experiment, window: int = 5) -> list[dict]:
    """Step-2 verdict shares per program, over its workload-free test windows."""
    rows = []
    for name in sorted(exp.programs):
        prof = exp.programs[name]
        if prof.kind == "idle":
            continue
        rows.append({"program": name, "kind": prof.kind,
                     **_case_shares(prof.attack_scores, prof.benign_scores, exp.detectors, window)})
    return rows


def _case_shares(attack_scores, benign_scores, detectors: DetectorSet, window: int) -> dict[str, float]:
    n = len(attack_scores) // window
    counts = {c: 0 for c in CASES}
    for k in range(n):
        sl = slice(k * window, (k + 1) * window)
        counts[step2_verdict(attack_scores[sl], benign_scores[sl], detectors, 0.0).verdict] += 1
    return {c: counts[c] / n if n else float("nan") for c in CASES} | {"windows": n}


def zero_day_holdout(exp: Experiment, known, held_out, window: int = 5) -> list[dict]:
    """Case shares for attacks missing from the attack reference set.

    ``held_out`` entries are attack names or :class:`synth.PerturbSpec` objects
    (for attacks outside the preset catalogue). Only ``known`` attacks feed the
    attack detector and the EER calibration of both step-2 detectors.
    """
    known = tuple(known)
    if not known:
        raise ValueError("the known-attack set must not be empty")
    specs = [h if isinstance(h, synth.PerturbSpec) else exp.catalog.attacks[h] for h in held_out]
    names = [s.name for s in specs]
    overlap = set(names) & set(known)
    if overlap:
        raise ValueError(f"held-out attacks also listed as known: {sorted(overlap)}")
    if not specs:
        return []
    benign = [p.name for p in exp.programs.values() if p.kind == "benign"]
    attack_det, benign_det = profile_step2(exp.programs, known, benign)
    dets = DetectorSet(exp.detectors.normal, attack_det, benign_det)
    rows = []
    for spec in specs:
        prof = exp.programs.get(spec.name)
        if prof is None or exp.catalog.attacks.get(spec.name) != spec:
            prof = profile_program(exp.model, spec.name, [spec], exp.catalog, exp.cfg, "attack")
        shares = _case_shares(attack_det.score(prof.test), benign_det.score(prof.test), dets, window)
        rows.append({"attack": spec.name, "status": "zero-day", **shares})
    for name in known:
        prof = exp.programs[name]
        shares = _case_shares(attack_det.score(prof.test), benign_det.score(prof.test), dets, window)
        rows.append({"attack": name, "status": "known", **shares})
    return rows


def latency_table(windows=(1, 5, 10, 50, 100), measured: tuple[float, float, float] | None = None) -> list[dict]:
    """Latency-model totals; stage costs come from the published measurements
    where available, otherwise from ``measured``."""
    rows = []
    for w in windows:
        if w in PUBLISHED_STAGE_COSTS:
            costs, source = PUBLISHED_STAGE_COSTS[w], "published"
        elif measured is not None:
            costs, source = measured, "measured"
        else:
            continue
        cfg = EngineConfig(window=w, t_red_ms=costs[0], t_kde1_ms=costs[1], t_kde2_ms=costs[2])
        rows.append({"window": w, "t_b_ms": w * cfg.interval_ms, "t_red_ms": costs[0],
                     "t_kde1_ms": costs[1], "t_kde2_ms": costs[2],
                     "no_anomaly_ms": round(latency_model(cfg, False), 6),
                     "attack_ms": round(latency_model(cfg, True), 6), "cost_source": source})
    return rows


@dataclass
class EvalReport:
    seed: int
    scenario_rows: list[dict]
    sweep: list[dict]
    cases: list[dict]
    zero_day: list[dict]
    latency: list[dict]
    summary: dict[str, float]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in (("scenarios", self.scenario_rows), ("window_sweep", self.sweep),
                           ("step2_cases", self.cases), ("zero_day", self.zero_day),
                           ("latency", self.latency)):
            (out / f"{name}.csv").write_text(rows_to_csv(rows))
        (out / "summary.txt").write_text(self.summary_text())

    def summary_text(self) -> str:
        lines = [f"experiment seed: {self.seed}",
                 "FPR/FNR are unweighted means over scenarios (FPR: attack-free, FNR: with attack)."]
        for k, v in self.summary.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    return buf.getvalue()


def run_evaluation(exp: Experiment, window: int = 5, windows=DEFAULT_WINDOWS,
                   latency_windows=(1, 5, 10, 50, 100),
                   known=synth.KNOWN_ATTACKS_ZERO_DAY) -> EvalReport:
    results = evaluate_window(exp, window)
    rows = []
    for r in results:
        rows.append({"scenario": r.scenario, "workload": r.workload, "benign": r.benign, "attack": r.attack,
                     "window": r.window, "tp": r.rates.tp, "fn": r.rates.fn, "tn": r.rates.tn,
                     "fp": r.rates.fp, "fpr": r.rates.fpr, "fnr": r.rates.fnr,
                     "step1_anomalies": r.step1_anomalies, **r.cases})
    attacks = [p.name for p in exp.programs.values() if p.kind == "attack"]
    known = tuple(a for a in known if a in attacks)
    held = [a for a in attacks if a not in known]
    zero_day = zero_day_holdout(exp, known, held, window) if known else []
    summary = summarize(results) | {"window": window}
    return EvalReport(exp.cfg.seed, rows, window_sweep(exp, windows), case_distribution(exp, window),
                      zero_day, latency_table(latency_windows), summary)
