"""Online two-step detection: windowed anomaly flags, then attack/benign triage."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .predictor import PredictorModel, forward
from .red import KdeDetector
from .trace import BehaviorSample, Trace


class Mode(enum.Enum):
    MONITORING = "monitoring"
    PAUSED = "paused_for_step2"


class WrongMode(RuntimeError):
    pass


@dataclass(frozen=True)
class CaseRule:
    case: str
    meaning: str
    priority: str
    response: str


# (attack detector says yes, benign detector says yes) -> outcome
CASE_TABLE: dict[tuple[bool, bool], CaseRule] = {
    (True, True): CaseRule("Case1", "stealthy attack", "high", "alarm_high"),
    (True, False): CaseRule("Case2", "attack", "high", "alarm_high"),
    (False, True): CaseRule("Case3", "benign program", "none", "resume_workload"),
    (False, False): CaseRule("Case4", "zero-day attack or new benign program", "medium", "alarm_medium"),
}
ALARM_CASES = frozenset({"Case1", "Case2", "Case4"})


def classify_case(attack_vote: bool, benign_vote: bool) -> CaseRule:
    return CASE_TABLE[(bool(attack_vote), bool(benign_vote))]


def majority(flags) -> bool:
    """Strict majority; an even split counts as no."""
    flags = np.asarray(flags, dtype=bool)
    return int(flags.sum()) * 2 > len(flags)


@dataclass(frozen=True)
class EngineConfig:
    window: int = 5
    interval_ms: float = 10.0
    t_red_ms: float = 0.02
    t_kde1_ms: float = 0.76
    t_kde2_ms: float = 1.58
    # turnaround between pausing the workload and starting step-2 collection;
    # None means one sampling interval
    pause_gap_ms: float | None = None

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError("window must be an integer >= 1")
        if not self.interval_ms > 0:
            raise ValueError("interval_ms must be positive")
        for name in ("t_red_ms", "t_kde1_ms", "t_kde2_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def gap_ms(self) -> float:
        return self.interval_ms if self.pause_gap_ms is None else self.pause_gap_ms


# measured stage costs (t_RED, t_KDE step 1, t_KDE step 2) per window size
PUBLISHED_STAGE_COSTS = {
    1: (0.02, 0.76, 1.58),
    5: (0.02, 0.76, 1.58),
    10: (0.02, 0.77, 1.60),
    50: (0.02, 0.78, 1.62),
    100: (0.02, 0.79, 1.65),
}


def published_config(window: int) -> EngineConfig:
    t_red, k1, k2 = PUBLISHED_STAGE_COSTS[window]
    return EngineConfig(window=window, t_red_ms=t_red, t_kde1_ms=k1, t_kde2_ms=k2)


def latency_model(cfg: EngineConfig, attack_path: bool) -> float:
    """Time from attack start to verdict, in ms.

    Without an anomaly only step 1 runs. On the attack path the workload is
    paused, one turnaround gap passes, and step 2 collects its own window.
    """
    step1 = cfg.window * cfg.interval_ms + cfg.t_red_ms + cfg.t_kde1_ms
    if not attack_path:
        return step1
    return step1 + cfg.gap_ms + cfg.window * cfg.interval_ms + cfg.t_red_ms + cfg.t_kde2_ms


@dataclass(frozen=True)
class DetectionEvent:
    t_ms: float
    stage: str
    verdict: str
    priority: str = "none"
    response: str = "none"
    score_min: float = float("nan")
    score_max: float = float("nan")
    window_start_ms: float | None = field(default=None, compare=False)

    @property
    def is_alarm(self) -> bool:
        return self.stage == "step2" and self.verdict in ALARM_CASES

    def to_line(self) -> str:
        return (f"{self.t_ms!r} {self.stage} {self.verdict} {self.priority} {self.response} "
                f"{self.score_min!r} {self.score_max!r}")

    @classmethod
    def from_line(cls, line: str) -> DetectionEvent:
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"event line needs 7 fields, got {len(parts)}: {line!r}")
        return cls(float(parts[0]), parts[1], parts[2], parts[3], parts[4], float(parts[5]), float(parts[6]))


def write_event_log(events, path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for ev in events:
            fh.write(ev.to_line() + "\n")


def read_event_log(path: str | Path) -> list[DetectionEvent]:
    return [DetectionEvent.from_line(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


@dataclass(frozen=True)
class DetectorSet:
    normal: KdeDetector
    attack: KdeDetector
    benign: KdeDetector

    @property
    def dim(self) -> int:
        return self.normal.dim

    def check(self, model: PredictorModel) -> None:
        for det in (self.normal, self.attack, self.benign):
            if det.dim != model.input_dim:
                raise ValueError(
                    f"{det.kind} detector has dimension {det.dim}, model predicts {model.input_dim}"
                )


def step2_verdict(attack_scores, benign_scores, detectors: DetectorSet, t_ms: float,
                  window_start_ms: float | None = None) -> DetectionEvent:
    """Majority vote of each detector over the window, mapped through the case table."""
    attack_scores = np.asarray(attack_scores, dtype=float)
    benign_scores = np.asarray(benign_scores, dtype=float)
    rule = classify_case(majority(attack_scores <= detectors.attack.threshold),
                         majority(benign_scores <= detectors.benign.threshold))
    both = np.concatenate([attack_scores, benign_scores])
    return DetectionEvent(t_ms, "step2", rule.case, rule.priority, rule.response,
                          float(both.min()), float(both.max()), window_start_ms)


class DetectionEngine:
    """Single-writer state machine for one monitored core."""

    def __init__(self, model: PredictorModel, detectors: DetectorSet, cfg: EngineConfig | None = None):
        detectors.check(model)
        self.model = model
        self.detectors = detectors
        self.cfg = cfg or EngineConfig()
        self.mode = Mode.MONITORING
        self.history: deque[np.ndarray] = deque(maxlen=model.history_len)
        self.flags: deque[bool] = deque(maxlen=self.cfg.window)
        self.scores: deque[float] = deque(maxlen=self.cfg.window)
        self.times: deque[float] = deque(maxlen=self.cfg.window)
        self.in_run = False
        self.paused_at: float | None = None

    def _residual(self, history, sample: np.ndarray) -> np.ndarray:
        z_hist = self.model.normalize(np.asarray(history))[None]
        pred = forward(self.model.params(), z_hist)[0]
        return self.model.normalize(sample) - pred

    def step1_ingest(self, sample: BehaviorSample) -> DetectionEvent | None:
        if self.mode is not Mode.MONITORING:
            raise WrongMode("step1_ingest called while paused for step 2")
        counts = np.asarray(sample.counts, dtype=float)
        if counts.shape != (self.model.input_dim,):
            raise ValueError(f"sample has shape {counts.shape}, model expects ({self.model.input_dim},)")
        event = None
        if len(self.history) == self.model.history_len:
            e = self._residual(self.history, counts)
            score = float(self.detectors.normal.score(e))
            flag = score > self.detectors.normal.threshold
            self.flags.append(flag)
            self.scores.append(score)
            self.times.append(sample.t_ms)
            if not flag:
                self.in_run = False
            elif len(self.flags) == self.cfg.window and all(self.flags) and not self.in_run:
                self.in_run = True
                self.mode = Mode.PAUSED
                self.paused_at = sample.t_ms
                event = DetectionEvent(sample.t_ms, "step1", "anomaly", "none", "pause_workload",
                                       min(self.scores), max(self.scores), self.times[0])
        self.history.append(counts)
        return event

    def step2_classify(self, samples, history) -> DetectionEvent:
        """Classify ``window`` samples gathered while the workload is paused.

        ``history`` holds the ``history_len`` workload-free samples that
        precede them, so the predictor has context for the first residual.
        """
        if self.mode is not Mode.PAUSED:
            raise WrongMode("step2_classify needs a preceding anomaly event")
        samples = list(samples)
        if len(samples) != self.cfg.window:
            raise ValueError(f"step 2 needs exactly {self.cfg.window} samples, got {len(samples)}")
        history = [np.asarray(getattr(s, "counts", s), dtype=float) for s in history]
        if len(history) != self.model.history_len:
            raise ValueError(f"step 2 needs {self.model.history_len} history samples, got {len(history)}")
        seq = history + [np.asarray(s.counts, dtype=float) for s in samples]
        L = self.model.history_len
        z = self.model.normalize(np.asarray(seq))
        windows = np.stack([z[k:k + L] for k in range(len(samples))])
        errors = z[L:] - forward(self.model.params(), windows)
        event = step2_verdict(self.detectors.attack.score(errors), self.detectors.benign.score(errors),
                              self.detectors, samples[-1].t_ms, samples[0].t_ms)
        self.mode = Mode.MONITORING
        self.paused_at = None
        return event


def run_offline(trace: Trace, model: PredictorModel, detectors: DetectorSet,
                cfg: EngineConfig | None = None, continuation: Trace | None = None) -> list[DetectionEvent]:
    """Replay a recorded trace through a fresh engine.

    After each anomaly the step-2 window comes from ``continuation``, a
    recording of the same time span with the workload switched off; the
    samples right after the anomaly are used, with the preceding
    ``history_len`` continuation samples as context. Without a continuation
    the monitored trace itself is used.
    """
    cfg = cfg or EngineConfig()
    if trace.counts.shape[1] != model.input_dim:
        raise ValueError(f"trace has {trace.counts.shape[1]} events, model expects {model.input_dim}")
    cont = continuation if continuation is not None else trace
    if cont.counts.shape[1] != model.input_dim:
        raise ValueError("continuation schema does not match the model")
    L, w = model.history_len, cfg.window
    if len(cont) < L + w:
        raise ValueError(f"continuation needs at least {L + w} samples")
    engine = DetectionEngine(model, detectors, cfg)
    events = []
    cont_samples = cont.samples
    for i, sample in enumerate(trace.samples):
        ev = engine.step1_ingest(sample)
        if ev is None:
            continue
        events.append(ev)
        start = min(max(i + 1, L), len(cont) - w)
        events.append(engine.step2_classify(cont_samples[start:start + w], cont_samples[start - L:start]))
    return events
