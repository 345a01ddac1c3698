"""Counter selection by first-principal-component importance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# The 34 candidate counters. The 13 kept by default reuse the names in
# ``trace.EVENTS``.
ALL_EVENTS: tuple[str, ...] = (
    "instruction",
    "load",
    "store",
    "l1d_read_miss",
    "l1d_write_miss",
    "l1d_prefetch_miss",
    "l1i_read_miss",
    "llc_read",
    "llc_read_miss",
    "llc_write",
    "llc_write_miss",
    "llc_prefetch",
    "llc_prefetch_miss",
    "dtlb_read",
    "dtlb_read_miss",
    "dtlb_write",
    "dtlb_write_miss",
    "itlb_read",
    "itlb_read_miss",
    "bpu_read",
    "bpu_read_miss",
    "node_read",
    "node_read_miss",
    "node_write",
    "node_write_miss",
    "node_prefetch",
    "node_prefetch_miss",
    "cycles",
    "branch",
    "branch_miss",
    "page_fault",
    "context_switch",
    "stall_issue",
    "stall_retire",
)

POWER_TOL = 1e-12
POWER_MAX_ITER = 10_000


class DegenerateCovariance(ValueError):
    pass


@dataclass(frozen=True)
class EventUniverse:
    events: tuple[str, ...] = ALL_EVENTS

    def __post_init__(self):
        events = tuple(self.events)
        if len(events) < 2:
            raise ValueError("an event universe needs at least 2 events")
        if len(set(events)) != len(events):
            raise ValueError("event names must be unique")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    @classmethod
    def from_file(cls, path: str | Path) -> EventUniverse:
        names = [ln.strip() for ln in Path(path).read_text().splitlines()]
        return cls(tuple(n for n in names if n and not n.startswith("#")))


def leading_eigenvector(cov: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> np.ndarray:
    """Power iteration on a covariance matrix.

    The start vector is drawn from a fixed-seed generator (an all-ones start
    is orthogonal to e.g. the axis of an anti-correlated pair). The result is
    sign-normalised so that its first non-negligible entry is positive, which
    keeps the output deterministic even when the top eigenvalue is degenerate.
    """
    d = cov.shape[0]
    v = np.abs(np.random.default_rng(0).standard_normal(d)) + 0.5
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        nxt = cov @ v
        norm = np.linalg.norm(nxt)
        if norm == 0:
            raise DegenerateCovariance("power iteration collapsed to the zero vector")
        nxt /= norm
        done = np.linalg.norm(nxt - v) < tol
        v = nxt
        if done:
            break
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if len(nz) and v[nz[0]] < 0:
        v = -v
    return v


def first_pc_importance(samples, standardize: bool = True) -> np.ndarray:
    """Per-column importance ``|w_i| / sum_j |w_j|`` of the first principal axis."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need an N x d matrix with N >= 2 and d >= 2, got shape {x.shape}")
    scale = np.max(np.abs(x), axis=0)
    x = x - x.mean(axis=0)
    std = x.std(axis=0)
    # constant columns leave rounding residue after centring
    live = std > 1e-12 * np.maximum(scale, 1e-300)
    if not np.any(live):
        raise DegenerateCovariance("every column is constant")
    eta = np.zeros(x.shape[1])
    xs = x[:, live]
    if standardize:
        xs = xs / std[live]
    cov = xs.T @ xs / (len(xs) - 1)
    w = np.abs(leading_eigenvector(cov))
    eta[live] = w / w.sum()
    return eta


@dataclass(frozen=True)
class ImportanceReport:
    events: tuple[str, ...]
    per_workload: dict[str, np.ndarray]
    eta_bar: np.ndarray
    threshold: float
    selected: tuple[str, ...]

    def to_csv(self) -> str:
        names = sorted(self.per_workload)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event"] + [f"eta_{n}" for n in names] + ["eta_bar", "selected"])
        chosen = set(self.selected)
        for i, event in enumerate(self.events):
            row = [event] + [repr(float(self.per_workload[n][i])) for n in names]
            w.writerow(row + [repr(float(self.eta_bar[i])), int(event in chosen)])
        return buf.getvalue()


def select_by_threshold(events, eta_bar, threshold: float) -> tuple[str, ...]:
    """Events with importance at or above ``threshold``, most important first."""
    eta_bar = np.asarray(eta_bar, dtype=float)
    # stable sort keeps universe order among ties
    order = np.argsort(-eta_bar, kind="stable")
    return tuple(events[i] for i in order if eta_bar[i] >= threshold)


def select_features(per_workload_samples: dict, universe: EventUniverse | None = None,
                    threshold: float = 0.01, standardize: bool = True) -> ImportanceReport:
    universe = universe or EventUniverse()
    if not per_workload_samples:
        raise ValueError("need at least one workload")
    per_workload = {}
    for name in sorted(per_workload_samples):
        m = np.asarray(per_workload_samples[name], dtype=float)
        if m.ndim != 2 or m.shape[1] != len(universe):
            raise ValueError(f"{name}: expected {len(universe)} columns, got shape {m.shape}")
        try:
            per_workload[name] = first_pc_importance(m, standardize=standardize)
        except DegenerateCovariance as exc:
            raise DegenerateCovariance(f"workload {name!r}: {exc}") from None
    eta_bar = np.mean([per_workload[n] for n in per_workload], axis=0)
    selected = select_by_threshold(universe.events, eta_bar, threshold)
    return ImportanceReport(universe.events, per_workload, eta_bar, threshold, selected)


def published_eta_bar() -> dict[str, float]:
    """Mean importances of the 13 counters reported for the five cloud benchmarks."""
    path = Path(__file__).with_name("data") / "published_eta.csv"
    out = {}
    with path.open() as fh:
        for row in csv.DictReader(fh):
            out[row["event"]] = float(row["eta_bar"])
    return out


def load_feature_matrix(path: str | Path, universe: EventUniverse) -> np.ndarray:
    """Read a CSV whose header is ``t_ms`` (optional) followed by the universe events."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if header and header[0] == "t_ms":
        header, skip = header[1:], 1
    else:
        skip = 0
    if tuple(header) != universe.events:
        raise ValueError(f"{path}: columns do not match the event universe")
    data = np.array([[float(v) for v in r[skip:]] for r in rows[1:] if r], dtype=float)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError(f"{path} has no samples")
    return data
