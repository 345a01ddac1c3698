"""Behavior traces: counter schema, CSV ingestion, splitting and program manifests."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EVENTS: tuple[str, ...] = (
    "instruction",
    "stall_issue",
    "stall_retire",
    "cycles",
    "load",
    "dtlb_read",
    "store",
    "bpu_read",
    "dtlb_write",
    "branch",
    "l1d_read_miss",
    "l1i_read_miss",
    "context_switch",
)
N_EVENTS = len(EVENTS)
EVENT_INDEX = {name: i for i, name in enumerate(EVENTS)}
CSV_HEADER = ("t_ms",) + EVENTS
DEFAULT_INTERVAL_MS = 10.0

# relative slack when checking that timestamps sit on the sampling grid
_INTERVAL_RTOL = 1e-6


class TraceFormatError(ValueError):
    """Raised for any malformed trace or manifest input.

    ``kind`` is a short machine-readable tag such as ``schema-mismatch``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class ScenarioLabel:
    workload: str | None = None
    benign: str | None = None
    attack: str | None = None

    def __post_init__(self):
        if self.workload is None and self.benign is None and self.attack is None:
            raise ValueError("scenario label needs at least one of workload/benign/attack")

    @property
    def has_attack(self) -> bool:
        return self.attack is not None

    def tag(self) -> str:
        parts = []
        for key in ("workload", "benign", "attack"):
            value = getattr(self, key)
            if value is not None:
                parts.append(f"{key}={value}")
        return ",".join(parts)


@dataclass(frozen=True)
class BehaviorSample:
    t_ms: float
    counts: np.ndarray


@dataclass(frozen=True, eq=False)
class Trace:
    """An immutable, uniformly sampled sequence of 13-counter readings.

    ``counts`` is an ``(N, 13)`` float array in canonical event order and
    ``t_ms`` the matching ``(N,)`` timestamps.
    """

    t_ms: np.ndarray
    counts: np.ndarray
    label: ScenarioLabel
    source: str = ""
    interval_ms: float = field(default=DEFAULT_INTERVAL_MS)

    def __post_init__(self):
        t = np.array(self.t_ms, dtype=np.float64)
        c = np.array(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != N_EVENTS:
            raise TraceFormatError("schema-mismatch", f"expected (N, {N_EVENTS}) counts, got {c.shape}")
        if len(c) == 0:
            raise TraceFormatError("empty", "trace has no samples")
        if t.shape != (len(c),):
            raise TraceFormatError("schema-mismatch", "timestamp count does not match sample count")
        if not np.all(np.isfinite(c)):
            raise TraceFormatError("non-finite-count", "counts must be finite")
        if np.any(c < 0):
            raise TraceFormatError("negative-count", "counts must be non-negative")
        if not np.all(np.isfinite(t)):
            raise TraceFormatError("non-monotone-timestamp", "timestamps must be finite")
        if not self.interval_ms > 0:
            raise TraceFormatError("bad-interval", f"sampling interval must be positive, got {self.interval_ms}")
        _check_grid(t, self.interval_ms)
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "counts", c)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def samples(self) -> list[BehaviorSample]:
        return [BehaviorSample(float(t), row) for t, row in zip(self.t_ms, self.counts)]

    def slice(self, start: int, stop: int) -> Trace:
        return Trace(self.t_ms[start:stop], self.counts[start:stop], self.label,
                     self.source, self.interval_ms)


def _check_grid(t: np.ndarray, interval: float) -> None:
    if len(t) < 2:
        return
    steps = np.diff(t)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise TraceFormatError("non-monotone-timestamp", f"row {bad + 1} does not advance time")
    tol = _INTERVAL_RTOL * interval
    off = np.abs(steps - interval) > tol
    if np.any(off):
        bad = int(np.argmax(off)) + 1
        raise TraceFormatError(
            "interval-mismatch",
            f"row {bad + 1} steps {steps[bad - 1]!r} ms, expected {interval!r} ms",
        )


def load_trace(path: str | Path, label: ScenarioLabel) -> Trace:
    """Read a trace CSV; the sampling interval comes from the first two rows."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise TraceFormatError("empty", f"{path} is empty")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != CSV_HEADER:
        raise TraceFormatError(
            "schema-mismatch",
            f"{path}: header has {len(header)} columns, expected {','.join(CSV_HEADER)}",
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(CSV_HEADER):
            raise TraceFormatError(
                "schema-mismatch", f"{path}:{lineno}: {len(cells)} columns, expected {len(CSV_HEADER)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise TraceFormatError("parse-error", f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise TraceFormatError("empty", f"{path} has a header but no samples")
    data = np.array(rows, dtype=np.float64)
    t = data[:, 0]
    interval = float(t[1] - t[0]) if len(t) > 1 else DEFAULT_INTERVAL_MS
    if len(t) > 1 and interval <= 0:
        raise TraceFormatError("non-monotone-timestamp", f"{path}: row 3 does not advance time")
    return Trace(t, data[:, 1:], label, source=str(path), interval_ms=interval)


def save_trace(trace: Trace, path: str | Path) -> None:
    # repr() gives the shortest string that round-trips a float exactly
    out = [",".join(CSV_HEADER)]
    for t, row in zip(trace.t_ms, trace.counts):
        out.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(out) + "\n")


def split_trace(trace: Trace, fractions=(1 / 3, 1 / 3, 1 / 3)) -> tuple[Trace, Trace, Trace]:
    """Contiguous train/validation/test split.

    Boundaries are the rounded cumulative fractions, so each part is within
    one sample of ``fraction * N``.
    """
    if len(fractions) != 3 or any(not f > 0 for f in fractions):
        raise ValueError(f"need three positive fractions, got {fractions!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    n = len(trace)
    a = math.floor(fractions[0] * n + 0.5)
    b = math.floor((fractions[0] + fractions[1]) * n + 0.5)
    if a < 1 or b - a < 1 or n - b < 1:
        raise TraceFormatError("too-short", f"{n} samples cannot be split into three non-empty parts")
    return trace.slice(0, a), trace.slice(a, b), trace.slice(b, n)


# --- program manifests ----------------------------------------------------

ROLES = ("workload", "benign", "attack")


class Verdict(enum.Enum):
    PASS = "pass"
    DIGEST_MISMATCH = "digest-mismatch"
    UNKNOWN_PROGRAM = "unknown-program"


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    role: str
    digest: str


@dataclass(frozen=True)
class ProgramManifest:
    entries: tuple[ManifestEntry, ...]
    algorithm: str = "sha256"

    def __post_init__(self):
        try:
            size = hashlib.new(self.algorithm).digest_size
        except ValueError:
            raise TraceFormatError("bad-manifest", f"unknown digest algorithm {self.algorithm!r}") from None
        seen = set()
        for e in self.entries:
            if e.name in seen:
                raise TraceFormatError("bad-manifest", f"duplicate program {e.name!r}")
            seen.add(e.name)
            if e.role not in ROLES:
                raise TraceFormatError("bad-manifest", f"{e.name}: role {e.role!r} not in {ROLES}")
            if len(e.digest) != 2 * size or any(ch not in "0123456789abcdef" for ch in e.digest):
                raise TraceFormatError("bad-manifest", f"{e.name}: digest is not {2 * size} lowercase hex chars")

    def lookup(self, name: str) -> ManifestEntry | None:
        for e in self.entries:
            if e.name == name:
                return e
        return None

    def dumps(self) -> str:
        lines = [f"digest={self.algorithm}"]
        lines += [f"{e.name}\t{e.role}\t{e.digest}" for e in self.entries]
        return "\n".join(lines) + "\n"


def digest_bytes(data: bytes, algorithm: str = "sha256") -> str:
    return hashlib.new(algorithm, data).hexdigest()


def parse_manifest(text: str) -> ProgramManifest:
    algorithm = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if algorithm is None:
            if not line.startswith("digest="):
                raise TraceFormatError("bad-manifest", f"line {lineno}: expected 'digest=<algorithm>' first")
            algorithm = line[len("digest="):].strip()
            continue
        parts = raw.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise TraceFormatError("bad-manifest", f"line {lineno}: expected name<TAB>role<TAB>digest")
        entries.append(ManifestEntry(parts[0].strip(), parts[1].strip(), parts[2].strip()))
    if algorithm is None:
        raise TraceFormatError("bad-manifest", "missing 'digest=<algorithm>' line")
    return ProgramManifest(tuple(entries), algorithm)


def load_manifest(path: str | Path) -> ProgramManifest:
    return parse_manifest(Path(path).read_text())


def verify_manifest(program_bytes: bytes, name: str, manifest: ProgramManifest) -> Verdict:
    entry = manifest.lookup(name)
    if entry is None:
        return Verdict.UNKNOWN_PROGRAM
    if digest_bytes(program_bytes, manifest.algorithm) != entry.digest:
        return Verdict.DIGEST_MISMATCH
    return Verdict.PASS
