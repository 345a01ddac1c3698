"""Reconstruction errors, Gaussian KDE detectors and threshold calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .predictor import PredictorModel, make_windows, predict_normalized
from .trace import Trace

DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
KINDS = ("normal_workload", "known_attack", "benign_program")
PROFILE_FORMAT = "cloudshield-kde"
PROFILE_VERSION = 1

# kernel terms beyond this many bandwidths are below exp(-50) of the peak
TRUNCATION_RADIUS = 10.0


@dataclass(frozen=True, eq=False)
class RedSet:
    """Reconstruction-error vectors (rows) in normalised units."""

    samples: np.ndarray
    provenance: str = ""
    t_ms: np.ndarray | None = None

    def __post_init__(self):
        e = np.array(self.samples, dtype=np.float64)
        if e.ndim == 1:
            e = e.reshape(0, 0) if e.size == 0 else e[None, :]
        if e.ndim != 2:
            raise ValueError(f"RED samples must be 2-D, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("RED samples must be finite")
        e.flags.writeable = False
        object.__setattr__(self, "samples", e)

    def __len__(self):
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __add__(self, other: RedSet) -> RedSet:
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return RedSet(np.vstack([self.samples, other.samples]),
                      "+".join(p for p in (self.provenance, other.provenance) if p))


def compute_red(model: PredictorModel, trace: Trace) -> RedSet:
    """One error vector ``normalize(R[t]) - prediction`` per t in [L, N-1]."""
    L = model.history_len
    if len(trace) <= L:
        raise ValueError(f"trace has {len(trace)} samples; need more than history_len={L}")
    if trace.counts.shape[1] != model.input_dim:
        raise ValueError(f"trace has {trace.counts.shape[1]} events, model expects {model.input_dim}")
    X, Y = make_windows([trace.counts], model.mu, model.sigma, L)
    e = Y - predict_normalized(model, X)
    return RedSet(e, trace.label.tag(), trace.t_ms[L:])


def red_magnitude(red: RedSet | np.ndarray) -> np.ndarray:
    e = red.samples if isinstance(red, RedSet) else np.atleast_2d(np.asarray(red, dtype=float))
    return np.sqrt(np.sum(e * e, axis=1))


def scott_bandwidth(reference: np.ndarray) -> float:
    n, d = reference.shape
    spread = float(np.mean(reference.std(axis=0))) if n > 1 else 0.0
    if not spread > 0:
        spread = 1.0
    return n ** (-1.0 / (d + 4)) * spread


@dataclass(frozen=True, eq=False)
class KdeDetector:
    """Isotropic Gaussian KDE over a reference RED.

    Density is ``(1 / n) * sum_i N(x; x_i, b^2 I)``, the d-dimensional form of
    the ``1/(nb) sum K((x - x_i)/b)`` estimator. Queries are read-only;
    ``update_detector`` returns a new object.
    """

    reference: RedSet
    bandwidth: float
    threshold: float = math.inf
    kind: str = "normal_workload"
    truncated: bool = False
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.reference) == 0:
            raise ValueError("a detector needs at least one reference sample")
        if not self.bandwidth > 0 or not math.isfinite(self.bandwidth):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if math.isnan(self.threshold):
            raise ValueError("threshold must not be NaN")
        if self.truncated and self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(self.reference.samples))

    @property
    def dim(self) -> int:
        return self.reference.dim

    @property
    def n(self) -> int:
        return len(self.reference)

    def _log_norm(self) -> float:
        d, b = self.dim, self.bandwidth
        return -math.log(self.n) - d * math.log(b) - 0.5 * d * math.log(2 * math.pi)

    def log_density(self, x) -> np.ndarray:
        """Natural log of the density at each row of ``x`` (or a single vector)."""
        q, single = _queries(x, self.dim)
        if self.truncated:
            out = self._log_density_truncated(q)
        else:
            out = _exact_log_density(q, self.reference.samples, self.bandwidth) + self._log_norm()
        return out[0] if single else out

    def _log_density_truncated(self, q: np.ndarray) -> np.ndarray:
        ref = self.reference.samples
        b = self.bandwidth
        radius = TRUNCATION_RADIUS * b
        out = np.empty(len(q))
        fallback = []
        tail = math.log(self.n) - 0.5 * TRUNCATION_RADIUS ** 2
        for k, hits in enumerate(self._tree.query_ball_point(q, radius)):
            if not hits:
                fallback.append(k)
                continue
            diff = ref[hits] - q[k]
            lse = logsumexp(-0.5 * np.sum(diff * diff, axis=1) / (b * b))
            # dropped kernels are each below exp(-radius^2 / 2b^2); fall back to
            # the exact sum unless their total is provably negligible
            if tail - lse > math.log(1e-10):
                fallback.append(k)
                continue
            out[k] = lse
        if fallback:
            out[fallback] = _exact_log_density(q[fallback], ref, b)
        return out + self._log_norm()

    def density(self, x):
        return np.exp(self.log_density(x))

    def score(self, x):
        """Anomaly score ``-log f(x)`` with the density floored at 1e-300."""
        return -np.maximum(self.log_density(x), LOG_DENSITY_FLOOR)

    def accepts(self, x):
        """True where the sample is typical of the reference (score <= threshold)."""
        return self.score(x) <= self.threshold

    def with_threshold(self, threshold: float) -> KdeDetector:
        return replace(self, threshold=float(threshold))


def _queries(x, d: int):
    if isinstance(x, RedSet):
        x = x.samples
    q = np.asarray(x, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != d:
        raise ValueError(f"query dimension {q.shape[1]} does not match detector dimension {d}")
    return q, single


def _exact_log_density(q: np.ndarray, ref: np.ndarray, b: float, budget: int = 1 << 20) -> np.ndarray:
    """log of sum_i exp(-|q - x_i|^2 / 2b^2), computed from explicit differences."""
    n, d = ref.shape
    cols = np.ascontiguousarray(ref.T)
    chunk = max(1, budget // n)
    inv = -0.5 / (b * b)
    out = np.empty(len(q))
    for s in range(0, len(q), chunk):
        qc = q[s:s + chunk]
        sq = np.zeros((len(qc), n))
        tmp = np.empty_like(sq)
        # one event at a time keeps every temporary contiguous
        for k in range(d):
            np.subtract(qc[:, k, None], cols[k][None, :], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
            sq += tmp
        sq *= inv
        top = sq.max(axis=1, keepdims=True)
        np.exp(sq - top, out=sq)
        out[s:s + chunk] = np.log(sq.sum(axis=1)) + top[:, 0]
    return out


def build_detector(reference: RedSet, kind: str = "normal_workload", bandwidth: float | None = None,
                   threshold: float = math.inf, truncated: bool = False) -> KdeDetector:
    if len(reference) == 0:
        raise ValueError("a detector needs at least one reference sample")
    b = scott_bandwidth(reference.samples) if bandwidth is None else float(bandwidth)
    return KdeDetector(reference, b, threshold, kind, truncated)


def kde_density(detector: KdeDetector, x):
    return detector.density(x)


def anomaly_score(detector: KdeDetector, x):
    return detector.score(x)


def update_detector(detector: KdeDetector, new: RedSet) -> KdeDetector:
    """Append reference samples; bandwidth and threshold stay as they were."""
    if len(new) == 0:
        return detector
    if new.dim != detector.dim:
        raise ValueError(f"new samples have dimension {new.dim}, detector has {detector.dim}")
    return KdeDetector(detector.reference + new, detector.bandwidth, detector.threshold,
                       detector.kind, detector.truncated)


# --- thresholds ----------------------------------------------------------------

def _scores(detector: KdeDetector | None, data) -> np.ndarray:
    if detector is None:
        return np.asarray(data, dtype=float).ravel()
    return np.asarray(detector.score(data), dtype=float).ravel()


def calibrate_normal_threshold(detector: KdeDetector | None, validation, coverage: float = 0.80) -> float:
    """Linear-interpolated ``coverage`` quantile of validation anomaly scores.

    With ``detector=None`` the validation argument is taken as scores already.
    """
    if not 0 < coverage < 1:
        raise ValueError("coverage must lie strictly between 0 and 1")
    s = np.sort(_scores(detector, validation))
    if len(s) == 0:
        raise ValueError("validation set is empty")
    pos = coverage * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    if s[lo] == s[hi]:
        return float(s[lo])
    return float(s[lo] + frac * (s[hi] - s[lo]))


def eer_threshold_from_scores(pos_scores, neg_scores) -> float:
    """Threshold balancing false rejects of ``pos`` against false accepts of ``neg``.

    A sample is accepted when its score is <= the threshold. Candidates are
    midpoints of adjacent sorted pooled scores; the winner minimises
    |FPR - FNR|, then FPR, then the threshold itself. Rates are compared as
    exact integer cross-products so ties are resolved deterministically.
    """
    pos = np.sort(np.asarray(pos_scores, dtype=float))
    neg = np.sort(np.asarray(neg_scores, dtype=float))
    n_pos, n_neg = len(pos), len(neg)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both score sets must be non-empty")
    pooled = np.sort(np.concatenate([pos, neg]))
    cands = np.unique(0.5 * (pooled[:-1] + pooled[1:]))
    fp = np.searchsorted(neg, cands, side="right")            # negatives accepted
    fn = n_pos - np.searchsorted(pos, cands, side="right")    # positives rejected
    gap = np.abs(fp.astype(np.int64) * n_pos - fn.astype(np.int64) * n_neg)
    order = np.lexsort((cands, fp, gap))
    return float(cands[order[0]])


def calibrate_eer_threshold(detector: KdeDetector | None, positives, negatives) -> float:
    """EER threshold for ``detector`` given in-class ``positives`` and out-of-class ``negatives``."""
    return eer_threshold_from_scores(_scores(detector, positives), _scores(detector, negatives))


def error_rates(threshold: float, pos_scores, neg_scores) -> tuple[float, float]:
    """(FPR, FNR) of the accept-if-score<=threshold rule."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    return float(np.mean(neg <= threshold)), float(np.mean(pos > threshold))


# --- profile files ---------------------------------------------------------------

def dumps_detector(detector: KdeDetector) -> str:
    lines = [
        f"# {PROFILE_FORMAT} detector profile",
        f"version={PROFILE_VERSION}",
        f"kind={detector.kind}",
        f"bandwidth={detector.bandwidth!r}",
        f"threshold={detector.threshold!r}",
        f"d={detector.dim}",
        f"n={detector.n}",
        f"provenance={detector.reference.provenance}",
        "---",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in detector.reference.samples]
    return "\n".join(lines) + "\n"


def loads_detector(text: str) -> KdeDetector:
    header, sep, body = text.partition("\n---\n")
    if not sep:
        raise ValueError("detector profile has no '---' separator")
    meta = {}
    for line in header.splitlines():
        if line.startswith("#") or not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    if int(meta.get("version", -1)) != PROFILE_VERSION:
        raise ValueError(f"unsupported detector profile version {meta.get('version')!r}")
    d, n = int(meta["d"]), int(meta["n"])
    rows = [[float(v) for v in ln.split()] for ln in body.splitlines() if ln.strip()]
    ref = np.array(rows, dtype=float)
    if ref.shape != (n, d):
        raise ValueError(f"profile declares {n}x{d} samples but holds {ref.shape}")
    return KdeDetector(RedSet(ref, meta.get("provenance", "")), float(meta["bandwidth"]),
                       float(meta["threshold"]), meta["kind"])


def save_detector(detector: KdeDetector, path: str | Path) -> None:
    Path(path).write_text(dumps_detector(detector))


def load_detector(path: str | Path) -> KdeDetector:
    return loads_detector(Path(path).read_text())
