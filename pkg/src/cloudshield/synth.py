"""Deterministic synthetic counter traces.

Every scenario is a predictable part (baseline plus sinusoids) and a small
Gaussian part. Benign programs and attacks are additive perturbations with
their own counter rates, extra noise and a run/sleep duty pattern. The preset
magnitudes are made up for desk-scale experiments; they are not measurements.
"""

from __future__ import annotations

import configparser
import io
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trace import DEFAULT_INTERVAL_MS, EVENTS, N_EVENTS, ScenarioLabel, Trace

ALWAYS_ON = (1, 0)


def _vec(values, name: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != N_EVENTS:
        raise ValueError(f"{name}: expected {N_EVENTS} values, got {len(out)}")
    if not all(np.isfinite(out)):
        raise ValueError(f"{name}: values must be finite")
    return out


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    baseline: tuple[float, ...]
    noise_scale: tuple[float, ...]
    # periodic[i] lists (amplitude, period_in_samples, phase) terms for event i
    periodic: tuple[tuple[tuple[float, float, float], ...], ...] = field(
        default_factory=lambda: ((),) * N_EVENTS
    )

    def __post_init__(self):
        object.__setattr__(self, "baseline", _vec(self.baseline, "baseline"))
        object.__setattr__(self, "noise_scale", _vec(self.noise_scale, "noise_scale"))
        periodic = tuple(tuple(tuple(float(x) for x in term) for term in terms) for terms in self.periodic)
        if len(periodic) != N_EVENTS:
            raise ValueError(f"periodic: expected {N_EVENTS} term lists")
        if min(self.baseline) < 0:
            raise ValueError(f"{self.name}: baseline must be >= 0")
        if min(self.noise_scale) <= 0:
            raise ValueError(f"{self.name}: noise_scale must be > 0")
        for terms in periodic:
            for amp, period, _phase in terms:
                if amp < 0 or period < 2:
                    raise ValueError(f"{self.name}: need amplitude >= 0 and period >= 2, got {amp}, {period}")
        object.__setattr__(self, "periodic", periodic)

    def deterministic(self, n_samples: int) -> np.ndarray:
        t = np.arange(n_samples, dtype=np.float64)
        out = np.tile(np.asarray(self.baseline), (n_samples, 1))
        for i, terms in enumerate(self.periodic):
            for amp, period, phase in terms:
                out[:, i] += amp * np.sin(2 * np.pi * t / period + phase)
        return out


@dataclass(frozen=True)
class PerturbSpec:
    name: str
    kind: str
    offset: tuple[float, ...]
    extra_noise: tuple[float, ...]
    duty: tuple[int, int] = ALWAYS_ON

    def __post_init__(self):
        if self.kind not in ("benign", "attack"):
            raise ValueError(f"{self.name}: kind must be 'benign' or 'attack'")
        object.__setattr__(self, "offset", _vec(self.offset, "offset"))
        object.__setattr__(self, "extra_noise", _vec(self.extra_noise, "extra_noise"))
        on, off = (int(v) for v in self.duty)
        if on < 1 or off < 0:
            raise ValueError(f"{self.name}: duty needs on >= 1 and off >= 0")
        object.__setattr__(self, "duty", (on, off))
        if min(self.extra_noise) < 0:
            raise ValueError(f"{self.name}: extra_noise must be >= 0")
        if not any(o != 0 for o in self.offset) and not any(s > 0 for s in self.extra_noise):
            raise ValueError(f"{self.name}: a perturbation needs a nonzero offset or extra noise")

    def active(self, n_samples: int) -> np.ndarray:
        on, off = self.duty
        return (np.arange(n_samples) % (on + off)) < on


def generate(workload: WorkloadSpec | None, perturbs, n_samples: int, seed: int,
             interval_ms: float = DEFAULT_INTERVAL_MS) -> Trace:
    perturbs = list(perturbs)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if workload is None and not perturbs:
        raise ValueError("need a workload or at least one perturbation")
    rng = np.random.default_rng(seed)
    x = np.zeros((n_samples, N_EVENTS))
    if workload is not None:
        x += workload.deterministic(n_samples)
        x += rng.standard_normal((n_samples, N_EVENTS)) * np.asarray(workload.noise_scale)
    for p in perturbs:
        mask = p.active(n_samples)[:, None]
        noise = rng.standard_normal((n_samples, N_EVENTS)) * np.asarray(p.extra_noise)
        x += mask * (np.asarray(p.offset) + noise)
    np.maximum(x, 0.0, out=x)
    benign = [p.name for p in perturbs if p.kind == "benign"]
    attack = [p.name for p in perturbs if p.kind == "attack"]
    label = ScenarioLabel(
        workload=workload.name if workload is not None else None,
        benign="+".join(benign) or None,
        attack="+".join(attack) or None,
    )
    t = np.arange(n_samples, dtype=np.float64) * interval_ms
    return Trace(t, x, label, source=f"synth:seed={seed}", interval_ms=interval_ms)


def attack_mask(perturbs, n_samples: int) -> np.ndarray:
    """Per-sample truth: True where at least one attack perturbation is running."""
    mask = np.zeros(n_samples, dtype=bool)
    for p in perturbs:
        if p.kind == "attack":
            mask |= p.active(n_samples)
    return mask


def scenario_seed(base_seed: int, *names: str) -> int:
    key = zlib.crc32("/".join(names).encode())
    return int(np.random.SeedSequence([base_seed, key]).generate_state(1)[0])


# --- presets ---------------------------------------------------------------

# primary/secondary periods (samples) and relative amplitudes per workload
_WORKLOADS = {
    "ml_training": ([9000, 2600, 3000, 10000, 2800, 2800, 1300, 1500, 1250, 1400, 160, 40, 6], (25, 60)),
    "database": ([6000, 3400, 3600, 9000, 2100, 2100, 900, 1300, 850, 1200, 260, 120, 14], (12, 40)),
    "stream_server": ([7000, 2200, 2500, 8500, 2300, 2300, 1100, 1100, 1000, 1000, 200, 60, 9], (20, 33)),
    "web_server": ([5000, 3000, 3300, 8000, 1800, 1800, 800, 1000, 750, 950, 220, 150, 20], (8, 30)),
    "mapreduce": ([8000, 3100, 2800, 9500, 2600, 2600, 1500, 1400, 1400, 1300, 300, 80, 10], (50, 16)),
}
_AMPLITUDES = (0.12, 0.05)
_WORKLOAD_NOISE = 0.02

_BENIGN = {
    "gpg-rsa": [4000, 700, 800, 4200, 1200, 1200, 500, 700, 480, 650, 40, 10, 1.5],
    "gcc": [3500, 1000, 1100, 4300, 1100, 1100, 600, 900, 570, 850, 90, 60, 2],
    "bzip2": [3800, 800, 900, 4000, 1300, 1300, 700, 650, 660, 600, 70, 8, 1.5],
    "h264ref": [4200, 650, 750, 4300, 1500, 1500, 450, 550, 430, 500, 50, 12, 1.5],
    "mcf": [1800, 1500, 1700, 4400, 900, 900, 300, 500, 280, 480, 200, 9, 1.5],
    "milc": [2600, 1200, 1300, 4100, 1200, 1200, 500, 350, 480, 330, 160, 8, 1.5],
    "namd": [4500, 600, 700, 4300, 1600, 1600, 400, 420, 380, 400, 30, 6, 1.5],
    "libquantum": [3000, 900, 1000, 3900, 800, 800, 250, 1000, 240, 950, 140, 6, 1.5],
    "soplex": [2800, 1100, 1200, 4200, 1100, 1100, 400, 700, 380, 650, 150, 15, 1.5],
    "hmmer": [4800, 500, 600, 4500, 1700, 1700, 800, 750, 760, 700, 35, 8, 1.5],
    "gobmk": [3200, 900, 1000, 4200, 1000, 1000, 550, 1100, 520, 1050, 60, 70, 2],
}
_BENIGN_NOISE = 0.03

# fr sits between the two prime-probe attacks and spectre_v4 next to
# spectre_v1; ff and spectre_v3 have footprints of their own
_ATTACKS = {
    "l1pp": [1500, 900, 1100, 3000, 1200, 1200, 100, 300, 90, 300, 900, 30, 2],
    "l3pp": [1700, 1300, 1500, 3200, 1400, 1400, 120, 320, 110, 320, 1100, 35, 2],
    "fr": [1600, 1100, 1300, 3100, 1300, 1300, 110, 310, 100, 310, 1000, 32, 2],
    "ff": [1400, 700, 900, 2500, 300, 300, 900, 280, 850, 280, 120, 30, 2],
    "spectre_v1": [2500, 800, 900, 3500, 900, 900, 200, 1400, 190, 1400, 500, 60, 3],
    "spectre_v2": [2300, 900, 1000, 3400, 700, 700, 180, 1700, 170, 1700, 420, 250, 3],
    "spectre_v3": [1200, 2500, 2600, 4500, 800, 800, 150, 400, 140, 400, 1500, 400, 60],
    "spectre_v4": [2450, 830, 930, 3480, 950, 950, 260, 1380, 250, 1380, 510, 65, 3],
    "buffer_overflow": [3000, 600, 700, 3300, 1100, 1100, 1100, 600, 1000, 650, 200, 300, 40],
}
_ATTACK_NOISE = 0.08
# run/sleep alternation (samples on, samples off); the rest run continuously
_ATTACK_DUTY = {"buffer_overflow": (450, 50)}

_IDLE = [300, 60, 70, 500, 80, 80, 40, 50, 38, 48, 6, 3, 1]

KNOWN_ATTACKS_ZERO_DAY = ("l1pp", "l3pp", "spectre_v1", "spectre_v2", "buffer_overflow")
CONCURRENT_BENIGN = ("gpg-rsa", "gcc", "libquantum")


def make_workload(name: str, baseline, periods, amplitudes=_AMPLITUDES,
                  noise=_WORKLOAD_NOISE) -> WorkloadSpec:
    baseline = np.asarray(baseline, dtype=float)
    periodic = []
    for i, b in enumerate(baseline):
        periodic.append(tuple((a * b, float(p), 0.3 * i) for a, p in zip(amplitudes, periods)))
    return WorkloadSpec(name, tuple(baseline), tuple(noise * baseline), tuple(periodic))


def make_perturb(name: str, kind: str, offset, noise: float, duty=ALWAYS_ON) -> PerturbSpec:
    offset = np.asarray(offset, dtype=float)
    return PerturbSpec(name, kind, tuple(offset), tuple(noise * offset), duty)


@dataclass(frozen=True)
class Catalog:
    workloads: dict[str, WorkloadSpec]
    benign: dict[str, PerturbSpec]
    attacks: dict[str, PerturbSpec]
    idle: WorkloadSpec

    def sizes(self) -> tuple[int, int, int]:
        return len(self.workloads), len(self.benign), len(self.attacks)

    def program(self, name: str) -> PerturbSpec:
        if name in self.benign:
            return self.benign[name]
        return self.attacks[name]


def builtin_scenarios() -> Catalog:
    workloads = {n: make_workload(n, b, p) for n, (b, p) in _WORKLOADS.items()}
    benign = {n: make_perturb(n, "benign", o, _BENIGN_NOISE) for n, o in _BENIGN.items()}
    attacks = {n: make_perturb(n, "attack", o, _ATTACK_NOISE, _ATTACK_DUTY.get(n, ALWAYS_ON))
               for n, o in _ATTACKS.items()}
    idle_base = np.asarray(_IDLE, dtype=float)
    idle = WorkloadSpec("idle", tuple(idle_base), tuple(0.03 * idle_base))
    return Catalog(workloads, benign, attacks, idle)


# --- plain-text preset files ------------------------------------------------

def _fmt(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def dumps_catalog(catalog: Catalog) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    specs = [("workload", w) for w in catalog.workloads.values()] + [("idle", catalog.idle)]
    for section, w in specs:
        key = f"{section} {w.name}"
        cp[key] = {"baseline": _fmt(w.baseline), "noise_scale": _fmt(w.noise_scale)}
        for event, terms in zip(EVENTS, w.periodic):
            if terms:
                cp[key][f"periodic.{event}"] = "; ".join(":".join(repr(x) for x in term) for term in terms)
    for p in list(catalog.benign.values()) + list(catalog.attacks.values()):
        cp[f"{p.kind} {p.name}"] = {
            "offset": _fmt(p.offset),
            "extra_noise": _fmt(p.extra_noise),
            "duty": f"{p.duty[0]}, {p.duty[1]}",
        }
    buf = io.StringIO()
    buf.write("# synthetic scenario presets (key=value sections)\n")
    cp.write(buf, space_around_delimiters=False)
    return buf.getvalue()


def loads_catalog(text: str) -> Catalog:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    workloads, benign, attacks, idle = {}, {}, {}, None
    for section in cp.sections():
        kind, _, name = section.partition(" ")
        body = cp[section]
        if kind in ("workload", "idle"):
            periodic = []
            for event in EVENTS:
                raw = body.get(f"periodic.{event}", "").strip()
                terms = []
                for chunk in filter(None, (c.strip() for c in raw.split(";"))):
                    amp, period, phase = (float(v) for v in chunk.split(":"))
                    terms.append((amp, period, phase))
                periodic.append(tuple(terms))
            spec = WorkloadSpec(name, _floats(body["baseline"]), _floats(body["noise_scale"]), tuple(periodic))
            if kind == "idle":
                idle = spec
            else:
                workloads[name] = spec
        elif kind in ("benign", "attack"):
            on, off = (int(v) for v in body.get("duty", "1, 0").split(","))
            spec = PerturbSpec(name, kind, _floats(body["offset"]), _floats(body["extra_noise"]), (on, off))
            (benign if kind == "benign" else attacks)[name] = spec
        else:
            raise ValueError(f"unknown preset section {section!r}")
    if idle is None:
        idle = builtin_scenarios().idle
    return Catalog(workloads, benign, attacks, idle)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).write_text(dumps_catalog(catalog))


def load_catalog(path: str | Path) -> Catalog:
    return loads_catalog(Path(path).read_text())
