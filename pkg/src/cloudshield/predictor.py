"""Single-cell LSTM next-sample predictor, trained with minibatch SGD.

Inputs and targets are z-scored per event with statistics from the
training traces; the model works entirely in those normalised units and
``predict_next`` maps back to raw counter values.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .trace import N_EVENTS, Trace

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
MODEL_FORMAT = "cloudshield-lstm"
MODEL_VERSION = 1
PARAM_NAMES = ("W", "b", "W_out", "b_out")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became {loss!r} in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    decay_every: int = 10
    epochs: int = 30
    batch_size: int = 32
    history_len: int = 16
    hidden_dim: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    forget_bias: float = 1.0

    def __post_init__(self):
        for name in ("learning_rate", "lr_decay", "decay_every", "epochs", "batch_size",
                     "history_len", "hidden_dim", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.seed < 0:
            raise ValueError("TrainConfig.seed must be non-negative")


@dataclass(eq=False)
class PredictorModel:
    """LSTM weights plus the normalisation statistics they were trained under.

    ``W`` stacks the input, forget, output and candidate gates (in that order)
    as a ``(4h, d + h)`` matrix acting on ``[x_t, h_{t-1}]``.
    """

    W: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    history_len: int
    config: TrainConfig = field(default_factory=TrainConfig)
    train_losses: tuple[float, ...] = ()

    @property
    def input_dim(self) -> int:
        return self.W_out.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_out.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def with_params(self, params: dict[str, np.ndarray]) -> PredictorModel:
        return PredictorModel(params["W"], params["b"], params["W_out"], params["b_out"],
                              self.mu, self.sigma, self.history_len, self.config, self.train_losses)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mu) / self.sigma

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.sigma + self.mu


def init_model(mu, sigma, cfg: TrainConfig, input_dim: int = N_EVENTS) -> PredictorModel:
    rng = np.random.default_rng(cfg.seed)
    h, d = cfg.hidden_dim, input_dim
    bound = 1.0 / math.sqrt(h)
    W = rng.uniform(-bound, bound, size=(4 * h, d + h))
    b = np.zeros(4 * h)
    b[h:2 * h] = cfg.forget_bias
    W_out = rng.uniform(-bound, bound, size=(d, h))
    b_out = np.zeros(d)
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)
    return PredictorModel(W, b, W_out, b_out, np.asarray(mu, dtype=float), sigma, cfg.history_len, cfg)


def _sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params, X, keep_cache: bool = False):
    """Run the cell over ``X`` of shape ``(B, L, d)``; return ``(B, d)`` predictions."""
    W, b, W_out, b_out = (params[n] for n in PARAM_NAMES)
    B, L, d = X.shape
    h_dim = W_out.shape[1]
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    cache = []
    for t in range(L):
        xh = np.concatenate([X[:, t, :], h], axis=1)
        z = xh @ W.T + b
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim:2 * h_dim])
        o = _sigmoid(z[:, 2 * h_dim:3 * h_dim])
        g = np.tanh(z[:, 3 * h_dim:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            cache.append((xh, i, f, o, g, c_prev, tc))
    y = h @ W_out.T + b_out
    return (y, (cache, h)) if keep_cache else y


def loss_and_grads(params, X, Y):
    """Mean squared error over batch and events, with its exact gradient (BPTT)."""
    W, _b, W_out, _ = (params[n] for n in PARAM_NAMES)
    y, (cache, h_last) = forward(params, X, keep_cache=True)
    B, d = Y.shape
    diff = y - Y
    loss = float(np.sum(diff * diff) / (B * d))
    dy = 2.0 * diff / (B * d)
    grads = {n: np.zeros_like(params[n]) for n in PARAM_NAMES}
    grads["W_out"] = dy.T @ h_last
    grads["b_out"] = dy.sum(axis=0)
    h_dim = W_out.shape[1]
    dh = dy @ W_out
    dc = np.zeros_like(dh)
    for xh, i, f, o, g, c_prev, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ], axis=1)
        grads["W"] += dz.T @ xh
        grads["b"] += dz.sum(axis=0)
        dh = dz @ W[:, -h_dim:]
        dc = dc * f
    return loss, grads


def gate_activations(model: PredictorModel, history) -> dict[str, np.ndarray]:
    """Gate values at every step for one normalised history, for inspection."""
    X = np.asarray(history, dtype=float)[None]
    params = model.params()
    _, (cache, _) = forward(params, X, keep_cache=True)
    return {
        "input": np.array([step[1][0] for step in cache]),
        "forget": np.array([step[2][0] for step in cache]),
        "output": np.array([step[3][0] for step in cache]),
        "candidate": np.array([step[4][0] for step in cache]),
        "cell_output": np.array([step[6][0] for step in cache]),
    }


def make_windows(counts_list, mu, sigma, history_len: int):
    """Sliding (history, next) pairs in normalised units from raw count matrices."""
    xs, ys = [], []
    for counts in counts_list:
        z = (np.asarray(counts, dtype=float) - mu) / sigma
        n = len(z)
        if n <= history_len:
            continue
        idx = np.arange(history_len)[None, :] + np.arange(n - history_len)[:, None]
        xs.append(z[idx])
        ys.append(z[history_len:])
    if not xs:
        return np.zeros((0, history_len, len(mu))), np.zeros((0, len(mu)))
    return np.concatenate(xs), np.concatenate(ys)


def dataset_loss(model: PredictorModel, X, Y, chunk: int = 4096) -> float:
    total = 0.0
    params = model.params()
    for s in range(0, len(X), chunk):
        diff = forward(params, X[s:s + chunk]) - Y[s:s + chunk]
        total += float(np.sum(diff * diff))
    return total / (len(X) * X.shape[2])


def train(traces, cfg: TrainConfig | None = None) -> PredictorModel:
    """Fit one shared predictor on normal-workload traces."""
    cfg = cfg or TrainConfig()
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one training trace")
    usable = []
    for tr in traces:
        if len(tr) <= cfg.history_len:
            log.warning("skipping %s: %d samples <= history_len %d", tr.source or tr.label.tag(),
                        len(tr), cfg.history_len)
            continue
        usable.append(np.asarray(tr.counts if isinstance(tr, Trace) else tr, dtype=float))
    if not usable:
        raise ValueError(f"every trace is shorter than history_len + 1 = {cfg.history_len + 1}")
    stacked = np.concatenate(usable)
    mu = stacked.mean(axis=0)
    sigma = np.maximum(stacked.std(axis=0), SIGMA_FLOOR)
    model = init_model(mu, sigma, cfg, input_dim=stacked.shape[1])
    X, Y = make_windows(usable, model.mu, model.sigma, cfg.history_len)

    rng = np.random.default_rng(cfg.seed + 1)
    params = {n: v.copy() for n, v in model.params().items()}
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * cfg.lr_decay ** ((epoch - 1) // cfg.decay_every)
        order = rng.permutation(len(X))
        for s in range(0, len(X), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(params, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0
            for n in PARAM_NAMES:
                params[n] -= lr * scale * grads[n]
        epoch_loss = dataset_loss(model.with_params(params), X, Y)
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        losses.append(epoch_loss)
        log.debug("epoch %d lr %.4g mse %.6f", epoch, lr, epoch_loss)
    out = model.with_params(params)
    out.train_losses = tuple(losses)
    return out


def predict_normalized(model: PredictorModel, windows, chunk: int = 4096) -> np.ndarray:
    """Normalised predictions for a ``(B, L, d)`` batch of normalised histories."""
    windows = np.asarray(windows, dtype=float)
    params = model.params()
    out = [forward(params, windows[s:s + chunk]) for s in range(0, len(windows), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.input_dim))


def predict_next(model: PredictorModel, history) -> np.ndarray:
    """Predicted raw next sample from the last ``history_len`` raw samples."""
    if len(history) and hasattr(history[0], "counts"):
        history = [s.counts for s in history]
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape != (model.history_len, model.input_dim):
        raise ValueError(
            f"history must be ({model.history_len}, {model.input_dim}), got {h.shape}"
        )
    z = forward(model.params(), model.normalize(h)[None])[0]
    return model.denormalize(z)


def grad_check(model: PredictorModel, batch, n_params: int = 100, step: float = 1e-5,
               seed: int = 0) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    ``batch`` is a normalised ``(X, Y)`` pair. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)`` over a random subset of parameters.
    """
    X, Y = batch
    if len(X) == 0:
        raise ValueError("grad_check needs a non-empty batch")
    if n_params < 1:
        raise ValueError("grad_check needs at least one parameter to probe")
    params = {n: v.copy() for n, v in model.params().items()}
    _, grads = loss_and_grads(params, X, Y)
    sizes = [params[n].size for n in PARAM_NAMES]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, j = PARAM_NAMES[k], int(flat - offsets[k])
        view = params[name].reshape(-1)
        orig = view[j]
        view[j] = orig + step
        up, _ = loss_and_grads(params, X, Y)
        view[j] = orig - step
        down, _ = loss_and_grads(params, X, Y)
        view[j] = orig
        numeric = (up - down) / (2 * step)
        analytic = float(grads[name].reshape(-1)[j])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# --- model file ---------------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def dumps_model(model: PredictorModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "history_len": model.history_len,
        "config": asdict(model.config),
        "train_losses": list(model.train_losses),
        "mu": _arr(model.mu),
        "sigma": _arr(model.sigma),
        **{n: _arr(getattr(model, n)) for n in PARAM_NAMES},
    }
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(doc, indent=1) + "\n"


def loads_model(text: str) -> PredictorModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a predictor model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    d, h = int(doc["input_dim"]), int(doc["hidden_dim"])
    arrays = {n: np.array(doc[n], dtype=float) for n in PARAM_NAMES + ("mu", "sigma")}
    expected = {"W": (4 * h, d + h), "b": (4 * h,), "W_out": (d, h), "b_out": (d,), "mu": (d,), "sigma": (d,)}
    for n, shape in expected.items():
        if arrays[n].shape != shape:
            raise ValueError(f"model field {n} has shape {arrays[n].shape}, expected {shape}")
        if not np.all(np.isfinite(arrays[n])):
            raise ValueError(f"model field {n} has non-finite values")
    if np.any(arrays["sigma"] <= 0):
        raise ValueError("model sigma must be positive")
    return PredictorModel(arrays["W"], arrays["b"], arrays["W_out"], arrays["b_out"],
                          arrays["mu"], arrays["sigma"], int(doc["history_len"]),
                          TrainConfig(**doc["config"]), tuple(doc.get("train_losses", ())))


def save_model(model: PredictorModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path: str | Path) -> PredictorModel:
    return loads_model(Path(path).read_text())
