"""Print the detection-latency model next to locally measured stage costs.

The published stage costs give the reference rows; the measured column times
RED computation and the two KDE queries on this machine with a preset model.
"""

import argparse
import time

import numpy as np

from cloudshield import synth
from cloudshield.engine import EngineConfig, latency_model
from cloudshield.evaluation import latency_table
from cloudshield.predictor import TrainConfig, train
from cloudshield.red import build_detector, compute_red


def measure(window: int, repeats: int = 20):
    cat = synth.builtin_scenarios()
    traces = [synth.generate(cat.workloads[w], [], 600, seed=i) for i, w in enumerate(cat.workloads)]
    model = train(traces, TrainConfig(epochs=2))
    ref = compute_red(model, traces[0])
    det = build_detector(ref)
    probe = traces[1].slice(0, model.history_len + window)
    t_red = t_kde = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        red = compute_red(model, probe)
        t1 = time.perf_counter()
        det.score(red)
        t2 = time.perf_counter()
        t_red += t1 - t0
        t_kde += t2 - t1
    return 1e3 * t_red / repeats, 1e3 * t_kde / repeats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--w", default="1,5,10,50,100", help="comma-separated window sizes")
    args = ap.parse_args()
    windows = [int(v) for v in args.w.split(",")]
    print("window  t_b_ms  no_anomaly_ms  attack_ms  | measured t_red_ms  t_kde_ms  attack_ms")
    rows = {r["window"]: r for r in latency_table(windows)}
    for w in windows:
        t_red, t_kde = measure(w)
        local = latency_model(EngineConfig(window=w, t_red_ms=t_red, t_kde1_ms=t_kde, t_kde2_ms=2 * t_kde), True)
        r = rows.get(w)
        ref = f"{r['t_b_ms']:>6.0f}  {r['no_anomaly_ms']:>13.2f}  {r['attack_ms']:>9.2f}" if r else " " * 34
        print(f"{w:>6}  {ref}  | {t_red:>17.3f}  {t_kde:>8.3f}  {local:>9.2f}")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
