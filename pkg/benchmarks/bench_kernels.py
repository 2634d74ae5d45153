"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--per-class 200] [--rounds 100] [--repeat 3]

Uses noisy synthetic data so trees reach full depth and split search dominates.
Both backends must produce byte-identical models; the script checks this.
"""

import argparse
import time

import numpy as np

from vigilance import _kernels, explain, gbt
from vigilance.dataio import SynthConfig, synth_dataset
from vigilance.features import FeatureSchema, extract_matrix


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--rounds", type=int, default=100)
    ap.add_argument("--shap-rows", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = _kernels.available_backends()
    if "cython" not in backends:
        raise SystemExit("compiled extension not built; run pip install --no-build-isolation -e .")
    ds = synth_dataset(SynthConfig(n_per_class=args.per_class, noise_sigma=150.0), seed=0)
    X, _ = extract_matrix(ds, FeatureSchema.extended())
    y = ds.labels()
    cfg = gbt.GbtConfig(n_rounds=args.rounds)
    print(f"data: {X.shape[0]} rows x {X.shape[1]} features, {args.rounds} rounds, depth {cfg.max_depth}")

    rows = {}
    texts = {}
    for name in ("python", "cython"):
        gbt.kernels = explain.kernels = backends[name]
        t_train, model = _best_of(lambda: gbt.train_gbt(X, y, cfg, record_history=False), args.repeat)
        t_pred, _ = _best_of(lambda: gbt.predict_proba(model, X), args.repeat)
        t_shap, _ = _best_of(lambda: explain.shap_matrix(model, X[:args.shap_rows]), args.repeat)
        rows[name] = (t_train, t_pred, t_shap)
        texts[name] = gbt.format_model(model)

    print(f"{'stage':<10} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for i, stage in enumerate(("train", "predict", "shap")):
        p, c = rows["python"][i], rows["cython"][i]
        print(f"{stage:<10} {p:>10.3f} {c:>10.3f} {p / c:>7.1f}x")
    print("models identical:", texts["python"] == texts["cython"])


if __name__ == "__main__":
    main()
