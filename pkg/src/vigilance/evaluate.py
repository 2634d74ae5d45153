"""Classification metrics, calibration analysis and cross-validated grid search."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .dataio import atomic_write_text, label_names
from .errors import ConfigError, FoldError, InputError

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true, columns = predicted
    labels: tuple[str, ...] = field(default_factory=lambda: tuple(label_names()))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    labels: tuple[str, ...]

    def as_table(self) -> str:
        w = max(9, max(len(l) for l in self.labels))
        lines = [f"{'class':<{w}} {'precision':>9} {'recall':>9} {'f1':>9}"]
        for i, lab in enumerate(self.labels):
            lines.append(f"{lab:<{w}} {self.precision[i]:>9.4f} {self.recall[i]:>9.4f} {self.f1[i]:>9.4f}")
        lines.append(f"{'macro':<{w}} {self.macro_precision:>9.4f} {self.macro_recall:>9.4f} {self.macro_f1:>9.4f}")
        lines.append(f"{'accuracy':<{w}} {self.accuracy:>9.4f}")
        return "\n".join(lines) + "\n"

    def as_csv(self) -> str:
        lines = ["class,precision,recall,f1"]
        for i, lab in enumerate(self.labels):
            lines.append(f"{lab},{float(self.precision[i])!r},{float(self.recall[i])!r},{float(self.f1[i])!r}")
        lines.append(f"macro,{self.macro_precision!r},{self.macro_recall!r},{self.macro_f1!r}")
        lines.append(f"accuracy,{self.accuracy!r},,")
        return "\n".join(lines) + "\n"


def confusion(y_true, y_pred, n_classes: int = 3, labels: Sequence[str] | None = None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InputError(f"length mismatch: {y_true.shape[0]} true vs {y_pred.shape[0]} predicted labels")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"labels must lie in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    labels = tuple(labels) if labels is not None else (
        tuple(label_names()) if n_classes == 3 else tuple(str(k) for k in range(n_classes)))
    return ConfusionMatrix(cm, labels)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 -> 0
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    M = np.asarray(cm.counts, dtype=np.float64)
    tp = np.diag(M)
    precision = _ratio(tp, M.sum(axis=0))
    recall = _ratio(tp, M.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    total = M.sum()
    acc = float(tp.sum() / total) if total else 0.0
    return MetricsReport(acc, precision, recall, f1, float(np.mean(precision)),
                         float(np.mean(recall)), float(np.mean(f1)), cm.labels)


def _check_probs(probs, y_true) -> tuple[np.ndarray, np.ndarray]:
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(y_true, dtype=np.int64)
    if P.shape[0] != y.shape[0]:
        raise InputError(f"{P.shape[0]} probability rows for {y.shape[0]} labels")
    if not np.all(np.isfinite(P)):
        raise InputError("probabilities contain non-finite values")
    bad = np.flatnonzero((P.min(axis=1) < -SIMPLEX_TOL) | (np.abs(P.sum(axis=1) - 1.0) > SIMPLEX_TOL))
    if bad.size:
        raise InputError(f"row {int(bad[0])} is not a probability vector (tolerance {SIMPLEX_TOL})")
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise InputError(f"labels must lie in 0..{P.shape[1] - 1}")
    return P, y


def brier(probs, y_true) -> float:
    """Multiclass Brier score: mean over samples of the squared distance to one-hot truth."""
    P, y = _check_probs(probs, y_true)
    if y.size == 0:
        return 0.0
    D = P.copy()
    D[np.arange(y.shape[0]), y] -= 1.0
    return float(np.mean(np.sum(D * D, axis=1)))


@dataclass(frozen=True)
class CalibrationReport:
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    count: np.ndarray
    mean_conf: np.ndarray  # NaN for empty bins
    accuracy: np.ndarray  # NaN for empty bins
    max_deviation: float
    brier: float

    def as_csv(self) -> str:
        def fmt(v):
            return "" if math.isnan(v) else repr(float(v))

        lines = ["bin_lo,bin_hi,count,mean_conf,accuracy"]
        for i in range(self.count.shape[0]):
            lines.append(f"{float(self.bin_lo[i])!r},{float(self.bin_hi[i])!r},{int(self.count[i])},"
                         f"{fmt(self.mean_conf[i])},{fmt(self.accuracy[i])}")
        return "\n".join(lines) + "\n"


def reliability(probs, y_true, n_bins: int = 10) -> CalibrationReport:
    """Equal-width reliability bins over max-class confidence.

    A sample with confidence ``c`` falls in bin ``floor(c * n_bins)``
    (``c == 1`` goes to the last bin); a bin's accuracy is the fraction of
    its samples whose argmax class is the true class.
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    P, y = _check_probs(probs, y_true)
    conf = P.max(axis=1)
    correct = (np.argmax(P, axis=1) == y).astype(np.float64)
    b = np.minimum(np.floor(conf * n_bins).astype(np.int64), n_bins - 1)
    b = np.maximum(b, 0)
    count = np.bincount(b, minlength=n_bins)
    conf_sum = np.bincount(b, weights=conf, minlength=n_bins)
    corr_sum = np.bincount(b, weights=correct, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(count > 0, conf_sum / count, np.nan)
        acc = np.where(count > 0, corr_sum / count, np.nan)
    nonempty = count > 0
    dev = float(np.max(np.abs(mean_conf[nonempty] - acc[nonempty]))) if nonempty.any() else 0.0
    edges = np.arange(n_bins + 1) / n_bins
    return CalibrationReport(edges[:-1], edges[1:], count, mean_conf, acc, dev,
                             brier(P, y) if y.size else 0.0)


# --------------------------------------------------------------------------
# Cross-validation


@dataclass(frozen=True)
class GridSpec:
    params: Mapping[str, Sequence[Any]]
    folds: int = 5
    seed: int = 42

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ConfigError("grid must name at least one parameter with at least one value")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    def points(self) -> list[dict[str, Any]]:
        keys = list(self.params)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.params[k] for k in keys))]


def stratified_kfold(y, folds: int, seed: int = 42) -> list[np.ndarray]:
    """Test-index arrays for ``folds`` stratified folds."""
    y = np.asarray(y, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if folds < 2:
        raise FoldError("need at least 2 folds")
    if counts.min() < folds:
        raise FoldError(
            f"cannot build {folds} stratified folds: class {int(classes[np.argmin(counts)])} "
            f"has only {int(counts.min())} samples"
        )
    rng = np.random.default_rng(seed)
    assign = np.empty(y.shape[0], dtype=np.int64)
    for c in classes:
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        assign[idx] = np.arange(idx.size) % folds
    return [np.flatnonzero(assign == f) for f in range(folds)]


@dataclass(frozen=True)
class CvResult:
    params: dict[str, Any]
    grid_index: int
    fold_f1: tuple[float, ...]
    fold_accuracy: tuple[float, ...]
    fold_brier: tuple[float, ...] = ()

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1))

    @property
    def std_f1(self) -> float:
        return float(np.std(self.fold_f1))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracy))

    @property
    def mean_brier(self) -> float:
        return float(np.mean(self.fold_brier)) if self.fold_brier else float("nan")


# A trainer maps (X_train, y_train, params, seed) to a predict-probabilities callable.
Trainer = Callable[[np.ndarray, np.ndarray, dict, int], Callable[[np.ndarray], np.ndarray]]


def _gbt_trainer(X, y, params, seed):
    from .gbt import GbtConfig, predict_proba, train_gbt

    cfg = GbtConfig(**{"seed": seed, **params})
    model = train_gbt(X, y, cfg, record_history=False)
    return lambda Z: predict_proba(model, Z)


def _logistic_trainer(X, y, params, seed):
    from .baselines import logistic_predict, train_logistic
    from .features import fit_standardizer

    std = fit_standardizer(X)
    model = train_logistic(std.transform(X), y, standardizer=std, **params)
    return lambda Z: logistic_predict(model, Z)


def _mlp_trainer(X, y, params, seed):
    from .baselines import MlpConfig, mlp_predict, train_mlp
    from .dataio import stratified_split
    from .features import fit_standardizer

    split = stratified_split(y, (0.85, 0.15), seed=seed)
    std = fit_standardizer(X[split.train])
    cfg = MlpConfig(**{"seed": seed, **params})
    model, _ = train_mlp(std.transform(X[split.train]), y[split.train],
                         std.transform(X[split.test]), y[split.test], cfg, standardizer=std)
    return lambda Z: mlp_predict(model, Z)


TRAINERS: dict[str, Trainer] = {"gbt": _gbt_trainer, "logistic": _logistic_trainer, "mlp": _mlp_trainer}


def cross_validate(X, y, grid: GridSpec, trainer: str | Trainer = "gbt", threads: int = 1) -> list[CvResult]:
    """Stratified k-fold evaluation of every grid point.

    Results are ranked by mean macro-F1, then mean accuracy, then grid order.
    The mean Brier score is reported alongside but does not affect the rank.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    train_fn = TRAINERS[trainer] if isinstance(trainer, str) else trainer
    folds = stratified_kfold(y, grid.folds, grid.seed)
    all_idx = np.arange(y.shape[0])
    n_classes = int(y.max()) + 1

    def run(job):
        params, f = job
        test = folds[f]
        train = np.setdiff1d(all_idx, test)
        predict = train_fn(X[train], y[train], dict(params), grid.seed)
        P = predict(X[test])
        rep = metrics(confusion(y[test], np.argmax(P, axis=1), max(n_classes, 3)))
        return rep.macro_f1, rep.accuracy, brier(P, y[test])

    points = grid.points()
    jobs = [(p, f) for p in points for f in range(grid.folds)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(run, jobs))
    else:
        scores = [run(j) for j in jobs]
    results = []
    for i, p in enumerate(points):
        s = scores[i * grid.folds:(i + 1) * grid.folds]
        results.append(CvResult(p, i, *(tuple(float(v[m]) for v in s) for m in range(3))))
    results.sort(key=lambda r: (-r.mean_f1, -r.mean_accuracy, r.grid_index))
    return results


def cv_table_csv(results: Sequence[CvResult]) -> str:
    keys = sorted({k for r in results for k in r.params})
    lines = [",".join(["rank", "grid_index"] + keys + ["mean_f1", "std_f1", "mean_accuracy", "std_accuracy", "mean_brier"])]
    for rank, r in enumerate(results, start=1):
        vals = [str(r.params.get(k, "")) for k in keys]
        lines.append(",".join([str(rank), str(r.grid_index)] + vals + [
            repr(r.mean_f1), repr(r.std_f1), repr(r.mean_accuracy), repr(r.std_accuracy), repr(r.mean_brier)]))
    return "\n".join(lines) + "\n"


def write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_text(path, text)
