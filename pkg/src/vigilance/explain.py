"""Split-gain importance and TreeSHAP attributions for boosted ensembles.

Attributions are exact path-dependent Shapley values of each class margin
(pre-softmax), computed from the per-node training row counts stored in the
model. They satisfy ``base[k] + sum_j phi[j, k] == margin[k]``. A positive
value pushes the margin of class ``k`` up, which raises that class's softmax
probability relative to the others.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _pykernels
from ._kernels import kernels
from .dataio import atomic_write_text
from .errors import CapabilityError
from .gbt import GbtModel, _as_matrix


@dataclass(frozen=True)
class GainImportance:
    feature_names: tuple[str, ...]
    total_gain: np.ndarray
    share: np.ndarray
    no_splits: bool = False

    def ranked(self) -> list[tuple[str, float, float]]:
        order = sorted(range(len(self.feature_names)), key=lambda j: (-self.total_gain[j], j))
        return [(self.feature_names[j], float(self.total_gain[j]), float(self.share[j])) for j in order]


@dataclass(frozen=True)
class ShapValues:
    base: np.ndarray  # (n_classes,)
    phi: np.ndarray  # (n_features, n_classes)


def gain_importance(model: GbtModel) -> GainImportance:
    """Total split gain per feature over all trees, and its share of the sum."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(total, tree.feature[internal], tree.gain[internal])
    s = total.sum()
    if s > 0:
        share = total / s
        return GainImportance(model.feature_names, total, share)
    return GainImportance(model.feature_names, total, np.zeros_like(total), no_splits=True)


def expected_margins(model: GbtModel) -> np.ndarray:
    """Cover-weighted expected margin per class (the SHAP base values)."""
    _require_cover(model)
    base = np.array(model.base_score, dtype=np.float64)
    for t in model.trees:
        base[t.cls] += _pykernels.expected_value(t.feature, t.left, t.right, t.value, t.cover)
    return base


def _require_cover(model: GbtModel) -> None:
    if not model.has_cover:
        raise CapabilityError(
            "model has no node cover counts (legacy file); retrain to enable TreeSHAP"
        )


def shap_matrix(model: GbtModel, X, feature_names=None) -> tuple[np.ndarray, np.ndarray]:
    """SHAP values for many rows: ``(base, phi)`` with phi ``(n, n_features, n_classes)``."""
    _require_cover(model)
    X, _ = _as_matrix(model, X, feature_names)
    base = expected_margins(model)
    if not model.trees:
        return base, np.zeros((X.shape[0], model.n_features, model.n_classes))
    p = model.packed
    max_depth = max(t.depth for t in model.trees)
    phi = kernels.shap_forest(
        p["feature"], p["threshold"], p["left"], p["right"], p["value"], p["cover"],
        p["offsets"], p["tree_class"], X, model.n_classes, max_depth,
    )
    return base, phi


def tree_shap(model: GbtModel, x) -> ShapValues:
    base, phi = shap_matrix(model, x)
    return ShapValues(base, phi[0])


@dataclass(frozen=True)
class ShapSummary:
    rows: list[tuple[int, str, float, int, float]]  # row_id, feature, value, class, phi
    ranking: list[tuple[str, float]]  # feature, mean |phi| over rows and classes


def shap_summary(model: GbtModel, X) -> ShapSummary:
    """Long-form beeswarm table plus features ranked by mean absolute SHAP."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 1:
        raise ValueError("shap_summary needs at least one row")
    _, phi = shap_matrix(model, X)
    names = model.feature_names
    rows = [
        (r, names[j], float(X[r, j]), k, float(phi[r, j, k]))
        for r in range(X.shape[0])
        for j in range(len(names))
        for k in range(model.n_classes)
    ]
    mean_abs = np.abs(phi).mean(axis=(0, 2))
    order = sorted(range(len(names)), key=lambda j: (-mean_abs[j], j))
    return ShapSummary(rows, [(names[j], float(mean_abs[j])) for j in order])


def write_importance_csv(imp: GainImportance, path: str | os.PathLike) -> None:
    lines = ["feature,total_gain,share"] + [f"{n},{g!r},{s!r}" for n, g, s in imp.ranked()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_shap_csv(summary: ShapSummary, path: str | os.PathLike, class_names=None) -> None:
    def cname(k):
        return class_names[k] if class_names else str(k)

    lines = ["row_id,feature,feature_value,class,shap"] + [
        f"{r},{f},{v!r},{cname(k)},{p!r}" for r, f, v, k, p in summary.rows
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_shap_ranking_csv(summary: ShapSummary, path: str | os.PathLike) -> None:
    lines = ["feature,mean_abs_shap"] + [f"{f},{v!r}" for f, v in summary.ranking]
    atomic_write_text(path, "\n".join(lines) + "\n")
