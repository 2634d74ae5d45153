"""Gradient-boosted decision trees with a softmax multiclass objective.

Each boosting round fits one regression tree per class to the per-row
gradient ``g = p - onehot`` and hessian ``h = p (1 - p)`` of the softmax
log-loss, using exact greedy split search. Leaf outputs are stored already
multiplied by the learning rate, so a class margin is ``base_score`` plus
the sum of the reached leaf values over that class's trees.

Model file format (text, version 1)::

    vigilance-model gbt 1
    meta {...one-line JSON: config, label map, feature schema...}
    base_score <m_0> <m_1> ...
    tree <t> round=<r> class=<k> nodes=<n>
    <i> <feature> <threshold> <left> <right> <default_left> <value> <gain> <cover>
    ...
    end

Floats are written with ``repr`` so a load/save round trip is bit-exact.
Version 0 files lack the ``cover`` column; they predict fine but cannot be
explained with TreeSHAP.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import kernels
from ._pykernels import _best_split_node
from .dataio import LABEL_MAP, VigilanceState, atomic_write_text
from .errors import ConfigError, InputError, ModelFormatError, SchemaError, VersionError
from .modelio import MAGIC, model_meta, read_header, read_meta

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (0, 1)


@dataclass(frozen=True)
class GbtConfig:
    eta: float = 0.1
    n_rounds: int = 500
    max_depth: int = 6
    subsample: float = 0.8
    colsample: float = 0.8
    min_split_loss: float = 0.0  # gamma
    l2: float = 1.0  # lambda
    min_child_weight: float = 1.0
    seed: int = 42
    n_classes: int = 3

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must be in (0, 1], got {self.eta}")
        if not (0 < self.subsample <= 1 and 0 < self.colsample <= 1):
            raise ConfigError("subsample and colsample must be in (0, 1]")
        if self.l2 < 0 or self.min_split_loss < 0 or self.min_child_weight < 0:
            raise ConfigError("l2, min_split_loss and min_child_weight must be >= 0")
        if self.n_rounds < 0 or self.max_depth < 0 or self.n_classes < 2:
            raise ConfigError("n_rounds >= 0, max_depth >= 0 and n_classes >= 2 required")


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float
    grad_left: float
    hess_left: float
    grad_right: float
    hess_right: float


@dataclass(frozen=True)
class TreeNode:
    """View of one node; ``feature == -1`` marks a leaf."""

    feature: int
    threshold: float
    left: int
    right: int
    default_left: bool
    value: float
    gain: float
    cover: float | None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class Tree:
    round: int
    cls: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray | None

    def __len__(self) -> int:
        return self.feature.shape[0]

    def node(self, i: int) -> TreeNode:
        return TreeNode(
            int(self.feature[i]), float(self.threshold[i]), int(self.left[i]), int(self.right[i]),
            True, float(self.value[i]), float(self.gain[i]),
            None if self.cover is None else float(self.cover[i]),
        )

    @property
    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)


@dataclass
class GbtModel:
    trees: list[Tree]
    base_score: np.ndarray
    feature_names: tuple[str, ...]
    schema_id: str
    config: GbtConfig
    label_map: dict[str, int] = field(default_factory=lambda: dict(LABEL_MAP))
    history: list[float] = field(default_factory=list, compare=False)
    training_margins: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_classes(self) -> int:
        return self.base_score.shape[0]

    @property
    def has_cover(self) -> bool:
        return all(t.cover is not None for t in self.trees)

    @cached_property
    def packed(self) -> dict[str, np.ndarray]:
        """Trees concatenated into flat arrays for the forest kernels."""
        lengths = [len(t) for t in self.trees]
        offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(lengths)

        def cat(attr, dtype):
            if not self.trees:
                return np.zeros(0, dtype=dtype)
            return np.ascontiguousarray(np.concatenate([getattr(t, attr) for t in self.trees]), dtype=dtype)

        return {
            "feature": cat("feature", np.int64),
            "threshold": cat("threshold", np.float64),
            "left": cat("left", np.int64),
            "right": cat("right", np.int64),
            "value": cat("value", np.float64),
            "cover": cat("cover", np.float64) if self.has_cover else None,
            "offsets": offsets,
            "tree_class": np.array([t.cls for t in self.trees], dtype=np.int64),
        }


# --------------------------------------------------------------------------
# Objective


def softmax(logits) -> np.ndarray:
    """Softmax along the last axis with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def grad_hess_softmax(probs, true_class) -> tuple[np.ndarray, np.ndarray]:
    """Per-class gradient and (diagonal) hessian of the softmax log-loss.

    Works for one probability vector or a batch of rows.
    """
    p = np.asarray(probs, dtype=np.float64)
    onehot = np.zeros_like(p)
    if p.ndim == 1:
        onehot[int(true_class)] = 1.0
    else:
        onehot[np.arange(p.shape[0]), np.asarray(true_class, dtype=np.int64)] = 1.0
    return p - onehot, p * (1.0 - p)


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    z = margins - margins.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(y)), y]))


# --------------------------------------------------------------------------
# Split search


def find_best_split(values, grad, hess, config: GbtConfig = GbtConfig(), feature: int = 0) -> SplitCandidate | None:
    """Best threshold on one feature column, or ``None`` if no admissible split.

    Candidates are midpoints between consecutive distinct values; the
    ``x < threshold`` side is the left child. Scanning runs by ascending
    threshold and a later candidate wins only if its gain is larger by more
    than ``1e-12`` times the magnitude of the gain terms, so ties (including
    rounding-level near-ties) go to the lowest threshold.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    g = np.asarray(grad, dtype=np.float64)
    h = np.asarray(hess, dtype=np.float64)
    if x.shape[0] < 2:
        return None
    idx = np.arange(x.shape[0])
    G = float(np.cumsum(g)[-1])
    H = float(np.cumsum(h)[-1])
    best = _best_split_node(x, idx, g, h, G, H, [0], config.l2, config.min_split_loss, config.min_child_weight)
    if best is None:
        return None
    _, thr, gain, GL, HL, _ = best
    return SplitCandidate(feature, thr, gain, GL, HL, G - GL, H - HL)


def split_gain(GL: float, HL: float, GR: float, HR: float, l2: float, gamma: float) -> float:
    """Loss reduction of splitting a node into (GL, HL) and (GR, HR)."""
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + l2) + GR * GR / (HR + l2) - G * G / (H + l2)) - gamma


# --------------------------------------------------------------------------
# Training


def _tree_rng(seed: int, rnd: int, cls: int) -> np.random.Generator:
    return np.random.default_rng([seed, rnd, cls])


def train_gbt(
    X,
    y,
    config: GbtConfig = GbtConfig(),
    feature_names: Sequence[str] | None = None,
    schema_id: str | None = None,
    record_history: bool = True,
) -> GbtModel:
    """Fit a boosted ensemble of ``n_rounds * n_classes`` trees."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InputError(f"X must be (n, d) and y (n,), got {X.shape} and {y.shape}")
    if X.shape[0] == 0:
        raise InputError("empty training set")
    if not np.all(np.isfinite(X)):
        raise InputError("X contains NaN or infinite values; missing values are not supported")
    K = config.n_classes
    if y.min() < 0 or y.max() >= K:
        raise InputError(f"labels must lie in 0..{K - 1}")
    missing = sorted(set(range(K)) - set(y.tolist()))
    if missing:
        warnings.warn(f"classes {missing} have no training rows", RuntimeWarning, stacklevel=2)

    n, d = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(d))
    if len(names) != d:
        raise SchemaError(f"{len(names)} feature names for {d} columns")
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)
    all_rows = np.ones(n, dtype=np.uint8)
    all_cols = np.arange(d, dtype=np.int64)
    n_rows = max(1, int(math.floor(config.subsample * n + 0.5)))
    n_cols = max(1, int(math.floor(config.colsample * d + 0.5)))

    base = np.zeros(K)
    margins = np.tile(base, (n, 1))
    trees: list[Tree] = []
    history = [log_loss(margins, y)] if record_history else []
    for rnd in range(config.n_rounds):
        grad, hess = grad_hess_softmax(softmax(margins), y)
        for k in range(K):
            rng = _tree_rng(config.seed, rnd, k)
            sample = all_rows
            if n_rows < n:
                sample = np.zeros(n, dtype=np.uint8)
                sample[rng.choice(n, n_rows, replace=False)] = 1
            cols = all_cols
            if n_cols < d:
                cols = np.sort(rng.choice(d, n_cols, replace=False)).astype(np.int64)
            arrays = kernels.grow_tree(
                X, order, np.ascontiguousarray(grad[:, k]), np.ascontiguousarray(hess[:, k]),
                sample, cols, config.max_depth, config.l2, config.min_split_loss,
                config.min_child_weight, config.eta,
            )
            tree = Tree(rnd, k, *arrays)
            trees.append(tree)
            margins[:, k] += kernels.predict_tree(tree.feature, tree.threshold, tree.left, tree.right, tree.value, X)
        if record_history:
            history.append(log_loss(margins, y))
    return GbtModel(trees, base, names, schema_id or f"anon-{d}", config,
                    history=history, training_margins=margins)


# --------------------------------------------------------------------------
# Prediction


def _as_matrix(model: GbtModel, x, feature_names=None) -> tuple[np.ndarray, bool]:
    schema_id = getattr(x, "schema_id", None)
    if schema_id is not None and schema_id != model.schema_id:
        raise SchemaError(f"input schema {schema_id!r} does not match model schema {model.schema_id!r}")
    X = np.asarray(getattr(x, "values", x), dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if feature_names is not None:
        feature_names = tuple(feature_names)
        if sorted(feature_names) != sorted(model.feature_names):
            raise SchemaError("input feature names do not match the model's features")
        pos = {n: i for i, n in enumerate(feature_names)}
        X = X[:, [pos[n] for n in model.feature_names]]
    if X.shape[1] != model.n_features:
        raise SchemaError(f"input has {X.shape[1]} features, model expects {model.n_features}")
    return np.ascontiguousarray(X), single


def predict_margin(model: GbtModel, x, feature_names=None) -> np.ndarray:
    X, single = _as_matrix(model, x, feature_names)
    if not model.trees:
        out = np.tile(model.base_score, (X.shape[0], 1))
    else:
        p = model.packed
        out = kernels.predict_forest(
            p["feature"], p["threshold"], p["left"], p["right"], p["value"],
            p["offsets"], p["tree_class"], model.base_score, X,
        )
    return out[0] if single else out


def predict_proba(model: GbtModel, x, feature_names=None) -> np.ndarray:
    return softmax(predict_margin(model, x, feature_names))


def predict_label(model: GbtModel, x, feature_names=None):
    """Argmax class (lowest index on ties); a VigilanceState for one row."""
    m = predict_margin(model, x, feature_names)
    lab = np.argmax(m, axis=-1)
    if np.ndim(lab) == 0 and model.n_classes == len(VigilanceState):
        return VigilanceState(int(lab))
    return lab


# --------------------------------------------------------------------------
# Serialization


def summary(model: GbtModel) -> str:
    labels = ",".join(f"{k}={v}" for k, v in model.label_map.items())
    depth = max((t.depth for t in model.trees), default=0)
    return (
        f"gbt: {model.config.n_rounds} rounds x {model.n_classes} classes "
        f"({len(model.trees)} trees), max depth {depth}, "
        f"{model.n_features} features [{model.schema_id}], labels {labels}"
    )


def format_model(model: GbtModel) -> str:
    version = FORMAT_VERSION if model.has_cover else 0
    lines = [
        f"{MAGIC} gbt {version}",
        "meta " + model_meta("gbt", asdict(model.config), model.label_map,
                             model.feature_names, model.schema_id, n_trees=len(model.trees)),
        "base_score " + " ".join(repr(float(v)) for v in model.base_score),
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t} round={tree.round} class={tree.cls} nodes={len(tree)}")
        for i in range(len(tree)):
            line = (
                f"{i} {int(tree.feature[i])} {float(tree.threshold[i])!r} {int(tree.left[i])} "
                f"{int(tree.right[i])} 1 {float(tree.value[i])!r} {float(tree.gain[i])!r}"
            )
            if version >= 1:
                line += f" {float(tree.cover[i])!r}"
            lines.append(line)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model: GbtModel, path: str | os.PathLike) -> str:
    """Write the model file and return its one-line summary."""
    atomic_write_text(path, format_model(model))
    return summary(model)


def load_model(path: str | os.PathLike) -> GbtModel:
    path = Path(path)
    lines = path.read_text().splitlines()
    version = read_header(lines, "gbt", path)
    if version not in SUPPORTED_VERSIONS:
        raise VersionError(
            f"{path}: unsupported gbt model version {version}; supported versions: "
            f"{', '.join(map(str, SUPPORTED_VERSIONS))}"
        )
    meta = read_meta(lines, path)
    try:
        config = GbtConfig(**meta["config"])
        if len(lines) < 3 or not lines[2].startswith("base_score"):
            raise ModelFormatError(f"{path}: missing base_score line")
        base = np.array([float(v) for v in lines[2].split()[1:]])
        n_trees = int(meta["n_trees"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed header ({exc})") from None

    ncol = 9 if version >= 1 else 8
    trees = []
    ln = 3
    for t in range(n_trees):
        if ln >= len(lines) or not lines[ln].startswith("tree "):
            raise ModelFormatError(f"{path}: truncated before tree {t} (node index 0)")
        try:
            head = lines[ln].split()
            kv = dict(p.split("=") for p in head[2:])
            rnd, cls, n_nodes = int(kv["round"]), int(kv["class"]), int(kv["nodes"])
        except (ValueError, KeyError):
            raise ModelFormatError(f"{path}: line {ln + 1}: malformed tree header") from None
        ln += 1
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "gain", "cover")}
        for i in range(n_nodes):
            if ln >= len(lines) or lines[ln] == "end" or lines[ln].startswith("tree "):
                raise ModelFormatError(f"{path}: tree {t} truncated at node index {i} of {n_nodes}")
            parts = lines[ln].split()
            try:
                if len(parts) != ncol or int(parts[0]) != i:
                    raise ValueError("wrong field count or node index")
                cols["feature"].append(int(parts[1]))
                cols["threshold"].append(float(parts[2]))
                cols["left"].append(int(parts[3]))
                cols["right"].append(int(parts[4]))
                cols["value"].append(float(parts[6]))
                cols["gain"].append(float(parts[7]))
                if ncol == 9:
                    cols["cover"].append(float(parts[8]))
            except ValueError as exc:
                raise ModelFormatError(f"{path}: tree {t} node index {i}: malformed node line ({exc})") from None
            ln += 1
        feature = np.array(cols["feature"], dtype=np.int64)
        left = np.array(cols["left"], dtype=np.int64)
        right = np.array(cols["right"], dtype=np.int64)
        internal = feature >= 0
        if np.any(internal & ((left < 0) | (right < 0) | (left >= n_nodes) | (right >= n_nodes))):
            raise ModelFormatError(f"{path}: tree {t}: child index out of range")
        trees.append(Tree(
            rnd, cls, feature, np.array(cols["threshold"]), left, right,
            np.array(cols["value"]), np.array(cols["gain"]),
            np.array(cols["cover"]) if ncol == 9 else None,
        ))
    if ln >= len(lines) or lines[ln] != "end":
        raise ModelFormatError(f"{path}: missing 'end' marker after {n_trees} trees (file truncated?)")
    return GbtModel(
        trees, base, tuple(meta["feature_names"]), meta["schema_id"], config,
        {k: int(v) for k, v in meta["label_map"].items()},
    )
