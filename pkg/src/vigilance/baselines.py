"""Multinomial logistic regression and a two-hidden-layer ReLU network.

Both models expect standardized inputs; the fitted :class:`Standardizer`
travels with the model so predictions can start from raw features.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import LABEL_MAP, atomic_write_text
from .errors import ConfigError, DivergenceError, InputError, ModelFormatError, SchemaError
from .features import Standardizer
from .gbt import softmax
from .modelio import (
    MAGIC,
    check_version,
    float_line,
    model_meta,
    parse_floats,
    read_header,
    read_meta,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    p = probs[np.arange(y.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _check_xy(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InputError(f"X must be (n, d) and y (n,), got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("X contains non-finite values")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InputError(f"labels must lie in 0..{n_classes - 1}")
    return X, y


def _standardize(std: Standardizer | None, X: np.ndarray) -> np.ndarray:
    return X if std is None else std.transform(X)


# --------------------------------------------------------------------------
# Logistic regression


@dataclass
class LinearModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    l2: float
    feature_names: tuple[str, ...]
    schema_id: str
    label_map: dict[str, int] = field(default_factory=lambda: dict(LABEL_MAP))
    standardizer: Standardizer | None = None
    n_iter: int = 0


def logistic_loss_grad(W, b, X, y, l2) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient."""
    P = softmax(X @ W.T + b)
    loss = _cross_entropy(P, y) + 0.5 * l2 * float(np.sum(W * W))
    R = (P - _onehot(y, W.shape[0])) / X.shape[0]
    return loss, R.T @ X + l2 * W, R.sum(axis=0)


def train_logistic(
    X,
    y,
    l2: float = 1e-3,
    lr: float = 0.1,
    max_iter: int = 5000,
    tol: float = 1e-6,
    n_classes: int = 3,
    feature_names: Sequence[str] | None = None,
    schema_id: str = "",
    standardizer: Standardizer | None = None,
) -> LinearModel:
    """Full-batch gradient descent from zero weights.

    Stops after ``max_iter`` steps or once the gradient's max-norm drops
    below ``tol``. ``X`` must already be standardized.
    """
    X, y = _check_xy(X, y, n_classes)
    if l2 < 0 or lr <= 0 or max_iter < 0:
        raise ConfigError("need l2 >= 0, lr > 0, max_iter >= 0")
    d = X.shape[1]
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gW, gb = logistic_loss_grad(W, b, X, y, l2)
        if not np.isfinite(loss):
            raise DivergenceError(f"logistic loss became non-finite at iteration {it}; try a smaller lr")
        if max(np.abs(gW).max(initial=0.0), np.abs(gb).max()) < tol:
            it -= 1
            break
        W -= lr * gW
        b -= lr * gb
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(d))
    return LinearModel(W, b, l2, names, schema_id, standardizer=standardizer, n_iter=it)


def logistic_predict(model: LinearModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.weights.shape[1]:
        raise SchemaError(f"input has {X.shape[1]} features, model expects {model.weights.shape[1]}")
    return softmax(_standardize(model.standardizer, X) @ model.weights.T + model.bias)


# --------------------------------------------------------------------------
# Feed-forward network


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (128, 64)
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.3
    patience: int = 10
    seed: int = 42

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1, lr > 0, patience >= 0")


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]
    dropout: float
    feature_names: tuple[str, ...]
    schema_id: str
    label_map: dict[str, int] = field(default_factory=lambda: dict(LABEL_MAP))
    standardizer: Standardizer | None = None
    config: MlpConfig = MlpConfig()

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_epoch: int | None = None  # 1-based epoch after which early stopping fired

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), start=1):
            lines.append(f"{i},{a!r},{b!r},{c!r}")
        return "\n".join(lines) + "\n"


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """He-uniform weights, zero biases."""
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        Ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Ws, bs


def mlp_forward(Ws, bs, X, masks=None):
    """Logits and cached activations; ``masks`` are inverted-dropout multipliers."""
    acts = [X]
    pre = []
    a = X
    for i, (W, b) in enumerate(zip(Ws, bs)):
        z = a @ W + b
        pre.append(z)
        if i < len(Ws) - 1:
            a = np.maximum(z, 0.0)
            if masks is not None:
                a = a * masks[i]
            acts.append(a)
        else:
            a = z
    return a, acts, pre


def mlp_loss_grad(Ws, bs, X, y, masks=None):
    """Mean cross-entropy and its gradient for every weight and bias."""
    logits, acts, pre = mlp_forward(Ws, bs, X, masks)
    P = softmax(logits)
    loss = _cross_entropy(P, y)
    delta = (P - _onehot(y, P.shape[1])) / X.shape[0]
    gWs = [None] * len(Ws)
    gbs = [None] * len(Ws)
    for i in range(len(Ws) - 1, -1, -1):
        gWs[i] = acts[i].T @ delta
        gbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ Ws[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return loss, gWs, gbs


def _dropout_masks(rng, n, sizes, p):
    if p <= 0:
        return None
    keep = 1.0 - p
    return [(rng.random((n, s)) < keep) / keep for s in sizes]


def train_mlp(
    X_train,
    y_train,
    X_val,
    y_val,
    config: MlpConfig = MlpConfig(),
    n_classes: int = 3,
    feature_names: Sequence[str] | None = None,
    schema_id: str = "",
    standardizer: Standardizer | None = None,
) -> tuple[MlpModel, TrainLog]:
    """Mini-batch Adam on cross-entropy with dropout and early stopping.

    Validation loss drives early stopping: training halts once it has not
    improved for ``patience`` consecutive epochs (immediately after the
    first non-improving epoch when ``patience == 0``), and the weights from
    the best epoch are restored.
    """
    X_train, y_train = _check_xy(X_train, y_train, n_classes)
    X_val, y_val = _check_xy(X_val, y_val, n_classes)
    if X_val.shape[0] == 0:
        raise InputError("validation set is empty")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    sizes = [X_train.shape[1], *config.hidden, n_classes]
    Ws, bs = init_mlp(sizes, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    params = Ws + bs
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    log = TrainLog()
    best_loss = np.inf
    best = ([w.copy() for w in Ws], [b.copy() for b in bs])
    wait = 0
    n = X_train.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for s in range(0, n, config.batch_size):
            idx = perm[s:s + config.batch_size]
            masks = _dropout_masks(drop_rng, idx.size, config.hidden, config.dropout)
            loss, gWs, gbs = mlp_loss_grad(Ws, bs, X_train[idx], y_train[idx], masks)
            if not np.isfinite(loss):
                raise DivergenceError(f"MLP loss became non-finite in epoch {epoch}")
            batch_losses.append(loss * idx.size)
            step += 1
            c1 = 1.0 - config.beta1 ** step
            c2 = 1.0 - config.beta2 ** step
            for j, (p, g) in enumerate(zip(params, gWs + gbs)):
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g
                p -= config.lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + config.eps)
        logits, _, _ = mlp_forward(Ws, bs, X_val)
        P = softmax(logits)
        val_loss = _cross_entropy(P, y_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"MLP validation loss became non-finite in epoch {epoch}")
        log.train_loss.append(float(sum(batch_losses) / n))
        log.val_loss.append(val_loss)
        log.val_acc.append(float(np.mean(np.argmax(P, axis=1) == y_val)))
        if val_loss < best_loss:
            best_loss = val_loss
            best = ([w.copy() for w in Ws], [b.copy() for b in bs])
            log.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                log.stopped_epoch = epoch
                break
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(sizes[0]))
    model = MlpModel(best[0], best[1], config.dropout, names, schema_id,
                     standardizer=standardizer, config=config)
    return model, log


def mlp_predict(model: MlpModel, x) -> np.ndarray:
    """Class probabilities from a dropout-free forward pass."""
    X = np.asarray(getattr(x, "values", x), dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.weights[0].shape[0]:
        raise SchemaError(f"input has {X.shape[1]} features, model expects {model.weights[0].shape[0]}")
    logits, _, _ = mlp_forward(model.weights, model.biases, _standardize(model.standardizer, X))
    P = softmax(logits)
    return P[0] if single else P


# --------------------------------------------------------------------------
# Serialization


def _std_meta(std: Standardizer | None):
    if std is None:
        return None
    return {"mean": std.mean.tolist(), "scale": std.scale.tolist(), "schema_id": std.schema_id}


def _std_from_meta(d) -> Standardizer | None:
    if d is None:
        return None
    return Standardizer(np.array(d["mean"]), np.array(d["scale"]), d["schema_id"])


def format_logistic(model: LinearModel) -> str:
    K, D = model.weights.shape
    lines = [
        f"{MAGIC} logistic {FORMAT_VERSION}",
        "meta " + model_meta("logistic", {"l2": model.l2, "n_iter": model.n_iter}, model.label_map,
                             model.feature_names, model.schema_id,
                             standardizer=_std_meta(model.standardizer), shape=[K, D]),
    ]
    lines += [float_line(f"w{k}", model.weights[k]) for k in range(K)]
    lines.append(float_line("bias", model.bias))
    lines.append("end")
    return "\n".join(lines) + "\n"


def format_mlp(model: MlpModel) -> str:
    lines = [
        f"{MAGIC} mlp {FORMAT_VERSION}",
        "meta " + model_meta("mlp", asdict(model.config), model.label_map, model.feature_names,
                             model.schema_id, standardizer=_std_meta(model.standardizer),
                             layer_sizes=model.layer_sizes),
    ]
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"layer {i} {W.shape[0]} {W.shape[1]}")
        lines += [float_line("w", row) for row in W]
        lines.append(float_line("b", b))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_baseline(model, path: str | os.PathLike) -> str:
    if isinstance(model, LinearModel):
        atomic_write_text(path, format_logistic(model))
        K, D = model.weights.shape
        return f"logistic: {K} classes x {D} features [{model.schema_id}], {model.n_iter} iterations"
    atomic_write_text(path, format_mlp(model))
    return f"mlp: layers {model.layer_sizes} [{model.schema_id}], dropout {model.dropout}"


def load_baseline(path: str | os.PathLike):
    path = Path(path)
    lines = path.read_text().splitlines()
    family = lines[0].split()[1] if lines and len(lines[0].split()) == 3 else None
    if family not in ("logistic", "mlp"):
        raise ModelFormatError(f"{path}: not a logistic or mlp model file")
    version = read_header(lines, family, path)
    check_version(version, (FORMAT_VERSION,), family, path)
    meta = read_meta(lines, path)
    std = _std_from_meta(meta.get("standardizer"))
    label_map = {k: int(v) for k, v in meta["label_map"].items()}
    ln = 2
    try:
        if family == "logistic":
            K, D = meta["shape"]
            W = np.array([parse_floats(lines[ln + k], f"w{k}", D, path, f"weight row {k}") for k in range(K)])
            b = np.array(parse_floats(lines[ln + K], "bias", K, path, "bias"))
            ln += K + 1
            model = LinearModel(W.reshape(K, D), b, meta["config"]["l2"], tuple(meta["feature_names"]),
                                meta["schema_id"], label_map, std, meta["config"]["n_iter"])
        else:
            Ws, bs = [], []
            sizes = meta["layer_sizes"]
            for i in range(len(sizes) - 1):
                head = lines[ln].split()
                if head[:2] != ["layer", str(i)]:
                    raise ModelFormatError(f"{path}: expected header of layer {i}")
                fi, fo = int(head[2]), int(head[3])
                ln += 1
                Ws.append(np.array([parse_floats(lines[ln + r], "w", fo, path, f"layer {i} row {r}")
                                    for r in range(fi)]).reshape(fi, fo))
                ln += fi
                bs.append(np.array(parse_floats(lines[ln], "b", fo, path, f"layer {i} bias")))
                ln += 1
            cfg = dict(meta["config"])
            cfg["hidden"] = tuple(cfg["hidden"])
            model = MlpModel(Ws, bs, cfg["dropout"], tuple(meta["feature_names"]), meta["schema_id"],
                             label_map, std, MlpConfig(**cfg))
    except IndexError:
        raise ModelFormatError(f"{path}: truncated {family} model (line {ln + 1})") from None
    if ln >= len(lines) or lines[ln] != "end":
        raise ModelFormatError(f"{path}: missing 'end' marker (file truncated?)")
    return model


def baseline_predict(model, X) -> np.ndarray:
    if isinstance(model, LinearModel):
        return logistic_predict(model, X)
    return np.atleast_2d(mlp_predict(model, np.atleast_2d(X)))
