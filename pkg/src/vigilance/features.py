"""Time-domain descriptors, feature schemas and standardization.

Feature matrix CSV
------------------
Header row of schema feature names followed by ``label``; one row per epoch.
Values are written with ``repr`` so they read back bit-exactly; the label
cell holds state text or is empty.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import spectral
from .dataio import DEFAULT_FS, Dataset, VigilanceState, atomic_write_text
from .errors import ConfigError, FormatError, ParseError, SchemaError, VigilanceError

DEFAULT_MMD_WINDOW = 100
RAW_LEN = 5000

COMPACT_NAMES = (
    "delta_power",
    "theta_power",
    "alpha_power",
    "beta_power",
    "gamma_power",
    "spectral_entropy",
    "mmd",
    "mobility",
    "complexity",
)
_EXTENDED_EXTRA = tuple(
    f"{b.name}_{kind}"
    for kind in ("rel_power", "peak_freq", "entropy")
    for b in spectral.CANONICAL_BANDS
) + ("activity",)
VARIANTS = ("compact", "extended", "raw_plus_compact", "custom")


# --------------------------------------------------------------------------
# Time-domain features


def _samples(epoch) -> np.ndarray:
    return np.asarray(getattr(epoch, "samples", epoch), dtype=np.float64)


def _mmd_windows(x: np.ndarray, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    if window_len <= 0 or window_len > n or n % window_len:
        raise ConfigError(
            f"MMD window of {window_len} samples must divide the epoch length {n}"
        )
    w = x.reshape(-1, window_len)
    imax = np.argmax(w, axis=1)
    imin = np.argmin(w, axis=1)
    rows = np.arange(w.shape[0])
    return (imax - imin).astype(np.float64), w[rows, imax] - w[rows, imin]


def mmd_components(epoch, window_len: int = DEFAULT_MMD_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Per-window (index offset, amplitude range) pairs behind :func:`mmd`."""
    return _mmd_windows(_samples(epoch), window_len)


def mmd(epoch, window_len: int = DEFAULT_MMD_WINDOW) -> float:
    """Maximum-minimum distance.

    The epoch is cut into non-overlapping windows of ``window_len`` samples.
    In each window the first maximum and first minimum are located and their
    Euclidean distance in (sample index, amplitude) space is taken; the
    result is the sum over windows. Units are mixed (samples and µV), so the
    value is treated as dimensionless.
    """
    di, da = _mmd_windows(_samples(epoch), window_len)
    return float(np.sum(np.sqrt(di * di + da * da)))


def hjorth(epoch) -> tuple[float, float, float]:
    """Hjorth activity, mobility and complexity from first differences.

    Returns ``(0, 0, 0)`` for a constant signal; mobility and complexity are
    0 if the first difference has zero variance.
    """
    x = _samples(epoch)
    if x.shape[0] < 3:
        raise ConfigError("Hjorth parameters need at least 3 samples")
    dx = np.diff(x)
    ddx = np.diff(dx)
    var_x = float(np.var(x))
    var_dx = float(np.var(dx))
    if var_x == 0:
        return 0.0, 0.0, 0.0
    if var_dx == 0:
        return var_x, 0.0, 0.0
    mobility = math.sqrt(var_dx / var_x)
    complexity = math.sqrt(float(np.var(ddx)) / var_dx) / mobility
    return var_x, mobility, complexity


# --------------------------------------------------------------------------
# Schemas


def _digest(names: Sequence[str]) -> str:
    return hashlib.sha1(",".join(names).encode()).hexdigest()[:10]


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    variant: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.variant not in VARIANTS:
            raise SchemaError(f"unknown schema variant {self.variant!r}")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("feature names must be unique")
        unknown = [n for n in self.names if not _known(n)]
        if unknown:
            raise SchemaError(f"unknown feature name(s): {unknown[:5]}")

    @property
    def schema_id(self) -> str:
        return f"{self.variant}-{len(self.names)}-{_digest(self.names)}"

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def compact(cls) -> "FeatureSchema":
        return cls(COMPACT_NAMES, "compact")

    @classmethod
    def extended(cls) -> "FeatureSchema":
        return cls(COMPACT_NAMES + _EXTENDED_EXTRA, "extended")

    @classmethod
    def raw_plus_compact(cls, n_raw: int = RAW_LEN) -> "FeatureSchema":
        return cls(tuple(f"raw_{i}" for i in range(n_raw)) + COMPACT_NAMES, "raw_plus_compact")

    @classmethod
    def by_name(cls, variant: str) -> "FeatureSchema":
        try:
            return {"compact": cls.compact, "extended": cls.extended,
                    "raw_plus_compact": cls.raw_plus_compact}[variant]()
        except KeyError:
            raise SchemaError(f"unknown schema variant {variant!r}") from None

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "FeatureSchema":
        names = tuple(names)
        for variant in ("compact", "extended"):
            if names == cls.by_name(variant).names:
                return cls(names, variant)
        if names[-len(COMPACT_NAMES):] == COMPACT_NAMES and all(
            n == f"raw_{i}" for i, n in enumerate(names[:-len(COMPACT_NAMES)])
        ):
            return cls(names, "raw_plus_compact")
        return cls(names, "custom")


def _known(name: str) -> bool:
    if name in COMPACT_NAMES or name in _EXTENDED_EXTRA:
        return True
    return name.startswith("raw_") and name[4:].isdigit()


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise FormatError("feature vector contains non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]


class _EpochContext:
    """Lazily computed intermediates shared by features of one epoch."""

    def __init__(self, x, fs, welch, mmd_window):
        self.x = x
        self.fs = fs
        self.welch = welch
        self.mmd_window = mmd_window
        self.flags: list[str] = []
        self._psd = None
        self._hjorth = None

    @property
    def psd(self) -> spectral.Psd:
        if self._psd is None:
            self._psd = spectral.welch_psd(self.x, self.welch, self.fs)
        return self._psd

    @property
    def hjorth(self):
        if self._hjorth is None:
            self._hjorth = hjorth(self.x)
        return self._hjorth

    def peak(self, band):
        res = spectral.peak_frequency(self.psd, band)
        if res.degenerate:
            self.flags.append(f"{band.name}_peak_freq:degenerate")
        return res.freq


def _feature_fn(name: str) -> Callable[[_EpochContext], float]:
    bands = {b.name: b for b in spectral.CANONICAL_BANDS}
    if name.startswith("raw_"):
        i = int(name[4:])
        return lambda c: float(c.x[i])
    head, _, kind = name.partition("_")
    if head in bands:
        band = bands[head]
        return {
            "power": lambda c: spectral.band_power(c.psd, band),
            "rel_power": lambda c: spectral.relative_power(c.psd, band),
            "peak_freq": lambda c: c.peak(band),
            "entropy": lambda c: spectral.spectral_entropy(c.psd, band),
        }[kind]
    return {
        "spectral_entropy": lambda c: spectral.spectral_entropy(c.psd, spectral.TOTAL_BAND),
        "mmd": lambda c: mmd(c.x, c.mmd_window),
        "activity": lambda c: c.hjorth[0],
        "mobility": lambda c: c.hjorth[1],
        "complexity": lambda c: c.hjorth[2],
    }[name]


def extract_features(
    epoch,
    schema: FeatureSchema | None = None,
    welch: spectral.WelchConfig = spectral.WelchConfig(),
    fs: float = DEFAULT_FS,
    mmd_window: int = DEFAULT_MMD_WINDOW,
) -> FeatureVector:
    """Compute the schema's features for one epoch, in schema order."""
    schema = schema or FeatureSchema.compact()
    x = _samples(epoch)
    expected_len = None
    if schema.variant == "raw_plus_compact":
        expected_len = len(schema) - len(COMPACT_NAMES)
    if expected_len is not None and x.shape[0] != expected_len:
        raise SchemaError(f"epoch has {x.shape[0]} samples, schema expects {expected_len}")
    ctx = _EpochContext(x, fs, welch, mmd_window)
    values = np.empty(len(schema))
    for i, name in enumerate(schema.names):
        try:
            values[i] = _feature_fn(name)(ctx)
        except VigilanceError as exc:
            raise type(exc)(f"feature {name!r}: {exc}") from exc
        except IndexError:
            raise SchemaError(f"feature {name!r}: epoch has only {x.shape[0]} samples") from None
    return FeatureVector(values, schema.schema_id, tuple(ctx.flags))


def extract_matrix(
    dataset: Dataset,
    schema: FeatureSchema | None = None,
    welch: spectral.WelchConfig = spectral.WelchConfig(),
    mmd_window: int = DEFAULT_MMD_WINDOW,
    threads: int = 1,
) -> tuple[np.ndarray, list[tuple[str, ...]]]:
    """Feature matrix for every epoch; row order follows the dataset.

    Returns the ``(n_epochs, n_features)`` matrix and per-row QC flags.
    """
    schema = schema or FeatureSchema.compact()

    def one(e):
        return extract_features(e, schema, welch, dataset.fs, mmd_window)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vecs = list(pool.map(one, dataset.epochs))
    else:
        vecs = [one(e) for e in dataset.epochs]
    X = np.vstack([v.values for v in vecs]) if vecs else np.empty((0, len(schema)))
    return X, [v.flags for v in vecs]


# --------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    schema_id: str
    zero_variance: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if self.zero_variance is None:
            object.__setattr__(self, "zero_variance", self.scale == 0)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise SchemaError(
                f"standardizer fitted on {self.mean.shape[0]} features, got {X.shape[-1]}"
            )
        safe = np.where(self.zero_variance, 1.0, self.scale)
        return np.where(self.zero_variance, 0.0, (X - self.mean) / safe)

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * np.where(self.zero_variance, 0.0, self.scale) + self.mean


def fit_standardizer(rows, schema_id: str | None = None) -> Standardizer:
    """Per-feature mean and population standard deviation of training rows.

    ``rows`` is a sequence of :class:`FeatureVector` (which must share one
    schema) or a 2-D array together with ``schema_id``.
    """
    if len(rows) and isinstance(rows[0], FeatureVector):
        ids = {r.schema_id for r in rows}
        if len(ids) > 1:
            raise SchemaError(f"rows mix schemas: {sorted(ids)}")
        schema_id = ids.pop()
        X = np.vstack([r.values for r in rows])
    else:
        X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ConfigError("need at least 2 training rows to fit a standardizer")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return Standardizer(mean, scale, schema_id or "", scale == 0)


def apply_standardizer(std: Standardizer, row: FeatureVector) -> FeatureVector:
    if row.schema_id != std.schema_id:
        raise SchemaError(f"row schema {row.schema_id!r} != standardizer schema {std.schema_id!r}")
    return FeatureVector(std.transform(row.values), row.schema_id, row.flags)


# --------------------------------------------------------------------------
# Feature matrix CSV


def write_feature_csv(
    path: str | os.PathLike,
    X: np.ndarray,
    schema: FeatureSchema,
    labels: Sequence[int] | None = None,
) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != len(schema):
        raise SchemaError(f"matrix has {X.shape[1]} columns, schema has {len(schema)}")
    lines = [",".join(schema.names + ("label",))]
    for i, row in enumerate(X.tolist()):
        lab = "" if labels is None or labels[i] < 0 else VigilanceState(int(labels[i])).text
        lines.append(",".join([repr(v) for v in row] + [lab]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_feature_csv(path: str | os.PathLike) -> tuple[np.ndarray, FeatureSchema, np.ndarray]:
    """Return ``(X, schema, labels)``; unlabeled rows have label ``-1``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty feature file") from None
        if not header or header[-1] != "label":
            raise FormatError(f"{path}: last header column must be 'label'")
        schema = FeatureSchema.from_names(header[:-1])
        rows, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {rowno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise ParseError(f"{path}: row {rowno}: {exc}") from None
            labels.append(int(VigilanceState.from_text(row[-1])) if row[-1].strip() else -1)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema))
    if not np.all(np.isfinite(X)):
        raise ParseError(f"{path}: non-finite feature value")
    return X, schema, np.array(labels, dtype=np.int64)
