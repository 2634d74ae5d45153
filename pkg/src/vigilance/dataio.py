"""Recordings, epochs, label encoding, stratified splits and synthetic EEG.

Epoch CSV layout
----------------
One header row ``label,s0,s1,...,s{n-1}`` followed by one row per epoch. The
``label`` cell holds ``Wake``, ``SWS``, ``REM`` or is empty for unlabeled
epochs. Amplitudes (µV) are written with 6 significant digits (``%.6g``);
reading such a file and writing it back reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    LabelError,
    ParseError,
    StratificationError,
)

logger = logging.getLogger(__name__)

DEFAULT_FS = 500.0
DEFAULT_EPOCH_SECONDS = 10.0
SAMPLE_FORMAT = "%.6g"


class VigilanceState(enum.IntEnum):
    """Vigilance state with fixed integer codes (not alphabetical)."""

    WAKE = 0
    SWS = 1
    REM = 2

    @property
    def text(self) -> str:
        return _STATE_TEXT[self]

    @classmethod
    def from_text(cls, text: str) -> "VigilanceState":
        try:
            return _TEXT_STATE[text.strip()]
        except KeyError:
            raise LabelError(
                f"unknown label {text!r}; expected one of {sorted(_TEXT_STATE)}"
            ) from None

    @classmethod
    def from_code(cls, code: int) -> "VigilanceState":
        try:
            return cls(int(code))
        except ValueError:
            raise LabelError(f"unknown label code {code!r}") from None


_STATE_TEXT = {VigilanceState.WAKE: "Wake", VigilanceState.SWS: "SWS", VigilanceState.REM: "REM"}
_TEXT_STATE = {v: k for k, v in _STATE_TEXT.items()}

#: Canonical text -> code mapping, embedded in every serialized artifact.
LABEL_MAP: dict[str, int] = {s.text: int(s) for s in VigilanceState}
N_CLASSES = len(VigilanceState)


def label_names() -> list[str]:
    return [s.text for s in VigilanceState]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Recording:
    """Continuous single-channel EEG trace."""

    subject_id: str
    fs: float
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))
        if not self.fs > 0:
            raise ConfigError(f"sampling rate must be positive, got {self.fs}")
        if self.samples.ndim != 1:
            raise FormatError("recording samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError(f"recording {self.subject_id!r} contains non-finite samples")


@dataclass(frozen=True)
class Epoch:
    index: int
    samples: np.ndarray
    label: VigilanceState | None = None
    subject_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))
        if self.samples.ndim != 1:
            raise FormatError("epoch samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise FormatError(f"epoch {self.index} contains non-finite samples")
        if self.label is not None and not isinstance(self.label, VigilanceState):
            object.__setattr__(self, "label", VigilanceState.from_code(self.label))

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Ordered, immutable collection of equal-length epochs."""

    epochs: tuple[Epoch, ...]
    schema_note: str = ""
    fs: float = DEFAULT_FS

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        lengths = {len(e) for e in self.epochs}
        if len(lengths) > 1:
            raise FormatError(f"epochs have differing lengths: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.epochs)

    def __getitem__(self, i) -> Epoch:
        return self.epochs[i]

    @property
    def epoch_len(self) -> int:
        return len(self.epochs[0]) if self.epochs else 0

    def samples_matrix(self) -> np.ndarray:
        """Stack epochs into an ``(n_epochs, n_samples)`` array."""
        if not self.epochs:
            return np.empty((0, 0))
        return np.vstack([e.samples for e in self.epochs])

    def labels(self) -> np.ndarray:
        """Integer label codes; ``-1`` marks unlabeled epochs."""
        return np.array([-1 if e.label is None else int(e.label) for e in self.epochs], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.epochs[i] for i in indices), self.schema_note, self.fs)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int
    validation: np.ndarray | None = None

    def subsets(self) -> list[np.ndarray]:
        out = [self.train]
        if self.validation is not None:
            out.append(self.validation)
        out.append(self.test)
        return out


# --------------------------------------------------------------------------
# CSV I/O


def load_dataset_csv(path: str | os.PathLike, fs: float = DEFAULT_FS) -> Dataset:
    """Read an epoch CSV file.

    Raises
    ------
    FormatError
        Header malformed or a row has the wrong number of columns.
    ParseError
        A sample cell is not a number (or not finite).
    LabelError
        The label cell holds unknown text.
    """
    path = Path(path)
    epochs = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected header 'label,s0,...'") from None
        if not header or header[0] != "label":
            raise FormatError(f"{path}: first header column must be 'label'")
        n_samples = len(header) - 1
        expected = [f"s{i}" for i in range(n_samples)]
        if n_samples < 1 or header[1:] != expected:
            raise FormatError(f"{path}: sample columns must be named s0..s{max(n_samples - 1, 0)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != n_samples:
                raise FormatError(
                    f"{path}: row {rowno}: expected {n_samples} sample columns, got {len(row) - 1}"
                )
            label = VigilanceState.from_text(row[0]) if row[0].strip() else None
            try:
                samples = np.array(row[1:], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}: row {rowno}: non-numeric sample ({exc})") from None
            if not np.all(np.isfinite(samples)):
                raise ParseError(f"{path}: row {rowno}: non-finite sample")
            epochs.append(Epoch(len(epochs), samples, label))
    return Dataset(tuple(epochs), schema_note=f"loaded from {path.name}", fs=fs)


def format_dataset_csv(dataset: Dataset) -> str:
    n = dataset.epoch_len
    lines = [",".join(["label"] + [f"s{i}" for i in range(n)])]
    for e in dataset.epochs:
        label = "" if e.label is None else e.label.text
        lines.append(",".join([label] + [SAMPLE_FORMAT % v for v in e.samples.tolist()]))
    return "\n".join(lines) + "\n"


def write_dataset_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_dataset_csv(dataset))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename on success."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with tmp.open("w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# --------------------------------------------------------------------------
# Segmentation and splitting


def segment(recording: Recording, epoch_seconds: float = DEFAULT_EPOCH_SECONDS) -> list[Epoch]:
    """Cut a recording into contiguous, non-overlapping epochs.

    Trailing samples that do not fill a whole epoch are discarded (and the
    count logged).
    """
    epoch_len = int(round(recording.fs * epoch_seconds))
    if epoch_len <= 0:
        raise ConfigError(f"epoch length must be positive, got {epoch_len} samples")
    n = recording.samples.shape[0]
    n_epochs = n // epoch_len
    if n_epochs == 0:
        raise InsufficientDataError(
            f"recording {recording.subject_id!r} has {n} samples, fewer than one "
            f"{epoch_seconds:g} s epoch ({epoch_len} samples)"
        )
    dropped = n - n_epochs * epoch_len
    if dropped:
        logger.info("segment: discarded %d trailing samples of %r", dropped, recording.subject_id)
    x = recording.samples
    return [
        Epoch(i, x[i * epoch_len:(i + 1) * epoch_len], subject_id=recording.subject_id)
        for i in range(n_epochs)
    ]


def _cut_points(n: int, fractions: Sequence[float]) -> list[int]:
    cum = np.cumsum(fractions)
    return [int(math.floor(n * c + 0.5)) for c in cum[:-1]] + [n]


def stratified_split(
    dataset: Dataset | np.ndarray,
    fractions: Sequence[float] = (0.8, 0.2),
    seed: int = 42,
    groups: Sequence | None = None,
) -> SplitIndices:
    """Partition epoch indices by class with seeded shuffling.

    ``fractions`` is ``(train, test)`` or ``(train, validation, test)``.
    Within each class the indices are shuffled and cut at rounded cumulative
    fractions, so each subset's count for class ``c`` is within one sample of
    ``n_c * fraction``.

    ``groups`` optionally names a subject per epoch; when given the cut is
    made per (subject, class) stratum instead of per class.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) not in (2, 3):
        raise ConfigError("fractions must be (train, test) or (train, validation, test)")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {fractions}")
    y = dataset.labels() if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.int64)
    if np.any(y < 0):
        raise StratificationError(
            f"cannot stratify: {int(np.sum(y < 0))} unlabeled epoch(s) present"
        )
    if groups is None:
        strata_keys = [(0, c) for c in y.tolist()]
    else:
        if len(groups) != len(y):
            raise ConfigError("groups must have one entry per epoch")
        strata_keys = list(zip(groups, y.tolist()))
    strata: dict = {}
    for i, key in enumerate(strata_keys):
        strata.setdefault(key, []).append(i)

    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for key in sorted(strata, key=lambda k: (str(k[0]), k[1])):
        idx = np.array(strata[key], dtype=np.int64)
        idx = idx[rng.permutation(idx.size)]
        lo = 0
        for part, hi in zip(parts, _cut_points(idx.size, fractions)):
            part.extend(idx[lo:hi].tolist())
            lo = hi
    arrays = [np.array(sorted(p), dtype=np.int64) for p in parts]
    if len(arrays) == 2:
        return SplitIndices(train=arrays[0], test=arrays[1], seed=seed)
    return SplitIndices(train=arrays[0], validation=arrays[1], test=arrays[2], seed=seed)


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class ClassSignature:
    """Oscillatory signature of one vigilance state.

    Frequencies are drawn per component from ``freq +/- spread`` (Hz).
    ``duty`` is the burst duty cycle of the amplitude envelope (1 = always on).
    """

    freq: float
    amplitude: float
    duty: float = 1.0
    spread: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 200
    fs: float = DEFAULT_FS
    epoch_seconds: float = DEFAULT_EPOCH_SECONDS
    noise_sigma: float = 10.0  # µV
    wake: ClassSignature = ClassSignature(freq=27.5, amplitude=20.0, spread=12.5)
    sws: ClassSignature = ClassSignature(freq=2.0, amplitude=100.0, spread=1.0)
    rem: ClassSignature = ClassSignature(freq=7.0, amplitude=40.0, duty=0.5, spread=0.0)
    burst_hz: float = 1.0  # REM burst repetition rate
    wake_components: int = 6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_per_class <= 0:
            raise ConfigError("n_per_class must be > 0")
        if self.fs <= 0 or self.epoch_seconds <= 0:
            raise ConfigError("fs and epoch_seconds must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.wake_components <= 0 or self.burst_hz <= 0:
            raise ConfigError("wake_components and burst_hz must be > 0")
        for name in ("wake", "sws", "rem"):
            sig: ClassSignature = getattr(self, name)
            if sig.freq - sig.spread <= 0 or sig.freq + sig.spread >= self.fs / 2:
                raise ConfigError(f"{name} frequencies must lie in (0, fs/2)")
            if sig.amplitude < 0 or not 0 < sig.duty <= 1 or sig.spread < 0:
                raise ConfigError(f"{name}: amplitude >= 0, 0 < duty <= 1, spread >= 0 required")

    @property
    def epoch_len(self) -> int:
        return int(round(self.fs * self.epoch_seconds))

    # Flat key-value form: scalar keys as-is, signatures as <class>_<field>.
    def to_kv(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ClassSignature):
                for g in fields(v):
                    out[f"{f.name}_{g.name}"] = repr(getattr(v, g.name))
            else:
                out[f.name] = repr(v)
        return out

    @classmethod
    def from_kv(cls, kv: Mapping[str, str]) -> "SynthConfig":
        values = {f.name: f.default for f in fields(cls)}
        sigs = {n: dict(vars(values[n])) for n in ("wake", "sws", "rem")}
        for key, raw in kv.items():
            try:
                if key in values and key not in sigs:
                    typ = int if key in ("n_per_class", "wake_components") else float
                    values[key] = typ(raw)
                    continue
                prefix, _, attr = key.partition("_")
                if prefix in sigs and attr in sigs[prefix]:
                    sigs[prefix][attr] = float(raw)
                    continue
            except ValueError:
                raise ConfigError(f"synth config: {key}={raw!r} is not a number") from None
            raise ConfigError(f"synth config: unknown key {key!r}")
        for n, s in sigs.items():
            values[n] = ClassSignature(**s)
        return cls(**values)


SYNTH_KEY_DOC = {
    "n_per_class": "epochs generated per vigilance state",
    "fs": "sampling rate, Hz",
    "epoch_seconds": "epoch duration, s",
    "noise_sigma": "white-noise standard deviation, µV",
    "burst_hz": "REM burst repetition rate, Hz",
    "wake_components": "number of mixed sinusoids in Wake epochs",
}


def read_kv_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise FormatError(f"{path}: line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def format_kv(kv: Mapping[str, str], doc: Mapping[str, str] | None = None) -> str:
    doc = doc or {}
    lines = []
    for k, v in kv.items():
        note = doc.get(k) or _signature_doc(k)
        lines.append(f"{k} = {v}" + (f"  # {note}" if note else ""))
    return "\n".join(lines) + "\n"


def _signature_doc(key: str) -> str:
    units = {"freq": "centre frequency, Hz", "amplitude": "amplitude, µV",
             "duty": "burst duty cycle (0, 1]", "spread": "frequency half-range, Hz"}
    return units.get(key.partition("_")[2], "")


def _synth_epoch(state: VigilanceState, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.epoch_len
    t = np.arange(n) / cfg.fs
    if state is VigilanceState.SWS:
        sig = cfg.sws
        f = rng.uniform(sig.freq - sig.spread, sig.freq + sig.spread)
        amp = sig.amplitude * rng.uniform(0.8, 1.2)
        x = amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    elif state is VigilanceState.REM:
        sig = cfg.rem
        f = rng.uniform(sig.freq - sig.spread, sig.freq + sig.spread)
        amp = sig.amplitude * rng.uniform(0.8, 1.2)
        phase = (cfg.burst_hz * t + rng.uniform()) % 1.0
        burst = np.where(phase < sig.duty, np.sin(np.pi * phase / sig.duty) ** 2, 0.0)
        x = amp * burst * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    else:
        sig = cfg.wake
        k = cfg.wake_components
        freqs = rng.uniform(sig.freq - sig.spread, sig.freq + sig.spread, size=k)
        phases = rng.uniform(0, 2 * np.pi, size=k)
        amp = sig.amplitude / math.sqrt(k)
        x = amp * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
    return x + cfg.noise_sigma * rng.standard_normal(n)


def synth_dataset(config: SynthConfig | None = None, seed: int = 42) -> Dataset:
    """Generate ``n_per_class`` labeled epochs for each state.

    SWS epochs carry a large 1-3 Hz sinusoid, REM epochs a 7 Hz sinusoid with
    burst amplitude modulation, Wake epochs a low-amplitude mixture of
    15-40 Hz components; all get additive white noise. Every epoch draws from
    its own child of ``SeedSequence(seed)`` (PCG64), so output is a pure
    function of ``(config, seed)``.
    """
    cfg = config or SynthConfig()
    cfg.validate()
    children = np.random.SeedSequence(seed).spawn(cfg.n_per_class * N_CLASSES)
    epochs = []
    for state in VigilanceState:
        for _ in range(cfg.n_per_class):
            rng = np.random.Generator(np.random.PCG64(children[len(epochs)]))
            epochs.append(Epoch(len(epochs), _synth_epoch(state, cfg, rng), state))
    return Dataset(tuple(epochs), schema_note=f"synthetic seed={seed}", fs=cfg.fs)


def with_labels(dataset: Dataset, labels: Sequence[int | None]) -> Dataset:
    return Dataset(
        tuple(replace(e, label=None if l is None else VigilanceState.from_code(l))
              for e, l in zip(dataset.epochs, labels)),
        dataset.schema_note,
        dataset.fs,
    )
