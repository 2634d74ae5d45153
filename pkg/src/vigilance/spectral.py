"""Welch power spectral density and band-level spectral features."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BandResolutionError, ConfigError

DEFAULT_FS = 500.0


@dataclass(frozen=True)
class BandDef:
    """Half-open frequency band ``[lo, hi)`` in Hz."""

    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ConfigError(f"band {self.name!r}: need 0 <= lo < hi, got [{self.lo}, {self.hi})")


DELTA = BandDef("delta", 0.5, 4.0)
THETA = BandDef("theta", 4.0, 8.0)
ALPHA = BandDef("alpha", 8.0, 12.0)
BETA = BandDef("beta", 12.0, 30.0)
GAMMA = BandDef("gamma", 30.0, 100.0)
CANONICAL_BANDS = (DELTA, THETA, ALPHA, BETA, GAMMA)
TOTAL_BAND = BandDef("total", 0.5, 100.0)


@dataclass(frozen=True)
class WelchConfig:
    segment_len: int = 1000
    overlap: float = 0.5
    window: str = "hann"

    def __post_init__(self):
        if self.segment_len < 2:
            raise ConfigError("segment_len must be >= 2")
        if not 0 <= self.overlap < 1:
            raise ConfigError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.window not in _WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")

    @property
    def step(self) -> int:
        return max(1, self.segment_len - int(round(self.segment_len * self.overlap)))


def _hann(n: int) -> np.ndarray:
    # periodic (DFT-even) form, the usual choice for spectral averaging
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / n)


_WINDOWS = {"hann": _hann, "hamming": _hamming, "boxcar": np.ones}


@dataclass(frozen=True)
class Psd:
    freqs: np.ndarray
    density: np.ndarray  # µV²/Hz

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def mask(self, band: BandDef) -> np.ndarray:
        if band.hi > self.freqs[-1] + self.df:
            raise ConfigError(
                f"band {band.name!r} upper edge {band.hi} Hz beyond grid end {self.freqs[-1]} Hz"
            )
        m = (self.freqs >= band.lo) & (self.freqs < band.hi)
        if not m.any():
            raise BandResolutionError(
                f"band {band.name!r} [{band.lo}, {band.hi}) Hz contains no bins at df={self.df} Hz"
            )
        return m


def _as_samples(epoch) -> np.ndarray:
    x = getattr(epoch, "samples", epoch)
    return np.asarray(x, dtype=np.float64)


def welch_psd(epoch, config: WelchConfig = WelchConfig(), fs: float = DEFAULT_FS) -> Psd:
    """One-sided Welch PSD with density scaling.

    Each segment is mean-removed and tapered; periodograms are scaled by
    ``1 / (fs * sum(w**2))`` so that ``sum(density) * df`` approximates the
    signal variance, then averaged. Interior bins (all but DC and, for even
    segment lengths, Nyquist) are doubled.
    """
    x = _as_samples(epoch)
    n = x.shape[-1]
    nseg_len = config.segment_len
    if nseg_len > n:
        raise ConfigError(f"segment_len {nseg_len} exceeds epoch length {n}")
    step = config.step
    starts = np.arange(0, n - nseg_len + 1, step)
    segs = x[starts[:, None] + np.arange(nseg_len)[None, :]]
    segs = segs - segs.mean(axis=1, keepdims=True)
    w = _WINDOWS[config.window](nseg_len)
    spec = np.abs(np.fft.rfft(segs * w, axis=1)) ** 2
    spec /= fs * np.sum(w * w)
    if nseg_len % 2 == 0:
        spec[:, 1:-1] *= 2
    else:
        spec[:, 1:] *= 2
    density = spec.mean(axis=0)
    freqs = np.fft.rfftfreq(nseg_len, d=1.0 / fs)
    return Psd(freqs, density)


def band_power(psd: Psd, band: BandDef) -> float:
    """Absolute power in ``band`` (µV²): sum of density times bin width."""
    return float(np.sum(psd.density[psd.mask(band)]) * psd.df)


def relative_power(psd: Psd, band: BandDef, total: BandDef = TOTAL_BAND) -> float:
    """``band_power(band) / band_power(total)``; 0 when the total is 0."""
    num = band_power(psd, band)
    den = band_power(psd, total)
    return num / den if den > 0 else 0.0


class PeakResult(NamedTuple):
    freq: float
    degenerate: bool


def peak_frequency(psd: Psd, band: BandDef) -> PeakResult:
    """Frequency of maximum density within ``band`` (lowest bin on ties).

    An all-zero band returns the band's lower edge with ``degenerate=True``.
    """
    m = psd.mask(band)
    d = psd.density[m]
    if not np.any(d > 0):
        return PeakResult(float(band.lo), True)
    return PeakResult(float(psd.freqs[m][int(np.argmax(d))]), False)


def spectral_entropy(psd: Psd, band: BandDef = TOTAL_BAND) -> float:
    """Normalized Shannon entropy of the density over ``band`` bins, in [0, 1]."""
    d = psd.density[psd.mask(band)]
    total = d.sum()
    if d.size < 2 or total <= 0:
        return 0.0
    p = d / total
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)) / math.log(d.size))


def write_psd_csv(psd: Psd, path: str | os.PathLike) -> None:
    from .dataio import atomic_write_text

    lines = ["freq_hz,density"] + [f"{f!r},{d!r}" for f, d in zip(psd.freqs.tolist(), psd.density.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")
