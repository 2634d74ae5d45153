import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigilance.errors import BandResolutionError, ConfigError
from vigilance.spectral import (
    CANONICAL_BANDS,
    DELTA,
    GAMMA,
    THETA,
    TOTAL_BAND,
    BandDef,
    Psd,
    WelchConfig,
    band_power,
    peak_frequency,
    relative_power,
    spectral_entropy,
    welch_psd,
    write_psd_csv,
)

FS = 500.0
T = np.arange(5000) / FS


def _sine(f, amp=1.0):
    return amp * np.sin(2 * np.pi * f * T)


def _flat_psd(level=1.0):
    freqs = np.arange(0, 250.5, 0.5)
    return Psd(freqs, np.full(freqs.shape, level))


class TestWelch:
    def test_grid(self):
        psd = welch_psd(np.zeros(5000))
        assert psd.df == 0.5
        assert psd.freqs[0] == 0 and psd.freqs[-1] == 250
        assert np.all(psd.density == 0)

    @pytest.mark.parametrize("window", ["hann", "hamming", "boxcar"])
    def test_matches_scipy(self, window):
        signal = pytest.importorskip("scipy.signal")
        x = np.random.default_rng(0).normal(size=5000) * 7 + 3
        psd = welch_psd(x, WelchConfig(window=window))
        f, p = signal.welch(x, fs=FS, window=window, nperseg=1000, noverlap=500,
                            detrend="constant", scaling="density")
        np.testing.assert_allclose(psd.freqs, f)
        np.testing.assert_allclose(psd.density, p, rtol=1e-10, atol=1e-14)

    def test_white_noise_parseval(self):
        x = np.random.default_rng(1).normal(size=5000)
        psd = welch_psd(x)
        assert abs(psd.density.sum() * psd.df - x.var()) / x.var() < 0.02

    def test_sine_peak_and_power(self):
        psd = welch_psd(_sine(10.0))
        assert abs(psd.freqs[np.argmax(psd.density)] - 10.0) <= psd.df
        # single full-length periodogram gives 0.5 for a unit sine
        full = np.abs(np.fft.rfft(_sine(10.0))) ** 2 * 2 / (FS * 5000)
        assert abs(full.sum() * (FS / 5000) - 0.5) < 1e-9
        assert abs(psd.density.sum() * psd.df - 0.5) < 0.01

    def test_segment_too_long(self):
        with pytest.raises(ConfigError):
            welch_psd(np.zeros(500))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            WelchConfig(overlap=1.0)
        with pytest.raises(ConfigError):
            WelchConfig(window="kaiser")


class TestBandPower:
    def test_zero(self):
        assert band_power(welch_psd(np.zeros(5000)), DELTA) == 0

    def test_flat_rectangle(self):
        assert band_power(_flat_psd(), DELTA) == pytest.approx(3.5, abs=0.5)

    def test_sine_in_delta(self):
        psd = welch_psd(_sine(2.0))
        assert band_power(psd, DELTA) == pytest.approx(psd.density.sum() * psd.df, rel=0.01)

    def test_empty_band(self):
        with pytest.raises(BandResolutionError, match="narrow"):
            band_power(_flat_psd(), BandDef("narrow", 1.1, 1.2))

    def test_band_beyond_grid(self):
        with pytest.raises(ConfigError):
            band_power(_flat_psd(), BandDef("ultra", 200, 400))

    def test_half_open_edges(self):
        psd = _flat_psd()
        total = sum(band_power(psd, b) for b in CANONICAL_BANDS)
        assert total == pytest.approx(band_power(psd, TOTAL_BAND), rel=1e-12)


class TestRelativePower:
    def test_zero_convention(self):
        assert relative_power(welch_psd(np.zeros(5000)), DELTA) == 0.0

    def test_flat_ratio(self):
        assert relative_power(_flat_psd(), DELTA) == pytest.approx(3.5 / 99.5, abs=1e-12)

    def test_sws_epoch(self, small_dataset):
        ep = next(e for e in small_dataset if e.label == 1)
        assert relative_power(welch_psd(ep), DELTA) > 0.5


class TestPeakFrequency:
    def test_theta_sine(self):
        psd = welch_psd(_sine(6.0))
        dft = np.fft.rfftfreq(5000, 1 / FS)[np.argmax(np.abs(np.fft.rfft(_sine(6.0))))]
        assert abs(peak_frequency(psd, THETA).freq - dft) <= psd.df

    def test_flat_tie_lowest(self):
        res = peak_frequency(_flat_psd(), THETA)
        assert res == (4.0, False)

    def test_zero_degenerate(self):
        res = peak_frequency(welch_psd(np.zeros(5000)), GAMMA)
        assert res.freq == 30.0 and res.degenerate


class TestEntropy:
    def test_single_bin(self):
        psd = _flat_psd(0.0)
        d = psd.density.copy()
        d[20] = 5.0
        assert spectral_entropy(Psd(psd.freqs, d)) == 0.0

    def test_flat(self):
        assert spectral_entropy(_flat_psd()) == pytest.approx(1.0, abs=1e-12)

    def test_zero_convention(self):
        assert spectral_entropy(_flat_psd(0.0)) == 0.0

    def test_white_noise(self):
        psd = welch_psd(np.random.default_rng(2).normal(size=5000))
        assert spectral_entropy(psd) > 0.9


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
@settings(max_examples=30, deadline=None)
def test_scaling_invariance(seed, c):
    x = np.random.default_rng(seed).normal(size=5000) + _sine(7.0, 3.0)
    a, b = welch_psd(x), welch_psd(c * x)
    for band in CANONICAL_BANDS:
        assert relative_power(b, band) == pytest.approx(relative_power(a, band), abs=1e-12)
        assert peak_frequency(b, band) == peak_frequency(a, band)
        assert spectral_entropy(b, band) == pytest.approx(spectral_entropy(a, band), abs=1e-12)
        assert band_power(b, band) == pytest.approx(c * c * band_power(a, band), rel=1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_relative_powers_sum_at_most_one(seed):
    psd = welch_psd(np.random.default_rng(seed).standard_cauchy(size=5000))
    assert sum(relative_power(psd, b) for b in CANONICAL_BANDS) <= 1 + 1e-9


def test_psd_csv(tmp_path):
    psd = welch_psd(_sine(3.0))
    write_psd_csv(psd, tmp_path / "psd.csv")
    data = np.loadtxt(tmp_path / "psd.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], psd.freqs) and np.array_equal(data[:, 1], psd.density)
