import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sepgenre import dsp
from sepgenre.errors import ConfigError, EmptyInputError
from sepgenre.features import CANONICAL_SEGMENT


@pytest.mark.parametrize("n", [1, 2, 8, 64, 2048])
def test_fft_matches_numpy(n, rng):
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    np.testing.assert_allclose(dsp.fft(x), np.fft.fft(x), atol=1e-12 * n)
    r = rng.normal(size=n)
    np.testing.assert_allclose(dsp.rfft(r), np.fft.rfft(r), atol=1e-12 * n)
    np.testing.assert_allclose(dsp.irfft(np.fft.rfft(r), n), r, atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        dsp.fft(np.zeros(6))


def test_hann_is_periodic():
    w = dsp.hann(8)
    np.testing.assert_allclose(w, [0, 0.1464466094, 0.5, 0.8535533906, 1, 0.8535533906,
                                   0.5, 0.1464466094], atol=1e-10)


def test_canonical_frame_count():
    m = dsp.stft(np.zeros(CANONICAL_SEGMENT))
    assert m.shape == (1025, 458)


@pytest.mark.parametrize("n", [1, 511, 512, 513, 5000])
def test_frame_count_rule(n):
    assert dsp.stft(np.ones(n), 2048, 512).shape[1] == 1 + n // 512


def test_zero_signal_gives_zero_matrix():
    m = dsp.stft(np.zeros(3000))
    assert not np.any(m.bins)
    assert not np.any(dsp.istft(m))


def test_empty_signal():
    with pytest.raises(EmptyInputError):
        dsp.stft(np.zeros(0))
    with pytest.raises(EmptyInputError):
        dsp.mel_spectrogram(np.zeros(0))


def test_sine_peak_bin():
    sr = 22050
    x = np.sin(2 * np.pi * 1000.0 * np.arange(sr) / sr)
    mag = np.abs(dsp.stft(x).bins)
    # interior frames; the reflect-padded edge frames see a phase-flipped copy
    assert np.all(mag[:, 2:-2].argmax(axis=0) == round(1000 * 2048 / 22050))


def test_cola():
    assert dsp.is_cola(2048, 512)
    assert not dsp.is_cola(2048, 700)
    m = dsp.stft(np.ones(4000), 2048, 512)
    bad = dsp.StftMatrix(m.bins, 2048, 700, 4000)
    with pytest.raises(ConfigError):
        dsp.istft(bad)


def test_round_trip_snr(rng):
    for n in (1, 100, 2048, 22050, 44101):
        x = rng.normal(size=n)
        y = dsp.istft(dsp.stft(x))
        assert y.shape == x.shape
        err = np.sum((x - y) ** 2)
        assert err == 0 or 10 * np.log10(np.sum(x ** 2) / err) > 100


def test_round_trip_canonical_length(rng):
    x = rng.normal(size=CANONICAL_SEGMENT)
    y = dsp.istft(dsp.stft(x))
    assert 10 * np.log10(np.sum(x ** 2) / np.sum((x - y) ** 2)) >= 60


def test_round_trip_thousand_signals():
    rng = np.random.default_rng(1000)
    worst = np.inf
    for _ in range(1000):
        x = rng.normal(size=int(rng.integers(1, 6000)))
        err = np.sum((x - dsp.istft(dsp.stft(x))) ** 2)
        if err:
            worst = min(worst, 10 * np.log10(np.sum(x ** 2) / err))
    assert worst >= 60


# -- mel ------------------------------------------------------------------------


def test_slaney_mel_scale_anchor_points():
    assert float(dsp.hz_to_mel(1000.0)) == pytest.approx(15.0, abs=1e-12)
    assert float(dsp.hz_to_mel(6400.0)) == pytest.approx(42.0, abs=1e-12)
    assert float(dsp.hz_to_mel(200.0)) == pytest.approx(3.0, abs=1e-12)
    f = np.linspace(0, 11025, 97)
    np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f, atol=1e-9)


def triangle_oracle(n_mels, n_fft, sr):
    """Per-element loop construction of area-normalised Slaney filters."""
    def h2m(f):
        return f / (200 / 3) if f < 1000 else 15 + np.log(f / 1000) / (np.log(6.4) / 27)

    def m2h(m):
        return m * 200 / 3 if m < 15 else 1000 * np.exp((m - 15) * np.log(6.4) / 27)

    top = h2m(sr / 2)
    edges = [m2h(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    freqs = [k * sr / n_fft for k in range(n_fft // 2 + 1)]
    w = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, c, hi = edges[i], edges[i + 1], edges[i + 2]
        for k, f in enumerate(freqs):
            if lo < f <= c:
                v = (f - lo) / (c - lo)
            elif c < f < hi:
                v = (hi - f) / (hi - c)
            else:
                v = 0.0
            w[i, k] = v * 2 / (hi - lo)
    return w


def test_filterbank_matches_loop_oracle():
    fb = dsp.mel_filterbank(128, 2048, 22050, 0.0, 11025.0)
    assert fb.weights.shape == (128, 1025)
    np.testing.assert_allclose(fb.weights, triangle_oracle(128, 2048, 22050), atol=1e-12)


def test_filterbank_invariants():
    fb = dsp.mel_filterbank()
    w = fb.weights
    assert np.all(w >= 0)
    assert np.all((w > 0).any(axis=1))
    first = (w > 0).argmax(axis=1)
    assert np.all(np.diff(first) >= 0)
    assert np.all(np.diff(fb.centers) > 0)


def test_filterbank_errors():
    with pytest.raises(ConfigError):
        dsp.mel_filterbank(128, 2048, 22050, 5000.0, 4000.0)
    with pytest.raises(ConfigError):
        dsp.mel_filterbank(128, 2048, 22050, 0.0, 20000.0)
    with pytest.raises(ConfigError):
        dsp.mel_filterbank(512, 256, 22050)  # bands narrower than a bin


def test_mel_spectrogram_shape_and_range(rng):
    x = rng.normal(size=CANONICAL_SEGMENT) * 0.1
    s = dsp.mel_spectrogram(x)
    assert s.shape == (128, 458)
    assert s.min() >= 0.0 and s.max() == 1.0


def test_silence_maps_to_zero():
    s = dsp.mel_spectrogram(np.zeros(10000))
    assert s.shape == (128, 1 + 10000 // 512)
    assert not np.any(s)


def test_db_scaling_formula(rng):
    x = rng.normal(size=8192)
    mel = dsp.mel_power(x)
    db = np.clip(10 * np.log10(np.maximum(mel, 1e-10) / mel.max()), -80, 0)
    np.testing.assert_allclose(dsp.mel_spectrogram(x), (db + 80) / 80, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 4000),
                  elements=st.floats(-1, 1, allow_nan=False, width=64)))
def test_polarity_invariance(x):
    np.testing.assert_array_equal(dsp.mel_spectrogram(x), dsp.mel_spectrogram(-x))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6000), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = dsp.istft(dsp.stft(x))
    np.testing.assert_allclose(y, x, atol=1e-10)
