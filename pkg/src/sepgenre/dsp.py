"""Short-time Fourier analysis/synthesis and mel spectrograms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, EmptyInputError

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
DB_FLOOR = -80.0
AMIN = 1e-10


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ConfigError(f"FFT size must be a power of two, got {n}")


@lru_cache(maxsize=16)
def _fft_plan(n: int):
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    twiddle = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    return rev, twiddle


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    _check_pow2(n)
    rev, twiddle = _fft_plan(n)
    lead = x.shape[:-1]
    y = x[..., rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = twiddle[:: n // size]
        y = y.reshape(lead + (n // size, size))
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate((even + odd, even - odd), axis=-1)
        size *= 2
    return y.reshape(lead + (n,))


def ifft(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def rfft(x: np.ndarray) -> np.ndarray:
    n = np.shape(x)[-1]
    return fft(x)[..., : n // 2 + 1]


def irfft(spec: np.ndarray, n: int) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.complex128)
    mirror = np.conj(spec[..., n // 2 - 1:0:-1])
    return ifft(np.concatenate((spec, mirror), axis=-1)).real


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftMatrix:
    """Complex spectrogram with shape ``(1 + n_fft // 2, frames)``.

    ``length`` is the analysed signal's length, used to trim the inverse.
    """

    bins: np.ndarray
    n_fft: int
    hop: int
    length: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape

    def with_bins(self, bins: np.ndarray) -> "StftMatrix":
        return StftMatrix(bins, self.n_fft, self.hop, self.length)


def stft(signal, n_fft: int = N_FFT, hop: int = HOP) -> StftMatrix:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("stft expects a mono 1-D signal")
    if x.size == 0:
        raise EmptyInputError("cannot analyse an empty signal")
    _check_pow2(n_fft)
    if not 0 < hop <= n_fft:
        raise ConfigError(f"hop must be in (0, n_fft], got {hop}")
    pad = n_fft // 2
    mode = "reflect" if x.size > 1 else "edge"
    padded = np.pad(x, pad, mode=mode)
    n_frames = 1 + x.size // hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    spec = rfft(frames * hann(n_fft))
    return StftMatrix(np.ascontiguousarray(spec.T), n_fft, hop, x.size)


def is_cola(n_fft: int, hop: int) -> bool:
    """True if squared Hann windows at this hop overlap-add to a constant."""
    if hop <= 0 or n_fft % hop:
        return False
    w2 = hann(n_fft) ** 2
    total = w2.reshape(n_fft // hop, hop).sum(axis=0)
    return bool(np.allclose(total, total[0], rtol=1e-10, atol=0.0))


def istft(m: StftMatrix) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_fft, hop = m.n_fft, m.hop
    if not is_cola(n_fft, hop):
        raise ConfigError(f"hop {hop} is not COLA for a Hann window of {n_fft}")
    n_frames = m.bins.shape[1]
    win = hann(n_fft)
    frames = irfft(m.bins.T, n_fft) * win
    r = n_fft // hop
    blocks = np.zeros((n_frames + r - 1, hop))
    wsum = np.zeros_like(blocks)
    frames = frames.reshape(n_frames, r, hop)
    w2 = (win ** 2).reshape(r, hop)
    for k in range(r):
        blocks[k:k + n_frames] += frames[:, k, :]
        wsum[k:k + n_frames] += w2[k]
    out = blocks.ravel()
    norm = wsum.ravel()
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    start = n_fft // 2
    out = out[start:start + m.length]
    if out.size < m.length:
        out = np.pad(out, (0, m.length - out.size))
    return out


# --------------------------------------------------------------------------
# Mel scale (Slaney)

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    f_min: float
    f_max: float
    centers: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@lru_cache(maxsize=8)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """Area-normalised triangular filters on the Slaney mel scale."""
    if f_max is None:
        f_max = sample_rate / 2
    if n_mels < 1:
        raise ConfigError("n_mels must be at least 1")
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        raise ConfigError(
            f"{empty.size} mel bands contain no FFT bins; use fewer mels or a larger n_fft"
        )
    weights.flags.writeable = False
    centers = edges[1:-1].copy()
    centers.flags.writeable = False
    return MelFilterbank(weights, float(f_min), float(f_max), centers)


def mel_power(signal, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, hop: int = HOP,
              n_mels: int = N_MELS) -> np.ndarray:
    spec = stft(signal, n_fft, hop).bins
    power = spec.real ** 2 + spec.imag ** 2
    return mel_filterbank(n_mels, n_fft, sample_rate).weights @ power


def mel_spectrogram(signal, sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                    hop: int = HOP, n_mels: int = N_MELS) -> np.ndarray:
    """Mel spectrogram in dB relative to its own maximum, rescaled to [0, 1].

    The dB range is clipped to [-80, 0] and mapped by ``(dB + 80) / 80``.
    A segment whose mel power never rises above the 1e-10 floor is treated as
    silence and maps to all zeros.
    """
    mel = mel_power(signal, sample_rate, n_fft, hop, n_mels)
    peak = float(mel.max())
    if peak <= AMIN:
        return np.zeros_like(mel)
    db = 10.0 * np.log10(np.maximum(mel, AMIN) / peak)
    db = np.clip(db, DB_FLOOR, 0.0)
    return (db - DB_FLOOR) / -DB_FLOOR
