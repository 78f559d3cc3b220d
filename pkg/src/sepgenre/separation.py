"""Four-stem decomposition: mask-based built-in separator and external stem ingestion."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from . import dsp
from .audio_io import AudioClip, decode_wav, encode_wav, resample
from .errors import ConfigError, IncompatibleStemsError, MissingStemError, ShapeError

STEM_NAMES = ("bass", "drums", "other", "vocals")
MIX_FILE = "mix.wav"

HPSS_KERNEL = 17
HPSS_POWER = 2.0
HPSS_EPS = 1e-10
BASS_CUTOFF_HZ = 250.0
DEFECT_WARN_THRESHOLD = 0.05


class AdditivityWarning(UserWarning):
    """External stems do not sum to the mix closely enough."""


@dataclass(frozen=True)
class StemSet:
    bass: AudioClip
    drums: AudioClip
    other: AudioClip
    vocals: AudioClip
    additivity_defect: float | None = None

    def __post_init__(self):
        ref = self.bass
        for name in STEM_NAMES[1:]:
            clip = getattr(self, name)
            if (clip.length, clip.sample_rate, clip.channels) != (
                ref.length, ref.sample_rate, ref.channels,
            ):
                raise IncompatibleStemsError(f"stem {name!r} does not match bass stem layout")

    def __iter__(self):
        return iter(self.clips())

    def clips(self) -> list[AudioClip]:
        return [getattr(self, n) for n in STEM_NAMES]

    def items(self):
        return [(n, getattr(self, n)) for n in STEM_NAMES]

    @property
    def sample_rate(self) -> int:
        return self.bass.sample_rate

    def total(self, names=STEM_NAMES) -> AudioClip:
        """Sum of the named stems, added left to right."""
        acc = getattr(self, names[0]).samples.copy()
        for n in names[1:]:
            acc = acc + getattr(self, n).samples
        return AudioClip(acc, self.sample_rate)

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, clip in self.items():
            encode_wav(clip, out_dir / f"{name}.wav")


@dataclass(frozen=True)
class MaskSet:
    """Soft masks with shape ``(4, channels, bins, frames)`` in stem order."""

    masks: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=np.float64)
        if m.ndim == 3:
            m = m[:, np.newaxis]
        if m.ndim != 4 or m.shape[0] != len(STEM_NAMES):
            raise ShapeError(f"expected masks of shape (4, channels, bins, frames), got {m.shape}")
        if m.min() < 0.0 or m.max() > 1.0:
            raise ConfigError("mask entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, rtol=0.0, atol=1e-12):
            raise ConfigError("masks must sum to 1 at every time-frequency bin")
        object.__setattr__(self, "masks", m)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.masks[STEM_NAMES.index(name)]

    def partition_sum(self) -> np.ndarray:
        return self.masks.sum(axis=0)


def apply_masks(mix_stft: list[dsp.StftMatrix], masks: MaskSet, sample_rate: int) -> StemSet:
    """Reconstruct each stem as the inverse STFT of its mask times the mix STFT."""
    if len(mix_stft) != masks.masks.shape[1]:
        raise ShapeError(
            f"{len(mix_stft)} channel STFTs but masks cover {masks.masks.shape[1]} channels"
        )
    for ch, m in enumerate(mix_stft):
        if m.shape != masks.masks.shape[2:]:
            raise ShapeError(f"channel {ch}: STFT shape {m.shape} != mask shape {masks.masks.shape[2:]}")
    stems = []
    for k in range(len(STEM_NAMES)):
        chans = [dsp.istft(m.with_bins(masks.masks[k, ch] * m.bins)) for ch, m in enumerate(mix_stft)]
        stems.append(AudioClip(np.stack(chans), sample_rate))
    return StemSet(*stems)


def hpss_masks(mix_stft: list[dsp.StftMatrix], sample_rate: int) -> MaskSet:
    n_fft = mix_stft[0].n_fft
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    low = (freqs < BASS_CUTOFF_HZ)[:, None]
    out = []
    for m in mix_stft:
        mag = np.abs(m.bins)
        harm = median_filter(mag, size=(1, HPSS_KERNEL), mode="reflect")
        perc = median_filter(mag, size=(HPSS_KERNEL, 1), mode="reflect")
        h2 = harm ** HPSS_POWER
        p2 = perc ** HPSS_POWER
        m_h = h2 / (h2 + p2 + HPSS_EPS)
        m_p = 1.0 - m_h
        zero = np.zeros_like(m_h)
        out.append(np.stack([np.where(low, m_h, 0.0), m_p, np.where(low, 0.0, m_h), zero]))
    return MaskSet(np.stack(out, axis=1))


def separate_hpss3(mix: AudioClip) -> StemSet:
    """Median-filter harmonic/percussive split, with the harmonic part cut at 250 Hz.

    drums take the percussive mask; the harmonic mask goes to bass below
    250 Hz and to other above it; vocals are silent.
    """
    if mix.length == 0:
        raise ConfigError("cannot separate an empty clip")
    specs = [dsp.stft(ch) for ch in mix.samples]
    return apply_masks(specs, hpss_masks(specs, mix.sample_rate), mix.sample_rate)


def additivity_defect(mix: AudioClip, stems: StemSet) -> float:
    return float(np.max(np.abs(mix.samples - stems.total().samples), initial=0.0))


def _fit_length(clip: AudioClip, n: int, name: str) -> AudioClip:
    if abs(clip.length - n) > 1:
        raise IncompatibleStemsError(
            f"stem {name!r} has {clip.length} samples, mix has {n}"
        )
    if clip.length == n:
        return clip
    if clip.length < n:
        return AudioClip(np.pad(clip.samples, ((0, 0), (0, n - clip.length))), clip.sample_rate)
    return AudioClip(clip.samples[:, :n], clip.sample_rate)


def ingest_external_stems(song_dir, mix: AudioClip | None = None) -> StemSet:
    """Load ``bass/drums/other/vocals.wav`` stems that sit beside ``mix.wav``.

    Stems are resampled to the mix rate if needed and zero-padded by at most
    one sample. The additivity defect ``max|mix - sum(stems)|`` is recorded
    on the result, and an :class:`AdditivityWarning` is issued above 0.05.
    """
    song_dir = Path(song_dir)
    if mix is None:
        mix_path = song_dir / MIX_FILE
        if not mix_path.is_file():
            raise MissingStemError("mix", str(song_dir))
        mix = decode_wav(mix_path)
    for name in STEM_NAMES:
        if not (song_dir / f"{name}.wav").is_file():
            raise MissingStemError(name, str(song_dir))
    clips = []
    for name in STEM_NAMES:
        clip = decode_wav(song_dir / f"{name}.wav")
        if clip.sample_rate != mix.sample_rate:
            clip = resample(clip, mix.sample_rate)
        if clip.sample_rate != mix.sample_rate:
            raise IncompatibleStemsError(f"stem {name!r} rate {clip.sample_rate} != {mix.sample_rate}")
        if clip.channels != mix.channels:
            raise IncompatibleStemsError(
                f"stem {name!r} has {clip.channels} channels, mix has {mix.channels}"
            )
        clips.append(_fit_length(clip, mix.length, name))
    stems = StemSet(*clips)
    defect = additivity_defect(mix, stems)
    if defect > DEFECT_WARN_THRESHOLD:
        warnings.warn(
            f"{song_dir}: stems differ from mix by up to {defect:.4f}",
            AdditivityWarning,
            stacklevel=2,
        )
    return StemSet(*clips, additivity_defect=defect)


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    ref = np.asarray(reference, dtype=np.float64)
    err = ref - np.asarray(estimate, dtype=np.float64)
    num = float(np.sum(ref * ref))
    den = float(np.sum(err * err))
    if den == 0.0:
        return float("inf")
    if num == 0.0:
        return float("-inf")
    return 10.0 * np.log10(num / den)
