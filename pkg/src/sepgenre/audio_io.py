"""WAV decoding/encoding, resampling, downmixing and segment selection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    InsufficientLengthError,
    TruncationError,
    UnsupportedError,
    WriteError,
)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

RESAMPLE_TAPS = 64
RESAMPLE_BETA = 8.0


@dataclass(frozen=True, eq=False)
class AudioClip:
    """A sampled waveform.

    ``samples`` has shape ``(channels, length)`` and is stored as float64.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[np.newaxis, :]
        if s.ndim != 2:
            raise ConfigError(f"samples must be 1-D or 2-D, got shape {s.shape}")
        if s.shape[0] not in (1, 2):
            raise ConfigError(f"channels must be 1 or 2, got {s.shape[0]}")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    def crop(self, segment: "Segment") -> "AudioClip":
        end = segment.start_sample + segment.length_samples
        if end > self.length:
            raise InsufficientLengthError(
                f"segment ends at {end} but clip has {self.length} samples"
            )
        return AudioClip(self.samples[:, segment.start_sample:end], self.sample_rate)


@dataclass(frozen=True)
class Segment:
    start_sample: int
    length_samples: int

    def __post_init__(self):
        if self.start_sample < 0:
            raise ConfigError("start_sample must be nonnegative")
        if self.length_samples <= 0:
            raise ConfigError("length_samples must be positive")


# --------------------------------------------------------------------------
# WAV container


def _read_chunks(data: bytes, path) -> dict[bytes, bytes]:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            if cid == b"data":
                raise TruncationError(
                    f"{path}: data chunk declares {size} bytes, only {len(body)} present"
                )
            raise FormatError(f"{path}: chunk {cid!r} runs past end of file")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def decode_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file into an :class:`AudioClip`."""
    path = Path(path)
    data = path.read_bytes()
    chunks = _read_chunks(data, path)
    if b"fmt " not in chunks:
        raise FormatError(f"{path}: missing fmt chunk")
    if b"data" not in chunks:
        raise FormatError(f"{path}: missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise FormatError(f"{path}: fmt chunk too short")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise FormatError(f"{path}: extensible fmt chunk too short")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if channels not in (1, 2):
        raise UnsupportedError(f"{path}: {channels} channels not supported")
    if rate == 0:
        raise FormatError(f"{path}: sample rate is zero")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), None
    else:
        raise UnsupportedError(f"{path}: format tag {tag:#x} with {bits} bits not supported")
    if block_align != channels * dtype.itemsize:
        raise FormatError(f"{path}: inconsistent block_align {block_align}")

    body = chunks[b"data"]
    if len(body) % block_align:
        raise TruncationError(f"{path}: data ends mid-frame")
    frames = np.frombuffer(body, dtype=dtype).reshape(-1, channels).T.astype(np.float64)
    if scale is not None:
        frames *= scale
    return AudioClip(frames, rate)


def encode_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as a little-endian IEEE float32 WAV file."""
    pcm = np.ascontiguousarray(clip.samples.T, dtype="<f4").tobytes()
    n_frames = clip.length
    block_align = 4 * clip.channels
    fmt = struct.pack(
        "<HHIIHHH",
        WAVE_FORMAT_IEEE_FLOAT,
        clip.channels,
        clip.sample_rate,
        clip.sample_rate * block_align,
        block_align,
        32,
        0,
    )
    fact = struct.pack("<I", n_frames)
    body = b"WAVE"
    body += b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"fact" + struct.pack("<I", len(fact)) + fact
    body += b"data" + struct.pack("<I", len(pcm)) + pcm
    if len(pcm) & 1:
        body += b"\x00"
    try:
        Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def wav_duration(path) -> float:
    """Duration in seconds computed from the header's byte rate and data size."""
    data = Path(path).read_bytes()
    chunks = _read_chunks(data, path)
    (byte_rate,) = struct.unpack_from("<I", chunks[b"fmt "], 8)
    return len(chunks[b"data"]) / byte_rate


# --------------------------------------------------------------------------
# Signal operations


def resampled_length(n: int, source_rate: int, target_rate: int) -> int:
    """round(n * target / source) with halves rounded up, in exact integers."""
    return (2 * n * target_rate + source_rate) // (2 * source_rate)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with a 64-tap Kaiser-windowed sinc kernel."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    src = clip.sample_rate
    n_in = clip.length
    n_out = resampled_length(n_in, src, target_rate)
    if n_in == 0 or n_out == 0:
        return AudioClip(np.zeros((clip.channels, n_out)), target_rate)

    ratio = target_rate / src
    cutoff = min(1.0, ratio)
    half = RESAMPLE_TAPS // 2
    offsets = np.arange(-half + 1, half + 1)
    norm = np.i0(RESAMPLE_BETA)
    out = np.empty((clip.channels, n_out))
    x = clip.samples
    chunk = 8192
    for start in range(0, n_out, chunk):
        m = np.arange(start, min(start + chunk, n_out))
        # exact rational input position m * src / target
        t = m * src / target_rate
        base = (m * src) // target_rate
        idx = base[:, None] + offsets[None, :]
        delta = idx - t[:, None]
        w = np.sqrt(np.clip(1.0 - (delta / half) ** 2, 0.0, None))
        kernel = cutoff * np.sinc(cutoff * delta) * np.i0(RESAMPLE_BETA * w) / norm
        valid = (idx >= 0) & (idx < n_in)
        kernel = np.where(valid, kernel, 0.0)
        gathered = x[:, np.clip(idx, 0, n_in - 1)]
        out[:, m] = np.einsum("cmk,mk->cm", gathered, kernel)
    return AudioClip(out, target_rate)


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=0), clip.sample_rate)


def select_segment(clip: AudioClip, length_samples: int) -> Segment:
    """Pick the highest-RMS window among starts on a half-second grid.

    Ties go to the earliest start. Each window's energy is summed directly
    rather than through a running cumulative sum so that windows with equal
    content compare exactly equal.
    """
    length_samples = int(length_samples)
    if length_samples <= 0:
        raise ConfigError("length_samples must be positive")
    if clip.length < length_samples:
        raise InsufficientLengthError(
            f"clip has {clip.length} samples, segment needs {length_samples}"
        )
    x = clip.samples
    best_start, best_energy = 0, -1.0
    i = 0
    while True:
        start = (i * clip.sample_rate) // 2
        if start + length_samples > clip.length:
            break
        w = x[:, start:start + length_samples]
        energy = float(np.sum(w * w))
        if energy > best_energy:
            best_start, best_energy = start, energy
        i += 1
    return Segment(best_start, length_samples)
