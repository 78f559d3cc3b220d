"""Per-song spectrogram stacks, dataset manifests and the ``.ssgt`` tensor file."""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import AudioClip, Segment, decode_wav, resample, select_segment, to_mono
from .errors import ConfigError, FormatError, MissingStemError, SepGenreError, TruncationError
from .separation import StemSet, ingest_external_stems, separate_hpss3

CANONICAL_SEGMENT = 233_984  # 1 + 233984 // 512 == 458 frames
N_FRAMES = 1 + CANONICAL_SEGMENT // dsp.HOP

VARIANT_CHANNELS = {
    "stems3": ("bass", "drums", "other"),
    "mix_full": ("mix",),
    "mix_novox": ("mix_novox",),
}
VARIANTS = tuple(VARIANT_CHANNELS)
SEPARATORS = ("builtin", "external")

MAGIC = b"SSGT"
VERSION = 1
DTYPE_F32 = 1


class FeaturizeError(SepGenreError):
    """One or more songs failed; ``errors`` holds ``(song_id, exception)`` pairs."""

    def __init__(self, errors: list[tuple[str, Exception]]):
        self.errors = errors
        lines = [f"{sid}: {type(e).__name__}: {e}" for sid, e in errors]
        super().__init__(f"{len(errors)} song(s) failed:\n  " + "\n  ".join(lines))


# --------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    song_id: str
    genre: str
    mix_path: Path
    stems_dir: Path | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    genres: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.song_id in seen:
                raise ConfigError(f"duplicate song_id {e.song_id!r}")
            seen.add(e.song_id)
        if not self.genres:
            self.genres = list(dict.fromkeys(e.genre for e in self.entries))
        unknown = {e.genre for e in self.entries} - set(self.genres)
        if unknown:
            raise ConfigError(f"genres {sorted(unknown)} not in genre list")
        if len(set(self.genres)) != len(self.genres):
            raise ConfigError("genre list has duplicates")

    def __len__(self):
        return len(self.entries)

    def labels(self) -> np.ndarray:
        index = {g: i for i, g in enumerate(self.genres)}
        return np.array([index[e.genre] for e in self.entries], dtype=np.int64)

    def subset(self, genres: list[str]) -> "DatasetManifest":
        keep = [e for e in self.entries if e.genre in genres]
        return DatasetManifest(keep, list(genres))


MANIFEST_HEADER = ["song_id", "genre", "mix_path", "stems_dir"]


def read_manifest(path) -> DatasetManifest:
    """Read a manifest CSV; relative paths resolve against the CSV's directory."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        entries = []
        for row in reader:
            stems = row["stems_dir"].strip()
            entries.append(ManifestEntry(
                row["song_id"],
                row["genre"],
                base / row["mix_path"],
                base / stems if stems else None,
            ))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow([e.song_id, e.genre, rel(e.mix_path),
                             rel(e.stems_dir) if e.stems_dir else ""])


# --------------------------------------------------------------------------
# Feature tensor


@dataclass
class FeatureTensor:
    data: np.ndarray  # (N, n_mels, frames, C) float32
    labels: np.ndarray
    class_names: list[str]
    channel_names: list[str]
    segments: list[Segment] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 4:
            raise ConfigError(f"feature data must be rank 4, got shape {self.data.shape}")
        n, c = self.data.shape[0], self.data.shape[3]
        if self.labels.shape != (n,):
            raise ConfigError(f"{n} examples but {self.labels.size} labels")
        if len(self.channel_names) != c:
            raise ConfigError(f"{c} channels but {len(self.channel_names)} channel names")
        if c == 3 and list(self.channel_names) != list(VARIANT_CHANNELS["stems3"]):
            raise ConfigError("3-channel tensors must be ordered bass, drums, other")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ConfigError("labels out of range for class names")
        if self.data.size and not (self.data.min() >= 0.0 and self.data.max() <= 1.0):
            raise ConfigError("feature values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
            and np.array_equal(self.labels, other.labels)
            and list(self.class_names) == list(other.class_names)
            and list(self.channel_names) == list(other.channel_names)
        )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ConfigError("name too long for tensor header")
    return struct.pack("<H", len(raw)) + raw


def save_tensor(t: FeatureTensor, path) -> None:
    """Write the little-endian ``SSGT`` container (version 1, float32)."""
    n, h, w, c = t.data.shape
    out = bytearray(MAGIC)
    out += struct.pack("<HBB", VERSION, DTYPE_F32, 4)
    out += struct.pack("<4I", n, h, w, c)
    out += struct.pack("<H", len(t.class_names))
    for name in t.class_names:
        out += _pack_str(name)
    out += struct.pack("<B", c)
    for name in t.channel_names:
        out += _pack_str(name)
    out += t.labels.astype("<u4").tobytes()
    out += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(f"{self.path}: file ends at byte {len(self.buf)}, needed {self.pos + n}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: bad UTF-8 in name") from exc


def load_tensor(path) -> FeatureTensor:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not an SSGT tensor file")
    version, dtype, rank = r.unpack("<HBB")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if rank != 4:
        raise FormatError(f"{path}: expected rank 4, got {rank}")
    dims = r.unpack("<4I")
    (k,) = r.unpack("<H")
    class_names = [r.string() for _ in range(k)]
    (c,) = r.unpack("<B")
    if c != dims[3]:
        raise FormatError(f"{path}: channel count {c} disagrees with dims {dims}")
    channel_names = [r.string() for _ in range(c)]
    labels = np.frombuffer(r.take(4 * dims[0]), dtype="<u4").astype(np.int64)
    count = int(np.prod(dims, dtype=np.int64))
    data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    try:
        return FeatureTensor(data, labels, class_names, channel_names)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# Featurisation


@dataclass
class SongFeatures:
    song_id: str
    spectrograms: np.ndarray  # (n_mels, frames, C)
    segments: list[Segment]  # window used for each channel


def _load_mix(entry: ManifestEntry, sample_rate: int) -> AudioClip:
    if not Path(entry.mix_path).is_file():
        raise MissingStemError("mix", str(entry.mix_path))
    mix = decode_wav(entry.mix_path)
    return resample(mix, sample_rate)


def _stems_for(entry: ManifestEntry, mix: AudioClip, separator: str) -> StemSet:
    if separator == "builtin":
        return separate_hpss3(mix)
    stems_dir = entry.stems_dir or Path(entry.mix_path).parent
    if entry.stems_dir is None and not (stems_dir / "bass.wav").exists():
        raise MissingStemError("bass", f"{entry.song_id} (no stems_dir in manifest)")
    return ingest_external_stems(stems_dir, mix=mix)


def featurize_song(entry: ManifestEntry, variant: str, separator: str,
                   segment_samples: int = CANONICAL_SEGMENT,
                   sample_rate: int = dsp.SAMPLE_RATE) -> SongFeatures:
    mix = _load_mix(entry, sample_rate)
    segment = select_segment(mix, segment_samples)
    if variant == "mix_full":
        sources = [mix]
    else:
        stems = _stems_for(entry, mix, separator)
        if variant == "stems3":
            sources = [stems.bass, stems.drums, stems.other]
        else:
            sources = [AudioClip(mix.samples - stems.vocals.samples, mix.sample_rate)]
    specs, segs = [], []
    for clip in sources:
        window = to_mono(clip.crop(segment))
        specs.append(dsp.mel_spectrogram(window.samples[0], sample_rate))
        segs.append(segment)
    return SongFeatures(entry.song_id, np.stack(specs, axis=-1), segs)


def _featurize_job(args):
    entry, variant, separator, segment_samples, sample_rate = args
    try:
        return featurize_song(entry, variant, separator, segment_samples, sample_rate), None
    except SepGenreError as exc:
        return None, exc


def featurize(manifest: DatasetManifest, variant: str, separator: str = "builtin", *,
              segment_samples: int = CANONICAL_SEGMENT, sample_rate: int = dsp.SAMPLE_RATE,
              jobs: int = 1, collect_errors: bool = False, progress=None) -> FeatureTensor:
    """Build the ``(N, 128, frames, C)`` tensor for one input variant.

    ``stems3`` stacks bass, drums and other; ``mix_full`` uses the mix;
    ``mix_novox`` uses the mix minus the vocals stem (bass + drums + other
    when the stems are additive). The segment window is chosen
    on the mix and applied unchanged to every stem. By default the first
    failing song raises; with ``collect_errors`` every song is attempted and
    a :class:`FeaturizeError` lists all failures.
    """
    if variant not in VARIANT_CHANNELS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if separator not in SEPARATORS:
        raise ConfigError(f"unknown separator {separator!r}; expected one of {SEPARATORS}")
    tasks = [(e, variant, separator, segment_samples, sample_rate) for e in manifest.entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_featurize_job, tasks))
    else:
        results = []
        for task in tasks:
            res = _featurize_job(task)
            if res[1] is not None and not collect_errors:
                raise res[1]
            results.append(res)
            if progress:
                progress(task[0].song_id)
    errors = [(t[0].song_id, err) for t, (_, err) in zip(tasks, results) if err is not None]
    if errors:
        if collect_errors:
            raise FeaturizeError(errors)
        raise errors[0][1]
    songs = [r for r, _ in results]
    n_frames = 1 + segment_samples // dsp.HOP
    data = (np.stack([s.spectrograms for s in songs]) if songs
            else np.zeros((0, dsp.N_MELS, n_frames, len(VARIANT_CHANNELS[variant]))))
    segments = [s.segments[0] for s in songs]
    return FeatureTensor(
        data.astype(np.float32),
        manifest.labels(),
        list(manifest.genres),
        list(VARIANT_CHANNELS[variant]),
        segments=segments,
    )
