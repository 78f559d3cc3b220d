"""Synthetic multi-stem "genres" with ground-truth stems.

A genre fixes onset patterns on a two-bar grid of 32 sixteenth steps for
each instrument, the bass register and note cycle, and the texture of the
"other" stem (chord pads plus a gated noise bed). Clips of one genre vary
in tempo, key, stem gains, timbre and dropped onsets.

The default genres are built from onset *densities*: kick and bass share
the low band, hi-hats and the gated noise share the top band. Two genres
that swap which instrument carries the dense pattern produce nearly the
same mix spectrogram but different stems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from ..audio_io import AudioClip, encode_wav
from ..errors import ConfigError
from ..features import DatasetManifest, ManifestEntry, write_manifest
from ..separation import MIX_FILE, STEM_NAMES

SAMPLE_RATE = 22050
STEPS = 32
CLIP_SECONDS = 12.0
NYQUIST = SAMPLE_RATE / 2

QUARTERS = tuple(range(0, STEPS, 4))
EIGHTHS = tuple(range(0, STEPS, 2))
OFFBEATS = tuple(range(2, STEPS, 4))
SIXTEENTHS = tuple(range(STEPS))
BACKBEAT = (4, 12, 20, 28)


@dataclass(frozen=True)
class SynthGenreSpec:
    name: str
    tempo_bpm: float
    kick_steps: tuple[int, ...]
    snare_steps: tuple[int, ...]
    hat_steps: tuple[int, ...]
    bass_root_hz: float
    bass_steps: tuple[int, ...]
    bass_notes: tuple[int, ...] = (0, 0, 7, 5)
    chords: tuple[tuple[int, ...], ...] = ((0, 4, 7), (5, 9, 12))
    chord_root_hz: float = 261.63
    noise_color: str = "white"
    noise_steps: tuple[int, ...] = OFFBEATS
    noise_band: tuple[float, float] = (6000.0, 10000.0)

    def __post_init__(self):
        if not 60 <= self.tempo_bpm <= 200:
            raise ConfigError(f"{self.name}: tempo {self.tempo_bpm} outside [60, 200]")
        for attr in ("kick_steps", "snare_steps", "hat_steps", "bass_steps", "noise_steps"):
            steps = getattr(self, attr)
            if any(not 0 <= s < STEPS for s in steps):
                raise ConfigError(f"{self.name}: {attr} must lie in [0, {STEPS})")
        top_chord = self.chord_root_hz * 2 ** (max(max(c) for c in self.chords) / 12) * 4
        highest = max(self.bass_root_hz * 2 ** (max(self.bass_notes) / 12) * 6,
                      top_chord, self.noise_band[1])
        if highest >= NYQUIST:
            raise ConfigError(f"{self.name}: content reaches {highest:.0f} Hz >= {NYQUIST}")
        if self.noise_color not in ("white", "pink"):
            raise ConfigError(f"{self.name}: noise_color must be white or pink")

    @property
    def drum_pattern(self) -> dict[str, tuple[int, ...]]:
        return {"kick": self.kick_steps, "snare": self.snare_steps, "hat": self.hat_steps}

    def drums_and_bass(self) -> tuple:
        return (self.kick_steps, self.snare_steps, self.hat_steps, self.bass_root_hz,
                self.bass_steps, self.bass_notes)

    def other_texture(self) -> tuple:
        return (self.chords, self.chord_root_hz, self.noise_color, self.noise_steps,
                self.noise_band)


GENRE_NAMES = ("house", "techno", "trance", "electro", "garage", "hardstyle",
               "breaks", "dub", "minimal", "progressive", "acid", "ambient",
               "disco", "eurodance", "jungle", "idm")

# (kick, bass, hat, noise) density: 1 = dense, 0 = sparse
DEFAULT_TRAITS = [
    (1, 0, 1, 0),
    (0, 1, 1, 0),
    (1, 0, 0, 1),
    (0, 1, 0, 1),
    (0, 0, 0, 0),
    (1, 1, 1, 1),
]


def _trait_order() -> list[tuple[int, ...]]:
    rest = [t for t in itertools.product((0, 1), repeat=4) if t not in DEFAULT_TRAITS]
    return DEFAULT_TRAITS + rest


def genre_from_traits(name: str, traits, tempo_bpm: float = 126.0) -> SynthGenreSpec:
    kick, bass, hat, noise = traits
    return SynthGenreSpec(
        name=name,
        tempo_bpm=tempo_bpm,
        kick_steps=EIGHTHS if kick else QUARTERS,
        snare_steps=BACKBEAT,
        hat_steps=SIXTEENTHS if hat else OFFBEATS,
        bass_root_hz=55.0,
        bass_steps=EIGHTHS if bass else QUARTERS,
        noise_steps=SIXTEENTHS if noise else OFFBEATS,
    )


def traits_of(spec: SynthGenreSpec) -> tuple[int, int, int, int]:
    return (
        int(len(spec.kick_steps) > len(QUARTERS)),
        int(len(spec.bass_steps) > len(QUARTERS)),
        int(len(spec.hat_steps) > len(OFFBEATS)),
        int(len(spec.noise_steps) > len(OFFBEATS)),
    )


def default_genres(n: int = 6) -> list[SynthGenreSpec]:
    """``n`` genres (2 <= n <= 16) with distinct density combinations."""
    order = _trait_order()
    if not 2 <= n <= len(order):
        raise ConfigError(f"can build between 2 and {len(order)} genres, got {n}")
    tempos = np.linspace(124.0, 128.0, n)
    return [genre_from_traits(GENRE_NAMES[i], order[i], float(tempos[i])) for i in range(n)]


def make_similar(base: SynthGenreSpec, target: SynthGenreSpec) -> SynthGenreSpec:
    """``target`` with ``base``'s drums and bass and a different noise pattern."""
    flipped = OFFBEATS if len(base.noise_steps) > len(OFFBEATS) else SIXTEENTHS
    return replace(
        target,
        kick_steps=base.kick_steps,
        snare_steps=base.snare_steps,
        hat_steps=base.hat_steps,
        bass_root_hz=base.bass_root_hz,
        bass_steps=base.bass_steps,
        bass_notes=base.bass_notes,
        chords=base.chords,
        chord_root_hz=base.chord_root_hz,
        noise_color=base.noise_color,
        noise_steps=flipped,
        noise_band=base.noise_band,
    )


def make_different(base: SynthGenreSpec, target: SynthGenreSpec) -> SynthGenreSpec:
    """``target`` with every density flipped and its own register and texture."""
    k, b, h, n = traits_of(base)
    flipped = genre_from_traits(target.name, (1 - k, 1 - b, 1 - h, 1 - n), target.tempo_bpm)
    return replace(
        flipped,
        bass_root_hz=base.bass_root_hz * 1.5,
        bass_notes=(0, 3, 0, 10),
        chords=((0, 3, 7), (8, 12, 15)),
        chord_root_hz=base.chord_root_hz * 1.5,
        noise_color="pink" if base.noise_color == "white" else "white",
        noise_band=(3000.0, 6000.0),
    )


def apply_pairs(specs: list[SynthGenreSpec], similar: tuple[int, int] | None = None,
                different: tuple[int, int] | None = None) -> list[SynthGenreSpec]:
    specs = list(specs)
    for pair in (similar, different):
        if pair is not None:
            a, b = pair
            if a == b:
                raise ConfigError("a genre cannot be paired with itself")
            if not (0 <= a < len(specs) and 0 <= b < len(specs)):
                raise ConfigError(f"pair {pair} out of range for {len(specs)} genres")
    if similar is not None:
        a, b = similar
        specs[b] = make_similar(specs[a], specs[b])
    if different is not None:
        a, b = different
        specs[b] = make_different(specs[a], specs[b])
    return specs


# --------------------------------------------------------------------------
# Rendering


@dataclass
class _ClipParams:
    tempo: float
    transpose: float
    gains_db: dict = field(default_factory=dict)
    kick_decay: float = 0.2
    bass_decay: float = 0.2
    hat_decay: float = 0.04
    drop_prob: float = 0.1
    phase_steps: int = 0


def _clip_params(spec: SynthGenreSpec, rng: np.random.Generator) -> _ClipParams:
    return _ClipParams(
        tempo=spec.tempo_bpm * rng.uniform(0.96, 1.04),
        transpose=rng.uniform(-2.0, 2.0),
        gains_db={n: rng.uniform(-3.0, 3.0) for n in ("bass", "drums", "other")},
        kick_decay=rng.uniform(0.12, 0.22),
        bass_decay=rng.uniform(0.12, 0.22),
        hat_decay=rng.uniform(0.03, 0.06),
        drop_prob=0.1,
        phase_steps=int(rng.integers(0, STEPS)),
    )


def _onsets(steps, n_samples: int, step_len: float, params: _ClipParams,
            rng: np.random.Generator) -> list[int]:
    """Sample positions of pattern onsets, looping the two-bar grid."""
    out = []
    n_steps = int(np.ceil(n_samples / step_len)) + 1
    active = set(steps)
    for k in range(n_steps):
        if (k + params.phase_steps) % STEPS in active and rng.random() >= params.drop_prob:
            out.append(int(round(k * step_len)))
    return [o for o in out if o < n_samples]


def _place(buf: np.ndarray, shot: np.ndarray, pos: int, gain: float = 1.0) -> None:
    end = min(buf.shape[-1], pos + shot.shape[-1])
    buf[..., pos:end] += gain * shot[..., :end - pos]


def _noise(rng, n: int, color: str) -> np.ndarray:
    white = rng.standard_normal(n)
    if color == "white":
        return white
    spec = np.fft.rfft(white)
    f = np.arange(spec.size)
    f[0] = 1
    shaped = np.fft.irfft(spec / np.sqrt(f), n)
    return shaped / (np.std(shaped) + 1e-12)


def _bandpass(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    sos = butter(4, [lo, hi], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    return sosfilt(sos, x)


def _highpass(x: np.ndarray, lo: float) -> np.ndarray:
    return sosfilt(butter(4, lo, btype="highpass", fs=SAMPLE_RATE, output="sos"), x)


def _render_drums(spec, params, n, step_len, rng) -> np.ndarray:
    sr = SAMPLE_RATE
    out = np.zeros((2, n))
    t = np.arange(int(0.4 * sr)) / sr
    freq = 50.0 + 60.0 * np.exp(-t / 0.03)
    kick = np.sin(2 * np.pi * np.cumsum(freq) / sr) * np.exp(-t / params.kick_decay * 3)
    for pos in _onsets(spec.kick_steps, n, step_len, params, rng):
        _place(out, kick, pos, 0.9)
    ts = np.arange(int(0.2 * sr)) / sr
    snare = (_bandpass(rng.standard_normal(ts.size), 1000.0, 5000.0) * np.exp(-ts / 0.05)
             + 0.4 * np.sin(2 * np.pi * 180.0 * ts) * np.exp(-ts / 0.04))
    for pos in _onsets(spec.snare_steps, n, step_len, params, rng):
        _place(out, snare, pos, 0.5)
    th = np.arange(int(0.15 * sr)) / sr
    for pos in _onsets(spec.hat_steps, n, step_len, params, rng):
        hat = _highpass(rng.standard_normal(th.size), 7000.0) * np.exp(-th / params.hat_decay)
        pan = rng.uniform(0.35, 0.65)
        _place(out, np.stack([hat * (1 - pan), hat * pan]) * 2, pos, 0.35)
    return out


def _render_bass(spec, params, n, step_len, rng) -> np.ndarray:
    sr = SAMPLE_RATE
    out = np.zeros(n)
    t = np.arange(int(0.5 * sr)) / sr
    env = np.exp(-t / params.bass_decay * 3) * np.minimum(1.0, t / 0.004)
    root = spec.bass_root_hz * 2 ** (params.transpose / 12)
    for i, pos in enumerate(_onsets(spec.bass_steps, n, step_len, params, rng)):
        f0 = root * 2 ** (spec.bass_notes[i % len(spec.bass_notes)] / 12)
        tone = sum(np.sin(2 * np.pi * f0 * h * t) / h ** 1.5 for h in (1, 2, 3, 4))
        _place(out, tone * env, pos, 0.6)
    return np.stack([out, out])


def _render_other(spec, params, n, step_len, rng) -> np.ndarray:
    sr = SAMPLE_RATE
    t = np.arange(n) / sr
    bar = step_len * 16
    pad = np.zeros((2, n))
    root = spec.chord_root_hz * 2 ** (params.transpose / 12)
    chord_idx = ((np.arange(n) + params.phase_steps * step_len) // bar).astype(int) % len(spec.chords)
    for ci, chord in enumerate(spec.chords):
        gate = (chord_idx == ci).astype(float)
        for semis in chord:
            f = root * 2 ** (semis / 12)
            for ch, detune in enumerate((0.998, 1.002)):
                phase = rng.uniform(0, 2 * np.pi)
                pad[ch] += gate * (np.sin(2 * np.pi * f * detune * t + phase)
                                   + 0.3 * np.sin(4 * np.pi * f * detune * t + phase))
    pad *= 0.05
    lo, hi = spec.noise_band
    noise = np.stack([_bandpass(_noise(rng, n, spec.noise_color), lo, hi) for _ in range(2)])
    env = np.zeros(n)
    te = np.arange(int(0.15 * sr)) / sr
    burst = np.exp(-te / params.hat_decay)
    for pos in _onsets(spec.noise_steps, n, step_len, params, rng):
        _place(env, burst, pos)
    return pad + 0.7 * noise * np.minimum(env, 1.0)


def render_clip(spec: SynthGenreSpec, rng: np.random.Generator,
                seconds: float = CLIP_SECONDS) -> dict[str, AudioClip]:
    """Render one stereo clip; returns stems and ``mix`` as float32-exact clips.

    The mix is the float32 sum ``((bass + drums) + other) + vocals`` of the
    float32 stems, so re-adding the stored stems in that order reproduces
    it bit for bit.
    """
    n = int(round(seconds * SAMPLE_RATE))
    params = _clip_params(spec, rng)
    step_len = SAMPLE_RATE * 60.0 / params.tempo / 4
    stems = {
        "bass": _render_bass(spec, params, n, step_len, rng),
        "drums": _render_drums(spec, params, n, step_len, rng),
        "other": _render_other(spec, params, n, step_len, rng),
        "vocals": np.zeros((2, n)),
    }
    for name, db in params.gains_db.items():
        stems[name] *= 10 ** (db / 20)
    peak = np.max(np.abs(sum(stems.values())))
    scale = 0.8 / peak if peak > 0 else 1.0
    f32 = {k: (v * scale).astype(np.float32) for k, v in stems.items()}
    mix = ((f32["bass"] + f32["drums"]) + f32["other"]) + f32["vocals"]
    if np.max(np.abs(mix)) > 1.0:
        raise ConfigError("rendered mix clips; lower the target peak")
    clips = {k: AudioClip(v, SAMPLE_RATE) for k, v in f32.items()}
    clips["mix"] = AudioClip(mix, SAMPLE_RATE)
    return clips


def synth_dataset(specs: list[SynthGenreSpec], clips_per_genre, seed: int, out_dir,
                  seconds: float = CLIP_SECONDS) -> DatasetManifest:
    """Render ``<out>/<genre>/<song_id>/{mix,bass,drums,other,vocals}.wav`` and a manifest.

    ``clips_per_genre`` is an int or one count per genre. Writes
    ``<out>/manifest.csv`` and returns the manifest.
    """
    if len(specs) < 2:
        raise ConfigError("need at least two genres")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("genre names must be unique")
    counts = [clips_per_genre] * len(specs) if np.isscalar(clips_per_genre) else list(clips_per_genre)
    if len(counts) != len(specs):
        raise ConfigError(f"{len(counts)} clip counts for {len(specs)} genres")
    if any(c < 1 for c in counts):
        raise ConfigError("every genre needs at least one clip")
    out_dir = Path(out_dir)
    entries = []
    for gi, (spec, count) in enumerate(zip(specs, counts)):
        for ci in range(count):
            song_id = f"{spec.name}_{ci:03d}"
            song_dir = out_dir / spec.name / song_id
            song_dir.mkdir(parents=True, exist_ok=True)
            rng = np.random.default_rng([seed, gi, ci])
            clips = render_clip(spec, rng, seconds)
            for name in STEM_NAMES:
                encode_wav(clips[name], song_dir / f"{name}.wav")
            encode_wav(clips["mix"], song_dir / MIX_FILE)
            entries.append(ManifestEntry(song_id, spec.name, song_dir / MIX_FILE, song_dir))
    manifest = DatasetManifest(entries, names)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
