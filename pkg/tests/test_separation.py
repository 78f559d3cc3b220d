import warnings

import numpy as np
import pytest

from sepgenre import dsp
from sepgenre.audio_io import AudioClip, encode_wav
from sepgenre.errors import ConfigError, IncompatibleStemsError, MissingStemError, ShapeError
from sepgenre.separation import (
    STEM_NAMES,
    AdditivityWarning,
    MaskSet,
    StemSet,
    additivity_defect,
    apply_masks,
    hpss_masks,
    ingest_external_stems,
    separate_hpss3,
    snr_db,
)

SR = 22050


def energy(clip):
    return float(np.sum(clip.samples ** 2))


def shares(stems):
    e = {n: energy(c) for n, c in stems.items()}
    total = sum(e.values())
    return {n: v / total for n, v in e.items()}


def test_sine_goes_to_bass():
    x = 0.5 * np.sin(2 * np.pi * 100.0 * np.arange(3 * SR) / SR)
    stems = separate_hpss3(AudioClip(x, SR))
    assert shares(stems)["bass"] >= 0.9


def test_click_train_goes_to_drums():
    x = np.zeros(3 * SR)
    x[:: SR // 4] = 1.0
    stems = separate_hpss3(AudioClip(x, SR))
    assert shares(stems)["drums"] >= 0.8


def test_high_tone_goes_to_other():
    x = 0.5 * np.sin(2 * np.pi * 2000.0 * np.arange(2 * SR) / SR)
    assert shares(separate_hpss3(AudioClip(x, SR)))["other"] >= 0.9


def test_vocals_silent_and_additive(rng):
    mix = AudioClip(rng.uniform(-0.5, 0.5, (2, SR)), SR)
    stems = separate_hpss3(mix)
    assert not np.any(stems.vocals.samples)
    assert snr_db(mix.samples, stems.total().samples) >= 40
    assert additivity_defect(mix, stems) < 1e-6


def test_hpss_deterministic(rng):
    mix = AudioClip(rng.normal(size=5000), SR)
    a, b = separate_hpss3(mix), separate_hpss3(AudioClip(mix.samples.copy(), SR))
    for x, y in zip(a, b):
        assert x == y


def test_hpss_masks_partition_exactly(rng):
    specs = [dsp.stft(rng.normal(size=6000)) for _ in range(2)]
    masks = hpss_masks(specs, SR)
    assert np.all(masks.partition_sum() == 1.0)
    cut = int(np.ceil(250 * 2048 / SR))  # first bin at or above 250 Hz
    assert not np.any(masks["bass"][:, cut:])
    assert not np.any(masks["other"][:, :cut])


def test_degenerate_masks(rng):
    x = rng.normal(size=(1, 4000))
    specs = [dsp.stft(x[0])]
    shape = (4, 1) + specs[0].shape
    one = np.zeros(shape)
    one[0] = 1.0
    stems = apply_masks(specs, MaskSet(one), SR)
    np.testing.assert_allclose(stems.bass.samples, x, atol=1e-12)
    for name in STEM_NAMES[1:]:
        assert np.max(np.abs(getattr(stems, name).samples)) < 1e-12
    quarter = apply_masks(specs, MaskSet(np.full(shape, 0.25)), SR)
    for clip in quarter:
        np.testing.assert_allclose(clip.samples, x / 4, atol=1e-12)


def test_random_masks_additive(rng):
    x = rng.normal(size=(2, 5000))
    specs = [dsp.stft(ch) for ch in x]
    raw = rng.uniform(size=(4, 2) + specs[0].shape)
    m = raw / raw.sum(axis=0)
    m[3] = np.clip(1.0 - (m[0] + m[1] + m[2]), 0.0, 1.0)
    stems = apply_masks(specs, MaskSet(m), SR)
    assert additivity_defect(AudioClip(x, SR), stems) <= 1e-6


def test_maskset_validation():
    with pytest.raises(ConfigError):
        MaskSet(np.full((4, 1, 3, 3), 0.3))
    bad = np.zeros((4, 1, 3, 3))
    bad[0] = 1.2
    bad[1] = -0.2
    with pytest.raises(ConfigError):
        MaskSet(bad)
    with pytest.raises(ShapeError):
        MaskSet(np.full((3, 1, 3, 3), 1 / 3))


def test_apply_masks_shape_mismatch(rng):
    specs = [dsp.stft(rng.normal(size=3000))]
    with pytest.raises(ShapeError):
        apply_masks(specs, MaskSet(np.full((4, 1, 5, 5), 0.25)), SR)


def test_stemset_layout_checked():
    a = AudioClip(np.zeros(10), SR)
    with pytest.raises(IncompatibleStemsError):
        StemSet(a, a, a, AudioClip(np.zeros(11), SR))


# -- external stems ----------------------------------------------------------------


def write_song(d, stems: dict, mix):
    d.mkdir(parents=True, exist_ok=True)
    encode_wav(mix, d / "mix.wav")
    for name, clip in stems.items():
        encode_wav(clip, d / f"{name}.wav")


def make_stems(rng, n=2000):
    parts = {name: rng.uniform(-0.2, 0.2, (2, n)).astype(np.float32).astype(np.float64)
             for name in STEM_NAMES}
    parts["vocals"][:] = 0.0
    mix = (parts["bass"] + parts["drums"]) + parts["other"]
    stems = {k: AudioClip(v, SR) for k, v in parts.items()}
    return stems, AudioClip(mix.astype(np.float32), SR)


def test_ingest_round_trip(tmp_path, rng):
    stems, mix = make_stems(rng)
    write_song(tmp_path / "s", stems, mix)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        got = ingest_external_stems(tmp_path / "s")
    assert got.additivity_defect <= 1e-6
    assert got.bass == stems["bass"]


def test_missing_vocals_named(tmp_path, rng):
    stems, mix = make_stems(rng)
    del stems["vocals"]
    write_song(tmp_path / "s", stems, mix)
    with pytest.raises(MissingStemError) as info:
        ingest_external_stems(tmp_path / "s")
    assert info.value.stem == "vocals"
    assert "vocals" in str(info.value)


def test_scaled_stems_warn_with_expected_defect(tmp_path, rng):
    mix = AudioClip(rng.uniform(-0.8, 0.8, (2, 2000)).astype(np.float32), SR)
    # stems summing to 0.9 * mix, with fractions exact in binary
    parts = [0.5, 0.25, 0.15, 0.0]
    stems = {n: AudioClip(mix.samples * f, SR) for n, f in zip(STEM_NAMES, parts)}
    write_song(tmp_path / "w", stems, mix)
    with pytest.warns(AdditivityWarning):
        got = ingest_external_stems(tmp_path / "w")
    assert got.additivity_defect == pytest.approx(0.1 * np.max(np.abs(mix.samples)), abs=1e-6)


def test_stems_resampled_to_mix_rate(tmp_path, rng):
    n = 4410
    t = np.arange(n) / 44100
    tone = 0.3 * np.sin(2 * np.pi * 200 * t)
    hi = {name: AudioClip(tone if name == "bass" else np.zeros(n), 44100) for name in STEM_NAMES}
    mix = AudioClip(np.sin(2 * np.pi * 200 * np.arange(2205) / 22050) * 0.3, 22050)
    write_song(tmp_path / "r", hi, mix)
    got = ingest_external_stems(tmp_path / "r")
    assert got.sample_rate == 22050 and got.bass.length == 2205


def test_length_mismatch_rejected(tmp_path, rng):
    stems, mix = make_stems(rng)
    stems["drums"] = AudioClip(np.zeros((2, 1990)), SR)
    write_song(tmp_path / "m", stems, mix)
    with pytest.raises(IncompatibleStemsError):
        ingest_external_stems(tmp_path / "m")
