import json

import numpy as np
import pytest

from sepgenre.audio_io import AudioClip, encode_wav
from sepgenre.cli import main
from sepgenre.features import FeatureTensor, load_tensor, save_tensor


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A 2-genre, 5-clip dataset featurized three ways."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--genres", "2", "--clips-per-genre", "5",
                 "--seed", "1"]) == 0
    for variant in ("stems3", "mix_full", "mix_novox"):
        assert main(["featurize", "--manifest", str(root / "data" / "manifest.csv"),
                     "--variant", variant, "--separator", "external",
                     "--out", str(root / f"{variant}.ssgt")]) == 0
    return root


def trial_args(root, out):
    return ["trials", "--features-stems3", str(root / "stems3.ssgt"),
            "--features-full", str(root / "mix_full.ssgt"),
            "--features-novox", str(root / "mix_novox.ssgt"),
            "--trials", "2", "--epochs", "1", "--base-seed", "0", "--out", str(out)]


def test_featurize_prints_shape(pipeline, capsys):
    main(["featurize", "--manifest", str(pipeline / "data" / "manifest.csv"),
          "--variant", "mix_full", "--separator", "external",
          "--out", str(pipeline / "again.ssgt")])
    assert "shape=(10,128,458,1)" in capsys.readouterr().out
    assert load_tensor(pipeline / "stems3.ssgt").shape == (10, 128, 458, 3)


def test_trials_and_report(pipeline, tmp_path, capsys):
    out = tmp_path / "results.csv"
    assert main(trial_args(pipeline, out)) == 0
    text = capsys.readouterr().out
    assert "low-power" in text
    assert (tmp_path / "results.summary.txt").read_text().rstrip("\n") == text.rstrip("\n")
    assert main(["report", str(out), "--out", str(tmp_path / "f.svg"),
                 "--stats", str(tmp_path / "s.txt")]) == 0
    svg = (tmp_path / "f.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count('class="mean-line"') == 4
    # refusing to overwrite, then allowed with --force
    assert main(trial_args(pipeline, out)) == 3
    assert main(["report", str(out), "--out", str(tmp_path / "f.svg"),
                 "--stats", str(tmp_path / "s.txt"), "--force"]) == 0


def test_trials_label_mismatch_exits_4(pipeline, tmp_path):
    t = load_tensor(pipeline / "mix_novox.ssgt")
    bad = FeatureTensor(t.data, t.labels[::-1].copy(), t.class_names, t.channel_names)
    save_tensor(bad, tmp_path / "bad.ssgt")
    args = trial_args(pipeline, tmp_path / "r.csv")
    args[args.index("--features-novox") + 1] = str(tmp_path / "bad.ssgt")
    assert main(args) == 4
    args[args.index("--features-novox") + 1] = str(pipeline / "mix_full.ssgt")
    args[args.index("--features-stems3") + 1] = str(pipeline / "mix_full.ssgt")
    assert main(args) == 4


def test_synth_rerun_byte_identical(tmp_path, capsys):
    args = ["--genres", "2", "--clips-per-genre", "1,2", "--seed", "4", "--seconds", "0.5"]
    assert main(["synth", "--out", str(tmp_path / "a")] + args) == 0
    assert main(["synth", "--out", str(tmp_path / "b")] + args) == 0
    out = capsys.readouterr().out
    assert "clips=3 counts=1,2" in out
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 16
    for f in files:
        if f.name != "manifest.csv":
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["synth", "--out", str(tmp_path / "a")] + args) == 3
    assert main(["synth", "--out", str(tmp_path / "a"), "--force"] + args) == 0


def test_usage_errors(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "x"), "--clips-per-genre", "2"]) == 2
    assert "seed" in capsys.readouterr().err
    (tmp_path / "m.csv").write_text("song_id,genre,mix_path,stems_dir\n")
    assert main(["featurize", "--manifest", str(tmp_path / "m.csv"), "--variant", "stems4",
                 "--out", str(tmp_path / "o.ssgt")]) == 2
    err = capsys.readouterr().err
    assert "stems3" in err and "mix_novox" in err
    assert main(["separate", str(tmp_path / "m.csv"), "--out", str(tmp_path / "s"),
                 "--method", "nmf"]) == 2
    assert main(["bogus"]) == 2


def test_report_rejects_empty_csv(tmp_path):
    (tmp_path / "r.csv").write_text("")
    assert main(["report", str(tmp_path / "r.csv"), "--out", str(tmp_path / "f.svg"),
                 "--stats", str(tmp_path / "s.txt")]) == 1
    assert main(["report", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "f.svg"),
                 "--stats", str(tmp_path / "s.txt")]) == 1


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"seed": 9, "clips_per_genre": 1, "genres": 3,
                                         "seconds": 0.5}}))
    assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "a"), "--genres", "2"]) == 0
    assert "clips=2" in capsys.readouterr().out  # command line beats the file
    cfg.write_text(json.dumps({"synth": {"sead": 9}}))
    assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "b")]) == 2
    cfg.write_text(json.dumps({"synthesize": {}}))
    assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "b")]) == 2
    cfg.write_text("{not json")
    assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "b")]) == 2


def test_jobs_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv("SEPGENRE_JOBS", "0")
    assert main(["trials", "--features-stems3", "a", "--features-full", "b",
                 "--features-novox", "c", "--base-seed", "0", "--out", str(tmp_path / "r")]) == 2


def test_separate_reports_energy_and_snr(tmp_path, capsys):
    t = np.arange(22050 * 2) / 22050
    x = 0.3 * np.sin(2 * np.pi * 80 * t)
    x[::2205] += 0.5
    encode_wav(AudioClip(np.stack([x, x]), 22050), tmp_path / "mix.wav")
    assert main(["separate", str(tmp_path / "mix.wav"), "--out", str(tmp_path / "stems")]) == 0
    lines = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert set(lines) == {"bass_energy", "drums_energy", "other_energy", "vocals_energy",
                          "additivity_snr_db"}
    assert float(lines["vocals_energy"]) == 0
    assert float(lines["additivity_snr_db"]) >= 40
    assert sorted(p.name for p in (tmp_path / "stems").iterdir()) == [
        "bass.wav", "drums.wav", "other.wav", "vocals.wav"]
