"""Command line: synth, separate, featurize, trials, report, similar, demo.

Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 refused
overwrite, 4 inconsistent inputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgmod
from .audio_io import decode_wav
from .errors import ConfigError, SepGenreError
from .experiment import report as rep
from .experiment.intro import similar_vs_different
from .experiment.protocol import EPOCHS, MODEL_INPUTS, default_configs, run_trials
from .experiment.stats import summarize
from .experiment.synth import CLIP_SECONDS, apply_pairs, default_genres, synth_dataset
from .features import SEPARATORS, VARIANTS, featurize, load_tensor, read_manifest, save_tensor
from .separation import separate_hpss3, snr_db

log = logging.getLogger("sepgenre")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_OVERWRITE, EXIT_INCONSISTENT = 0, 1, 2, 3, 4
JOBS_ENV = "SEPGENRE_JOBS"


class UsageError(Exception):
    pass


class OverwriteRefused(Exception):
    pass


class InconsistentInputs(Exception):
    pass


# --------------------------------------------------------------------------
# Option tables: dest -> (converter, default). A default of REQUIRED means
# the value must come from the command line or the config file.

REQUIRED = object()


def _int_list(v) -> list[int]:
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    if isinstance(v, int):
        return [v]
    try:
        return [int(x) for x in str(v).split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {v!r}") from exc


def _pair(v) -> tuple[str, str]:
    parts = list(v) if isinstance(v, (list, tuple)) else str(v).split(",")
    if len(parts) != 2:
        raise UsageError(f"expected a pair A,B, got {v!r}")
    return str(parts[0]).strip(), str(parts[1]).strip()


def _path(v) -> Path:
    return Path(str(v))


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    raise UsageError(f"expected true/false, got {v!r}")


def _jobs_default() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None:
        return 1
    try:
        jobs = int(raw)
    except ValueError as exc:
        raise UsageError(f"{JOBS_ENV} must be an integer, got {raw!r}") from exc
    return jobs


@dataclass
class Opt:
    convert: Callable
    default: object = None


OPTIONS: dict[str, dict[str, Opt]] = {
    "synth": {
        "out": Opt(_path, REQUIRED),
        "genres": Opt(int, 6),
        "clips_per_genre": Opt(_int_list, REQUIRED),
        "seed": Opt(int, REQUIRED),
        "similar_pair": Opt(_pair),
        "different_pair": Opt(_pair),
        "seconds": Opt(float, CLIP_SECONDS),
        "force": Opt(_bool, False),
    },
    "separate": {
        "input": Opt(_path, REQUIRED),
        "out": Opt(_path, REQUIRED),
        "method": Opt(str, "hpss3"),
        "force": Opt(_bool, False),
    },
    "featurize": {
        "manifest": Opt(_path, REQUIRED),
        "variant": Opt(str, REQUIRED),
        "separator": Opt(str, "builtin"),
        "out": Opt(_path, REQUIRED),
        "jobs": Opt(int, None),
        "force": Opt(_bool, False),
    },
    "trials": {
        "features_stems3": Opt(_path, REQUIRED),
        "features_full": Opt(_path, REQUIRED),
        "features_novox": Opt(_path, REQUIRED),
        "trials": Opt(int, 50),
        "epochs": Opt(int, EPOCHS),
        "base_seed": Opt(int, REQUIRED),
        "out": Opt(_path, REQUIRED),
        "summary": Opt(_path),
        "jobs": Opt(int, None),
        "force": Opt(_bool, False),
    },
    "report": {
        "results": Opt(_path, REQUIRED),
        "out": Opt(_path, REQUIRED),
        "stats": Opt(_path, REQUIRED),
        "force": Opt(_bool, False),
    },
    "similar": {
        "features": Opt(_path, REQUIRED),
        "similar_pair": Opt(_pair, REQUIRED),
        "different_pair": Opt(_pair, REQUIRED),
        "seed": Opt(int, REQUIRED),
        "trials": Opt(int, 10),
        "epochs": Opt(int, EPOCHS),
    },
    "demo": {
        "out": Opt(_path, REQUIRED),
        "seed": Opt(int, REQUIRED),
        "genres": Opt(int, 6),
        "clips_per_genre": Opt(_int_list, [15, 14, 11, 10, 9, 7]),
        "trials": Opt(int, 50),
        "epochs": Opt(int, EPOCHS),
        "separator": Opt(str, "external"),
        "jobs": Opt(int, None),
        "force": Opt(_bool, False),
    },
}


def _resolve(command: str, ns: argparse.Namespace, config: dict) -> argparse.Namespace:
    opts = OPTIONS[command]
    given = {k: getattr(ns, k, None) for k in opts}
    try:
        merged = cfgmod.merge(command, given, config, set(opts))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = {}
    for key, opt in opts.items():
        val = merged.get(key)
        if val is None:
            if opt.default is REQUIRED:
                raise UsageError(f"{command}: --{key.replace('_', '-')} is required")
            out[key] = opt.default
        else:
            try:
                out[key] = opt.convert(val)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{command}: bad value for {key}: {val!r}") from exc
    if "jobs" in opts and out["jobs"] is None:
        out["jobs"] = _jobs_default()
    if "jobs" in out and out["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    return argparse.Namespace(**out)


# --------------------------------------------------------------------------
# Helpers


def _guard_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise OverwriteRefused(f"{path} exists; pass --force to overwrite")
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")


def _guard_dir(path: Path, force: bool) -> None:
    if path.is_dir() and any(path.iterdir()) and not force:
        raise OverwriteRefused(f"{path} is not empty; pass --force to overwrite")
    if path.exists() and not path.is_dir():
        raise OverwriteRefused(f"{path} exists and is not a directory")


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise FileNotFoundError(f"{what} {path} not found")


def _genre_index(token: str, names: list[str]) -> int:
    if token in names:
        return names.index(token)
    try:
        i = int(token)
    except ValueError:
        raise UsageError(f"unknown genre {token!r}; choose from {names}") from None
    if not 0 <= i < len(names):
        raise UsageError(f"genre index {i} out of range 0..{len(names) - 1}")
    return i


def _print(msg: str = "") -> None:
    print(msg, flush=True)


# --------------------------------------------------------------------------
# Commands


def cmd_synth(a) -> int:
    if a.seconds <= 0:
        raise UsageError("--seconds must be positive")
    _guard_dir(a.out, a.force)
    specs = default_genres(a.genres)
    names = [s.name for s in specs]
    sim = tuple(_genre_index(t, names) for t in a.similar_pair) if a.similar_pair else None
    diff = tuple(_genre_index(t, names) for t in a.different_pair) if a.different_pair else None
    specs = apply_pairs(specs, sim, diff)
    counts = a.clips_per_genre
    if len(counts) == 1:
        counts = counts * len(specs)
    if len(counts) != len(specs):
        raise UsageError(f"--clips-per-genre has {len(counts)} counts for {len(specs)} genres")
    manifest = synth_dataset(specs, counts, a.seed, a.out, a.seconds)
    _print(f"genres={','.join(names)}")
    _print(f"clips={len(manifest)} counts={','.join(str(c) for c in counts)}")
    _print(f"manifest={a.out / 'manifest.csv'}")
    return EXIT_OK


def cmd_separate(a) -> int:
    if a.method != "hpss3":
        raise UsageError(f"unknown method {a.method!r}; available: hpss3")
    _require_file(a.input, "input")
    _guard_dir(a.out, a.force)
    mix = decode_wav(a.input)
    stems = separate_hpss3(mix)
    a.out.mkdir(parents=True, exist_ok=True)
    stems.save(a.out)
    snr = snr_db(mix.samples, stems.total().samples)
    for name, clip in stems.items():
        energy = float(np.sum(clip.samples.astype(np.float64) ** 2))
        _print(f"{name}_energy={energy:.6g}")
    _print(f"additivity_snr_db={snr:.2f}")
    return EXIT_OK


def cmd_featurize(a) -> int:
    if a.variant not in VARIANTS:
        raise UsageError(f"unknown variant {a.variant!r}; valid variants: {', '.join(VARIANTS)}")
    if a.separator not in SEPARATORS:
        raise UsageError(f"unknown separator {a.separator!r}; valid: {', '.join(SEPARATORS)}")
    _require_file(a.manifest, "manifest")
    _guard_file(a.out, a.force)
    manifest = read_manifest(a.manifest)
    tensor = featurize(manifest, a.variant, a.separator, jobs=a.jobs, collect_errors=True)
    save_tensor(tensor, a.out)
    _print(f"shape=({','.join(str(d) for d in tensor.shape)})")
    return EXIT_OK


def _load_trial_inputs(a) -> dict:
    paths = {"stems3": a.features_stems3, "mix_full": a.features_full, "mix_novox": a.features_novox}
    for p in paths.values():
        _require_file(p, "feature tensor")
    tensors = {k: load_tensor(p) for k, p in paths.items()}
    ref = tensors["mix_full"]
    for k, t in tensors.items():
        if t.shape[0] != ref.shape[0]:
            raise InconsistentInputs(f"{k} has {t.shape[0]} examples, mix_full has {ref.shape[0]}")
        if list(t.class_names) != list(ref.class_names) or not np.array_equal(t.labels, ref.labels):
            raise InconsistentInputs(f"labels in {paths[k]} differ from {paths['mix_full']}")
        if t.shape[1:3] != ref.shape[1:3]:
            raise InconsistentInputs(f"{k} spectrogram size {t.shape[1:3]} != {ref.shape[1:3]}")
    expected = {"stems3": 3, "mix_full": 1, "mix_novox": 1}
    for k, t in tensors.items():
        if t.shape[3] != expected[k]:
            raise InconsistentInputs(f"{paths[k]} has {t.shape[3]} channels, expected {expected[k]}")
    return tensors


def cmd_trials(a) -> int:
    if a.trials < 2:
        raise UsageError("--trials must be at least 2 for a summary")
    if a.epochs < 1:
        raise UsageError("--epochs must be at least 1")
    summary_path = a.summary or a.out.with_suffix(".summary.txt")
    _guard_file(a.out, a.force)
    _guard_file(summary_path, a.force)
    tensors = _load_trial_inputs(a)
    ref = tensors["mix_full"]
    features = {v: tensors[src] for v, src in MODEL_INPUTS.items()}
    configs = default_configs(len(ref.class_names), ref.shape[1:3])

    def progress(trial, rs):
        log.info("trial %d done: %s", trial,
                 " ".join(f"{r.model_variant}={r.selected_f1 if not r.failed else 'failed'}"
                          for r in rs))

    results = run_trials(features, ref.labels, a.base_seed, a.trials, configs, a.epochs,
                         a.jobs, progress)
    rep.write_results_csv(results, a.out)
    text = rep.format_summary(summarize(results))
    summary_path.write_text(text)
    _print(text.rstrip("\n"))
    return EXIT_OK


def cmd_report(a) -> int:
    _require_file(a.results, "results CSV")
    _guard_file(a.out, a.force)
    _guard_file(a.stats, a.force)
    results = rep.read_results_csv(a.results)
    summary = summarize(results)
    a.out.write_text(rep.f1_histogram_svg(summary))
    a.stats.write_text(rep.format_summary(summary))
    _print(f"figure={a.out}")
    _print(f"stats={a.stats}")
    return EXIT_OK


def cmd_similar(a) -> int:
    _require_file(a.features, "feature tensor")
    tensor = load_tensor(a.features)
    res = similar_vs_different(tensor, a.similar_pair, a.different_pair, a.seed,
                               trials=a.trials, epochs=a.epochs)
    _print(f"similar {','.join(res.similar.genres)} accuracy={res.similar.mean_accuracy:.4f}")
    _print(f"different {','.join(res.different.genres)} accuracy={res.different.mean_accuracy:.4f}")
    _print(f"gap={res.gap:.4f}")
    return EXIT_OK


def cmd_demo(a) -> int:
    """synth -> featurize (x3) -> trials -> report under one directory."""
    _guard_dir(a.out, a.force)
    data = a.out / "data"
    steps = [
        ("synth", argparse.Namespace(out=data, genres=a.genres, clips_per_genre=a.clips_per_genre,
                                     seed=a.seed, similar_pair=None, different_pair=None,
                                     seconds=CLIP_SECONDS, force=True)),
    ]
    for variant in ("stems3", "mix_full", "mix_novox"):
        steps.append(("featurize", argparse.Namespace(
            manifest=data / "manifest.csv", variant=variant, separator=a.separator,
            out=a.out / f"{variant}.ssgt", jobs=a.jobs, force=True)))
    steps.append(("trials", argparse.Namespace(
        features_stems3=a.out / "stems3.ssgt", features_full=a.out / "mix_full.ssgt",
        features_novox=a.out / "mix_novox.ssgt", trials=a.trials, epochs=a.epochs,
        base_seed=a.seed, out=a.out / "results.csv", summary=a.out / "summary.txt",
        jobs=a.jobs, force=True)))
    steps.append(("report", argparse.Namespace(
        results=a.out / "results.csv", out=a.out / "f1_histogram.svg",
        stats=a.out / "stats.txt", force=True)))
    for name, ns in steps:
        log.info("demo: %s", name)
        COMMANDS[name](ns)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "separate": cmd_separate,
    "featurize": cmd_featurize,
    "trials": cmd_trials,
    "report": cmd_report,
    "similar": cmd_similar,
    "demo": cmd_demo,
}


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepgenre", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON file with per-command defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset with true stems")
    s.add_argument("--out")
    s.add_argument("--genres", type=int)
    s.add_argument("--clips-per-genre", help="one count, or a comma list per genre")
    s.add_argument("--seed", type=int)
    s.add_argument("--similar-pair", metavar="A,B")
    s.add_argument("--different-pair", metavar="C,D")
    s.add_argument("--seconds", type=float)
    s.add_argument("--force", action="store_true", default=None)

    s = sub.add_parser("separate", help="split a WAV into four stems")
    s.add_argument("input", nargs="?")
    s.add_argument("--out")
    s.add_argument("--method")
    s.add_argument("--force", action="store_true", default=None)

    s = sub.add_parser("featurize", help="build a feature tensor from a manifest")
    s.add_argument("--manifest")
    s.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    s.add_argument("--separator", help=f"one of {', '.join(SEPARATORS)}")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int)
    s.add_argument("--force", action="store_true", default=None)

    s = sub.add_parser("trials", help="run the four-model trial protocol")
    s.add_argument("--features-stems3")
    s.add_argument("--features-full")
    s.add_argument("--features-novox")
    s.add_argument("--trials", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--base-seed", type=int)
    s.add_argument("--out")
    s.add_argument("--summary")
    s.add_argument("--jobs", type=int)
    s.add_argument("--force", action="store_true", default=None)

    s = sub.add_parser("report", help="F1 histogram SVG and stats from a results CSV")
    s.add_argument("results", nargs="?")
    s.add_argument("--out")
    s.add_argument("--stats")
    s.add_argument("--force", action="store_true", default=None)

    s = sub.add_parser("similar", help="similar-pair vs different-pair binary tasks")
    s.add_argument("--features")
    s.add_argument("--similar-pair", metavar="A,B")
    s.add_argument("--different-pair", metavar="C,D")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("demo", help="synth, featurize, trials and report in one go")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--genres", type=int)
    s.add_argument("--clips-per-genre")
    s.add_argument("--trials", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--separator")
    s.add_argument("--jobs", type=int)
    s.add_argument("--force", action="store_true", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = cfgmod.load_config(ns.config) if ns.config else {}
        args = _resolve(ns.command, ns, config)
        return COMMANDS[ns.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"sepgenre {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OverwriteRefused as exc:
        print(f"sepgenre {ns.command}: {exc}", file=sys.stderr)
        return EXIT_OVERWRITE
    except InconsistentInputs as exc:
        print(f"sepgenre {ns.command}: inconsistent inputs: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except (SepGenreError, OSError) as exc:
        print(f"sepgenre {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
