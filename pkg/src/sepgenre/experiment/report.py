"""Results CSV, Table-1-style text summary and the F1 histogram SVG."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import FormatError
from .protocol import MODEL_LABELS, EpochRecord, TrialResult
from .stats import ExperimentSummary, histogram

CSV_HEADER = ["trial", "seed", "model", "epoch", "train_loss", "test_loss", "test_acc",
              "test_f1", "selected"]


def _fmt(x: float) -> str:
    return repr(float(x))


def results_to_csv(results: list[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        for e, rec in enumerate(r.per_epoch):
            w.writerow([r.trial, r.trial_seed, r.model_variant, e, _fmt(rec.train_loss),
                        _fmt(rec.test_loss), _fmt(rec.test_accuracy), _fmt(rec.test_f1),
                        int(not r.failed and r.selected_epoch == e)])
        if r.failed and not r.per_epoch:
            # keeps the failure countable when it happened in the first epoch
            w.writerow([r.trial, r.trial_seed, r.model_variant, -1, "nan", "nan", "nan", "nan", 0])
    return buf.getvalue()


def write_results_csv(results: list[TrialResult], path) -> None:
    Path(path).write_text(results_to_csv(results))


def read_results_csv(path) -> list[TrialResult]:
    """Rebuild trial results; a (trial, model) group without a selected row is a failure."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise FormatError(f"{path}: empty results file")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_HEADER:
        raise FormatError(f"{path}: header must be {','.join(CSV_HEADER)}")
    groups: dict[tuple[int, str], TrialResult] = {}
    try:
        for row in reader:
            key = (int(row["trial"]), row["model"])
            r = groups.get(key)
            if r is None:
                r = groups[key] = TrialResult(key[0], int(row["seed"]), key[1], failed=True)
            epoch = int(row["epoch"])
            if epoch < 0:
                continue
            if epoch != len(r.per_epoch):
                raise FormatError(f"{path}: epochs out of order for trial {key[0]} {key[1]}")
            r.per_epoch.append(EpochRecord(float(row["train_loss"]), float(row["test_loss"]),
                                           float(row["test_acc"]), float(row["test_f1"])))
            if row["selected"] == "1":
                r.selected_epoch = epoch
                r.failed = False
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: malformed row: {exc}") from exc
    if not groups:
        raise FormatError(f"{path}: no result rows")
    return list(groups.values())


def label(variant: str) -> str:
    return MODEL_LABELS.get(variant, variant)


def format_summary(summary: ExperimentSummary) -> str:
    width = max(len(label(v)) for v in summary.models) + 2
    lines = [f"{'Model':<{width}}{'Accuracy':>10}{'F1':>10}{'Trials':>8}{'Failed':>8}"]
    for v, m in summary.models.items():
        lines.append(f"{label(v):<{width}}{m.mean_accuracy:>10.3f}{m.mean_f1:>10.3f}"
                     f"{m.n_trials:>8d}{m.n_failed:>8d}")
    if summary.tests:
        lines.append("")
        lines.append(f"test: {summary.test_name} on per-trial macro F1 vs {label(summary.baseline)}")
        for v, res in summary.tests.items():
            flag = "  low-power" if summary.low_power else ""
            lines.append(f"{label(v)}: t={res.t:.4f} df={res.df:.2f} p={res.p:.6g}{flag}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# SVG

COLORS = {
    "conv2d_full": "#1f77b4",
    "conv2d_novox": "#6baed6",
    "conv2d_stems3": "#ff7f0e",
    "dwconv_stems3": "#d95f02",
}
PLOT = {"width": 720, "height": 420, "left": 60, "right": 200, "top": 40, "bottom": 50}


def x_of(value: float) -> float:
    """Horizontal pixel position of an F1 value in [0, 1]."""
    span = PLOT["width"] - PLOT["left"] - PLOT["right"]
    return PLOT["left"] + value * span


def f1_histogram_svg(summary: ExperimentSummary, title: str = "F1 over trials") -> str:
    """Overlaid per-model F1 histograms with a dashed line at each model's mean."""
    W, H = PLOT["width"], PLOT["height"]
    top, bottom = PLOT["top"], H - PLOT["bottom"]
    hists = {v: histogram(m.f1s) for v, m in summary.models.items()}
    peak = max(int(c.max()) for c, _ in hists.values()) or 1

    def y_of(count):
        return bottom - (bottom - top) * count / peak

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{x_of(0):.6f}" y1="{bottom}" x2="{x_of(1):.6f}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{x_of(0):.6f}" y1="{top}" x2="{x_of(0):.6f}" y2="{bottom}" stroke="black"/>',
    ]
    for i in range(0, 11, 2):
        v = i / 10
        out.append(f'<text x="{x_of(v):.6f}" y="{bottom + 18}" text-anchor="middle">{v:.1f}</text>')
    out.append(f'<text x="{x_of(0.5):.6f}" y="{H - 12}" text-anchor="middle">macro F1</text>')
    out.append(f'<text x="{x_of(0) - 10:.6f}" y="{top + 4}" text-anchor="end">{peak}</text>')
    for v, (counts, edges) in hists.items():
        color = COLORS.get(v, "#777777")
        out.append(f'<g class="histogram" data-model="{escape(v)}">')
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            if c == 0:
                continue
            out.append(
                f'<rect x="{x_of(lo):.6f}" y="{y_of(c):.6f}" width="{x_of(hi) - x_of(lo):.6f}" '
                f'height="{bottom - y_of(c):.6f}" fill="{color}" fill-opacity="0.45" '
                f'stroke="{color}" data-count="{int(c)}"/>'
            )
        out.append("</g>")
    for v, m in summary.models.items():
        color = COLORS.get(v, "#777777")
        x = x_of(m.mean_f1)
        out.append(
            f'<line class="mean-line" data-model="{escape(v)}" data-mean="{m.mean_f1!r}" '
            f'x1="{x:.6f}" y1="{top}" x2="{x:.6f}" y2="{bottom}" stroke="{color}" '
            f'stroke-width="2" stroke-dasharray="6,4"/>'
        )
    lx = W - PLOT["right"] + 15
    for i, v in enumerate(summary.models):
        y = top + 10 + 20 * i
        color = COLORS.get(v, "#777777")
        out.append(f'<rect x="{lx}" y="{y - 9}" width="12" height="12" fill="{color}" fill-opacity="0.6"/>')
        out.append(f'<text x="{lx + 18}" y="{y + 1}">{escape(label(v))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
