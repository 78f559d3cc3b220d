"""Trial summaries and one-sided Welch t-tests against the baseline model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from ..errors import SummaryError
from ..nn.model import VARIANTS
from .protocol import TrialResult

BASELINE = "conv2d_novox"
STEMS_MODELS = ("conv2d_stems3", "dwconv_stems3")
TEST_NAME = "one-sided Welch two-sample t-test (alternative: greater)"
VAR_EPS = 1e-12
LOW_POWER_TRIALS = 10
HIST_BINS = 20


@dataclass
class WelchResult:
    t: float
    df: float
    p: float


def welch_ttest(a, b, alternative: str = "greater") -> WelchResult:
    """Welch's unequal-variance t-test of mean(a) vs mean(b).

    The squared standard error gets ``1e-12`` added so zero-variance
    samples still give a finite statistic.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise SummaryError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    se2 = va + vb + VAR_EPS
    t = (math.fsum(a) / na - math.fsum(b) / nb) / math.sqrt(se2)
    denom = va * va / (na - 1) + vb * vb / (nb - 1)
    df = (va + vb) ** 2 / denom if denom > 0 else float(na + nb - 2)
    if alternative == "greater":
        p = float(stdtr(df, -t))
    elif alternative == "less":
        p = float(stdtr(df, t))
    elif alternative == "two-sided":
        p = float(2 * stdtr(df, -abs(t)))
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return WelchResult(float(t), float(df), p)


def histogram(values, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ``bins`` equal bins spanning [0, 1]."""
    return np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 1.0))


@dataclass
class ModelSummary:
    variant: str
    n_trials: int
    n_failed: int
    mean_accuracy: float
    mean_f1: float
    mean_weighted_f1: float
    accuracies: list[float]
    f1s: list[float]


@dataclass
class ExperimentSummary:
    models: dict[str, ModelSummary]
    baseline: str
    tests: dict[str, WelchResult] = field(default_factory=dict)
    test_name: str = TEST_NAME
    low_power: bool = False

    def histograms(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return {v: histogram(m.f1s) for v, m in self.models.items()}


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def summarize(results: list[TrialResult], baseline: str = BASELINE) -> ExperimentSummary:
    """Per-model means over completed trials and Welch tests vs ``baseline``.

    Means use exactly-rounded summation so the value does not depend on
    the order trials finished in.
    """
    by_model: dict[str, list[TrialResult]] = {}
    for r in results:
        by_model.setdefault(r.model_variant, []).append(r)
    if not by_model:
        raise SummaryError("no trial results")
    models = {}
    order = [v for v in VARIANTS if v in by_model] + sorted(set(by_model) - set(VARIANTS))
    for v in order:
        rs = sorted(by_model[v], key=lambda r: r.trial)
        ok = [r for r in rs if not r.failed]
        if len(ok) < 2:
            raise SummaryError(f"{v}: need at least 2 completed trials, have {len(ok)}")
        acc = [r.selected_accuracy for r in ok]
        f1 = [r.selected_f1 for r in ok]
        wf1 = [r.selected_weighted_f1 for r in ok]
        wf1 = [x for x in wf1 if x is not None and not math.isnan(x)]
        models[v] = ModelSummary(
            v, len(ok), len(rs) - len(ok), _mean(acc), _mean(f1),
            _mean(wf1) if wf1 else float("nan"), acc, f1,
        )
    summary = ExperimentSummary(models, baseline)
    if baseline in models:
        for v in models:
            if v != baseline and v in STEMS_MODELS:
                summary.tests[v] = welch_ttest(models[v].f1s, models[baseline].f1s)
        summary.low_power = min(m.n_trials for m in models.values()) < LOW_POWER_TRIALS
    return summary
