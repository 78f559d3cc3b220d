"""Seeded 80/20 trials shared across the four model variants."""

from __future__ import annotations

import logging
import multiprocessing as mp
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ConfigError, DivergenceError, StratificationError
from ..features import FeatureTensor
from ..nn.layers import log_softmax
from ..nn.model import VARIANTS, Adam, ModelConfig, build_model, train_step

log = logging.getLogger(__name__)

TEST_FRACTION = 0.2
EPOCHS = 6

MODEL_LABELS = {
    "conv2d_full": "1 spec, 2DConv-Full",
    "conv2d_novox": "1 spec, 2DConv-No-Vox",
    "conv2d_stems3": "3 spec, 2DConv",
    "dwconv_stems3": "3 spec, DW-2DConv",
}
# which feature variant feeds each model
MODEL_INPUTS = {
    "conv2d_full": "mix_full",
    "conv2d_novox": "mix_novox",
    "conv2d_stems3": "stems3",
    "dwconv_stems3": "stems3",
}


def substream(seed: int, name: str) -> np.random.SeedSequence:
    """Independent, reproducible stream for a named use of a trial seed."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


# --------------------------------------------------------------------------
# Splits, weights, metrics


def split_trial(n: int, labels, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split: each class sends floor(0.2 * n_c) members to test.

    Returns sorted ``(train_ids, test_ids)``.
    """
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ConfigError(f"expected {n} labels, got {labels.size}")
    classes, counts = np.unique(labels, return_counts=True)
    if n < 2 * len(classes):
        raise StratificationError(f"{n} examples cannot cover {len(classes)} classes twice")
    if counts.min() < 2:
        bad = classes[counts < 2].tolist()
        raise StratificationError(f"classes {bad} have fewer than 2 members")
    rng = np.random.default_rng(substream(seed, "split"))
    test = []
    for cls, count in zip(classes, counts):
        members = np.flatnonzero(labels == cls)
        k = int(np.floor(TEST_FRACTION * count))
        test.extend(rng.permutation(members)[:k].tolist())
    if not test:
        raise StratificationError("test split is empty; some class needs at least 5 members")
    test_ids = np.array(sorted(test), dtype=np.int64)
    train_ids = np.setdiff1d(np.arange(n), test_ids)
    return train_ids, test_ids


def class_weights(train_labels, n_classes: int) -> np.ndarray:
    """Balanced weights ``n_train / (K * n_c)``; absent classes get weight 1."""
    train_labels = np.asarray(train_labels)
    counts = np.bincount(train_labels, minlength=n_classes).astype(np.float64)
    w = np.ones(n_classes)
    present = counts > 0
    w[present] = train_labels.size / (n_classes * counts[present])
    return w


def _per_class_f1(predictions, labels, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    f1 = np.zeros(n_classes)
    support = np.zeros(n_classes)
    for k in range(n_classes):
        tp = np.sum((predictions == k) & (labels == k))
        fp = np.sum((predictions == k) & (labels != k))
        fn = np.sum((predictions != k) & (labels == k))
        denom = 2 * tp + fp + fn
        f1[k] = 2 * tp / denom if denom else 0.0
        support[k] = tp + fn
    return f1, support


def macro_f1(predictions, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; classes never seen count as 0."""
    if len(predictions) != len(labels):
        raise ConfigError("predictions and labels differ in length")
    f1, _ = _per_class_f1(predictions, labels, n_classes)
    return float(f1.mean())


def weighted_f1(predictions, labels, n_classes: int) -> float:
    f1, support = _per_class_f1(predictions, labels, n_classes)
    total = support.sum()
    return float((f1 * support).sum() / total) if total else 0.0


# --------------------------------------------------------------------------
# Trials


@dataclass
class EpochRecord:
    train_loss: float
    test_loss: float
    test_accuracy: float
    test_f1: float
    test_weighted_f1: float = float("nan")


@dataclass
class TrialResult:
    trial: int
    trial_seed: int
    model_variant: str
    per_epoch: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int | None = None
    train_ids: np.ndarray | None = None
    test_ids: np.ndarray | None = None
    failed: bool = False
    error: str = ""

    def select(self) -> None:
        """Pick the epoch with minimum test loss (earliest on ties)."""
        if not self.per_epoch:
            raise ConfigError("no epochs recorded")
        self.selected_epoch = int(np.argmin([e.test_loss for e in self.per_epoch]))

    def _selected(self) -> EpochRecord | None:
        if self.failed or self.selected_epoch is None:
            return None
        return self.per_epoch[self.selected_epoch]

    @property
    def selected_accuracy(self) -> float | None:
        rec = self._selected()
        return None if rec is None else rec.test_accuracy

    @property
    def selected_f1(self) -> float | None:
        rec = self._selected()
        return None if rec is None else rec.test_f1

    @property
    def selected_weighted_f1(self) -> float | None:
        rec = self._selected()
        return None if rec is None else rec.test_weighted_f1


def _as_array(features) -> np.ndarray:
    return features.data if isinstance(features, FeatureTensor) else np.asarray(features)


def evaluate(model, x: np.ndarray, labels: np.ndarray, n_classes: int,
             batch_size: int = 16) -> tuple[float, float, float, float]:
    """Eval-mode (unweighted) cross-entropy, accuracy, macro F1, weighted F1."""
    logits = np.concatenate([model.forward(x[i:i + batch_size]).astype(np.float64)
                             for i in range(0, len(x), batch_size)])
    lsm = log_softmax(logits)
    loss = float(-lsm[np.arange(len(labels)), labels].mean())
    preds = lsm.argmax(axis=1)
    acc = float(np.mean(preds == labels))
    return loss, acc, macro_f1(preds, labels, n_classes), weighted_f1(preds, labels, n_classes)


def train_variant(config: ModelConfig, x: np.ndarray, labels: np.ndarray,
                  train_ids: np.ndarray, test_ids: np.ndarray, seed: int,
                  epochs: int = EPOCHS, trial: int = 0) -> TrialResult:
    """Train one model for ``epochs`` epochs, recording test metrics after each."""
    variant = config.variant
    result = TrialResult(trial, seed, variant, train_ids=train_ids, test_ids=test_ids)
    k = config.n_classes
    model = build_model(config, substream(seed, f"model/{variant}"))
    weights = class_weights(labels[train_ids], k)
    order_rng = np.random.default_rng(substream(seed, f"batches/{variant}"))
    opt = Adam.for_config(config)
    x_test, y_test = x[test_ids], labels[test_ids]
    bs = config.batch_size
    try:
        for _ in range(epochs):
            order = order_rng.permutation(train_ids)
            total = 0.0
            for i in range(0, len(order), bs):
                batch = order[i:i + bs]
                total += train_step(model, x[batch], labels[batch], opt, weights) * len(batch)
            test_loss, acc, f1, wf1 = evaluate(model, x_test, y_test, k)
            if not np.isfinite(test_loss):
                raise DivergenceError(f"non-finite test loss {test_loss}")
            result.per_epoch.append(EpochRecord(total / len(order), test_loss, acc, f1, wf1))
    except DivergenceError as exc:
        log.warning("trial %d %s diverged: %s", trial, variant, exc)
        result.failed = True
        result.error = str(exc)
        return result
    result.select()
    return result


def default_configs(n_classes: int, input_shape=(128, 458), **overrides) -> dict[str, ModelConfig]:
    return {v: ModelConfig(v, n_classes, input_shape=tuple(input_shape), **overrides)
            for v in VARIANTS}


def run_trial(features: dict, labels, seed: int, configs: dict[str, ModelConfig] | None = None,
              epochs: int = EPOCHS, trial: int = 0) -> list[TrialResult]:
    """Train every configured variant on the same seeded split.

    ``features`` maps model variant (``conv2d_full`` ...) to its input
    tensor or array of shape ``(N, H, W, C)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    for variant, feats in features.items():
        if len(_as_array(feats)) != n:
            raise ConfigError(f"{variant}: {len(_as_array(feats))} examples, {n} labels")
    if configs is None:
        shape = next(iter(features.values()))
        configs = default_configs(int(labels.max()) + 1, _as_array(shape).shape[1:3])
    train_ids, test_ids = split_trial(n, labels, seed)
    out = []
    with threadpool_limits(limits=1):
        for variant in VARIANTS:
            if variant not in configs or variant not in features:
                continue
            x = _as_array(features[variant])
            out.append(train_variant(configs[variant], x, labels, train_ids, test_ids,
                                     seed, epochs, trial))
    return out


_SHARED: dict = {}


def _trial_job(args):
    trial, seed, epochs = args
    return run_trial(_SHARED["features"], _SHARED["labels"], seed, _SHARED["configs"],
                     epochs, trial)


def run_trials(features: dict, labels, base_seed: int, n_trials: int,
               configs: dict[str, ModelConfig] | None = None, epochs: int = EPOCHS,
               jobs: int = 1, progress=None) -> list[TrialResult]:
    """Run ``n_trials`` trials with seeds ``base_seed + i``.

    Results are ordered by trial then variant whatever ``jobs`` is; each
    trial computes identically in serial and parallel mode.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if configs is None:
        first = _as_array(next(iter(features.values())))
        configs = default_configs(int(labels.max()) + 1, first.shape[1:3])
    tasks = [(i, base_seed + i, epochs) for i in range(n_trials)]
    results: list[TrialResult] = []
    if jobs <= 1:
        for trial, seed, ep in tasks:
            rs = run_trial(features, labels, seed, configs, ep, trial)
            results.extend(rs)
            if progress:
                progress(trial, rs)
    else:
        _SHARED.update(features=features, labels=labels, configs=configs)
        ctx = mp.get_context("fork")
        try:
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                for rs in pool.map(_trial_job, tasks):
                    results.extend(rs)
                    if progress:
                        progress(rs[0].trial if rs else -1, rs)
        finally:
            _SHARED.clear()
    order = {v: i for i, v in enumerate(VARIANTS)}
    results.sort(key=lambda r: (r.trial, order[r.model_variant]))
    return results


def model_inputs(stems3, mix_full, mix_novox) -> dict:
    """Map each model variant to the feature tensor it consumes."""
    by_input = {"stems3": stems3, "mix_full": mix_full, "mix_novox": mix_novox}
    return {v: by_input[src] for v, src in MODEL_INPUTS.items() if by_input[src] is not None}
