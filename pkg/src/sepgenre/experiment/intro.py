"""Binary similar-pair vs different-pair genre tasks on single mix spectrograms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ConfigError
from ..features import FeatureTensor
from ..nn.model import ModelConfig
from .protocol import EPOCHS, split_trial, train_variant


@dataclass
class PairTaskResult:
    genres: tuple[str, str]
    accuracies: list[float]

    @property
    def mean_accuracy(self) -> float:
        return math.fsum(self.accuracies) / len(self.accuracies)


@dataclass
class SimilarDifferentResult:
    similar: PairTaskResult
    different: PairTaskResult

    @property
    def gap(self) -> float:
        return self.different.mean_accuracy - self.similar.mean_accuracy


def _pair_task(features: FeatureTensor, pair: tuple[str, str], seed: int, trials: int,
               epochs: int, config_overrides: dict) -> PairTaskResult:
    a, b = pair
    if a == b:
        raise ConfigError(f"cannot classify genre {a!r} against itself")
    for g in pair:
        if g not in features.class_names:
            raise ConfigError(f"genre {g!r} not in feature tensor")
    ia, ib = features.class_names.index(a), features.class_names.index(b)
    keep = np.flatnonzero((features.labels == ia) | (features.labels == ib))
    x = features.data[keep]
    y = (features.labels[keep] == ib).astype(np.int64)
    config = ModelConfig("conv2d_full", 2, input_shape=x.shape[1:3], **config_overrides)
    accs = []
    with threadpool_limits(limits=1):
        for t in range(trials):
            train_ids, test_ids = split_trial(len(y), y, seed + t)
            r = train_variant(config, x, y, train_ids, test_ids, seed + t, epochs, t)
            if not r.failed:
                accs.append(r.selected_accuracy)
    if not accs:
        raise ConfigError(f"every trial diverged for pair {pair}")
    return PairTaskResult((a, b), accs)


def similar_vs_different(features: FeatureTensor, similar_pair: tuple[str, str],
                         different_pair: tuple[str, str], seed: int, trials: int = 10,
                         epochs: int = EPOCHS, **config_overrides) -> SimilarDifferentResult:
    """Train the single-spectrogram model on each binary task under the trial protocol.

    ``features`` is a ``mix_full`` tensor containing all four genres.
    """
    if features.data.shape[3] != 1:
        raise ConfigError("similar/different tasks use single-spectrogram (mix) features")
    sim = _pair_task(features, tuple(similar_pair), seed, trials, epochs, config_overrides)
    diff = _pair_task(features, tuple(different_pair), seed, trials, epochs, config_overrides)
    return SimilarDifferentResult(sim, diff)
