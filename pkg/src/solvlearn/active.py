"""Pool-based batch-mode active learning loop and acquisition functions.

Each iteration trains a fresh classifier on the (optionally under-sampled)
cumulative labeled set, records test accuracy, checks the stopping rule, and
only then queries the next batch: the B unlabeled rows with the highest
acquisition score under the current model, ties broken toward the lowest pool
index. All randomness flows from named sub-streams of one seed, so two
strategies given the same seed share the same initial labeled set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from sklearn.base import clone

from .mlp import LabeledDataset, MlpClassifier
from .sampling import FeatureMatrix, MinMaxNormalizer

__all__ = [
    "Strategy",
    "ALConfig",
    "Acquisition",
    "IterationRecord",
    "ALState",
    "ALResult",
    "score_posteriors",
    "acquire_batch",
    "undersample",
    "run_active_learning",
]

# named sub-stream tags hung off the experiment seed
_STREAM_INIT = 0
_STREAM_UNDERSAMPLE = 1
_STREAM_RANDOM_SCORE = 2

Oracle = Callable[[np.ndarray], np.ndarray]
"""Maps raw feature rows (k, d) to class indices (k,), 1 = solvable."""


class Strategy(str, Enum):
    RANDOM = "random"
    LEAST_CONFIDENT = "least_confident"
    MARGIN = "margin"
    ENTROPY = "entropy"


@dataclass(frozen=True)
class ALConfig:
    initial_size: int = 100
    batch_size: int = 10
    max_iterations: int = 30
    stop_window: int = 4
    stop_accuracy: float = 0.95
    undersample: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.initial_size, self.batch_size, self.max_iterations, self.stop_window) < 1:
            raise ValueError("all counts must be >= 1")
        if not 0 < self.stop_accuracy <= 1:
            raise ValueError("stop_accuracy must lie in (0, 1]")


@dataclass(frozen=True)
class Acquisition:
    pool_index: int
    label: int  # class index, 1 = solvable
    iteration: int


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    labels_consumed: int
    raw_labeled: int
    undersampled: int
    test_accuracy: float


@dataclass
class ALState:
    """Evolving labeled/unlabeled split over one pool."""

    pool: FeatureMatrix
    labels: np.ndarray  # int8 per pool row, -1 = unlabeled
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray
    acquisitions: list[Acquisition] = field(default_factory=list)
    history: list[IterationRecord] = field(default_factory=list)

    def labeled_dataset(self) -> LabeledDataset:
        idx = self.labeled_indices
        one_hot = np.zeros((idx.size, 2))
        one_hot[np.arange(idx.size), self.labels[idx]] = 1.0
        return LabeledDataset(self.pool.rows[idx], one_hot)

    def check_conservation(self) -> None:
        merged = np.sort(np.concatenate([self.labeled_indices, self.unlabeled_indices]))
        if merged.size != self.pool.n or not (merged == np.arange(self.pool.n)).all():
            raise AssertionError("labeled/unlabeled indices do not partition the pool")


@dataclass(frozen=True, eq=False)
class ALResult:
    model: MlpClassifier
    history: list[IterationRecord]
    acquisitions: list[Acquisition]
    labels_consumed: int


def score_posteriors(
    strategy: Strategy, posteriors: np.ndarray, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Informativeness score per posterior row; higher means query first.

    least_confident: -max_q p(C_q|x); margin: -|p(C_2|x) - p(C_1|x)|;
    entropy: -sum_q p log p (natural log); random: seeded uniform draw.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"posteriors must be (n, 2), got {p.shape}")
    strategy = Strategy(strategy)
    if strategy is Strategy.RANDOM:
        if rng is None:
            raise ValueError("random strategy needs an rng")
        return rng.random(p.shape[0])
    if strategy is Strategy.LEAST_CONFIDENT:
        return -p.max(axis=1)
    if strategy is Strategy.MARGIN:
        return -np.abs(p[:, 1] - p[:, 0])
    logp = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -np.sum(p * logp, axis=1)


def acquire_batch(
    strategy: Strategy,
    model: MlpClassifier,
    rows: np.ndarray,
    pool_indices: np.ndarray,
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Pool indices of the batch_size highest-scoring unlabeled rows.

    Equivalent to repeated argmax-and-remove without retraining inside the
    batch. Ties resolve toward the lowest pool index.
    """
    pool_indices = np.asarray(pool_indices)
    if batch_size > pool_indices.size:
        raise ValueError(f"pool exhausted: need {batch_size} rows, have {pool_indices.size}")
    scores = score_posteriors(strategy, model.predict_proba(rows), rng)
    order = np.lexsort((pool_indices, -scores))
    return pool_indices[order[:batch_size]]


def undersample(data: LabeledDataset, seed) -> LabeledDataset:
    """Randomly discard majority rows to match the minority class count.

    Row order is preserved, minority rows are untouched, and the retained
    majority rows are a subset of the originals.
    """
    classes = np.argmax(data.labels, axis=1)
    n0, n1 = data.class_counts()
    if n0 == 0 or n1 == 0:
        raise ValueError("undersampling needs both classes present")
    if n0 == n1:
        return data
    minority = int(n1 < n0)
    keep_count = min(n0, n1)
    majority_idx = np.flatnonzero(classes != minority)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kept_majority = rng.choice(majority_idx, size=keep_count, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(classes == minority), kept_majority]))
    return data.take(keep)


def _stop_rule_met(accuracies: list[float], window: int, threshold: float) -> bool:
    return len(accuracies) >= window and float(np.mean(accuracies[-window:])) > threshold


def run_active_learning(
    pool: FeatureMatrix,
    test_set: LabeledDataset,
    oracle: Oracle,
    strategy: Strategy,
    cfg: ALConfig,
    model: MlpClassifier,
    normalizer: MinMaxNormalizer | None = None,
) -> ALResult:
    """Run the batch-mode active learning loop on an unlabeled pool.

    ``pool`` and ``test_set`` carry raw (physical-unit) features; the oracle is
    called on raw rows while the classifier sees normalized ones. The test set
    must be pre-labeled and disjoint from the pool; its labeling cost is
    accounted separately from the returned label budget.
    """
    strategy = Strategy(strategy)
    if cfg.initial_size > pool.n:
        raise ValueError("initial_size exceeds pool size")

    def model_view(rows: np.ndarray) -> np.ndarray:
        return normalizer.transform(rows) if normalizer is not None else rows

    test_X = model_view(test_set.features)

    init_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_INIT)))
    random_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_RANDOM_SCORE)))

    labels = np.full(pool.n, -1, dtype=np.int8)
    initial = np.sort(init_rng.choice(pool.n, size=cfg.initial_size, replace=False))
    labels[initial] = _call_oracle(oracle, pool.rows[initial], iteration=0, pool_indices=initial)
    state = ALState(
        pool=pool,
        labels=labels,
        labeled_indices=initial,
        unlabeled_indices=np.setdiff1d(np.arange(pool.n), initial),
    )

    accuracies: list[float] = []
    trained = None
    for iteration in range(1, cfg.max_iterations + 1):
        raw = state.labeled_dataset()
        if cfg.undersample:
            balance_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, _STREAM_UNDERSAMPLE, iteration))
            )
            train_set = undersample(raw, balance_rng)
        else:
            train_set = raw
        trained = clone(model).fit(model_view(train_set.features), train_set.labels)
        accuracy = trained.score(test_X, test_set.labels)
        accuracies.append(accuracy)
        state.history.append(
            IterationRecord(
                iteration=iteration,
                labels_consumed=int(state.labeled_indices.size),
                raw_labeled=raw.n,
                undersampled=train_set.n,
                test_accuracy=accuracy,
            )
        )
        if _stop_rule_met(accuracies, cfg.stop_window, cfg.stop_accuracy):
            break
        if iteration == cfg.max_iterations:
            break

        batch = acquire_batch(
            strategy,
            trained,
            model_view(pool.rows[state.unlabeled_indices]),
            state.unlabeled_indices,
            cfg.batch_size,
            random_rng,
        )
        batch_labels = _call_oracle(oracle, pool.rows[batch], iteration=iteration, pool_indices=batch)
        state.labels[batch] = batch_labels
        state.labeled_indices = np.sort(np.concatenate([state.labeled_indices, batch]))
        state.unlabeled_indices = np.setdiff1d(state.unlabeled_indices, batch)
        state.acquisitions.extend(
            Acquisition(pool_index=int(i), label=int(l), iteration=iteration)
            for i, l in zip(batch, batch_labels)
        )
        state.check_conservation()

    return ALResult(
        model=trained,
        history=state.history,
        acquisitions=state.acquisitions,
        labels_consumed=int(state.labeled_indices.size),
    )


def _call_oracle(
    oracle: Oracle, rows: np.ndarray, iteration: int, pool_indices=None
) -> np.ndarray:
    where = f"iteration {iteration}"
    if pool_indices is not None:
        where += f", pool indices {np.asarray(pool_indices)[:5].tolist()}..."
    try:
        out = np.asarray(oracle(rows), dtype=np.int8)
    except Exception as exc:
        raise RuntimeError(f"oracle failed at {where}: {exc}") from exc
    if out.shape != (rows.shape[0],) or not np.isin(out, (0, 1)).all():
        raise RuntimeError(f"oracle returned invalid labels at {where}")
    return out
