import numpy as np
import pytest
from sklearn.base import clone

from solvlearn.active import (
    ALConfig,
    Strategy,
    acquire_batch,
    run_active_learning,
    score_posteriors,
    undersample,
)
from solvlearn.mlp import LabeledDataset, MlpClassifier
from solvlearn.sampling import (
    FeatureMatrix,
    LoadSlot,
    MinMaxNormalizer,
    SamplingSpec,
    Uniform,
)

THREE_POSTERIORS = np.array([[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]])

TOY_SPEC = SamplingSpec(
    slack_bus_id=1,
    load_slots=(LoadSlot(2, p=Uniform(0.0, 1.0)), LoadSlot(3, p=Uniform(0.0, 1.0))),
)


def toy_oracle(rows: np.ndarray) -> np.ndarray:
    """Diagonal split of the unit square; cheap stand-in for the solver."""
    return (rows.sum(axis=1) > 1.0).astype(np.int8)


def toy_pool(n: int, seed: int = 0) -> FeatureMatrix:
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.random((n, 2)), TOY_SPEC, seed=seed)


def toy_test_set(n: int = 200, seed: int = 99) -> LabeledDataset:
    pool = toy_pool(n, seed)
    labels = toy_oracle(pool.rows)
    one_hot = np.zeros((n, 2))
    one_hot[np.arange(n), labels] = 1.0
    return LabeledDataset(pool.rows, one_hot)


def test_margin_score_example():
    scores = score_posteriors(Strategy.MARGIN, THREE_POSTERIORS)
    # margins are 0.8, 0.2, 0.6: the (0.6, 0.4) row has the smallest gap
    assert np.allclose(scores, [-0.8, -0.2, -0.6])
    assert int(np.argmax(scores)) == 1


def test_least_confident_score_example():
    scores = score_posteriors(Strategy.LEAST_CONFIDENT, THREE_POSTERIORS)
    assert np.allclose(scores, [-0.9, -0.6, -0.8])
    assert int(np.argmax(scores)) == 1


def test_entropy_score_example():
    scores = score_posteriors(Strategy.ENTROPY, np.array([[0.5, 0.5]]))
    assert scores[0] == pytest.approx(np.log(2.0), abs=1e-12)
    # uniform posterior is the global maximum
    others = score_posteriors(Strategy.ENTROPY, THREE_POSTERIORS)
    assert (others < np.log(2.0)).all()


def test_entropy_handles_degenerate_posteriors():
    scores = score_posteriors(Strategy.ENTROPY, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(scores, 0.0)


def test_random_scores_seeded():
    rng = np.random.default_rng(1)
    a = score_posteriors(Strategy.RANDOM, THREE_POSTERIORS, np.random.default_rng(5))
    b = score_posteriors(Strategy.RANDOM, THREE_POSTERIORS, np.random.default_rng(5))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError, match="rng"):
        score_posteriors(Strategy.RANDOM, THREE_POSTERIORS)


class _FixedPosteriorModel:
    """Stub classifier returning pre-set posteriors for acquisition tests."""

    def __init__(self, posteriors):
        self.posteriors = np.asarray(posteriors)

    def predict_proba(self, rows):
        return self.posteriors[: len(rows)]


def test_acquire_batch_single_best():
    model = _FixedPosteriorModel(THREE_POSTERIORS)
    picked = acquire_batch(Strategy.MARGIN, model, np.zeros((3, 2)), np.array([10, 11, 12]), 1)
    assert picked.tolist() == [11]


def test_acquire_batch_exhaustive_in_score_order():
    model = _FixedPosteriorModel(THREE_POSTERIORS)
    picked = acquire_batch(Strategy.MARGIN, model, np.zeros((3, 2)), np.array([10, 11, 12]), 3)
    assert picked.tolist() == [11, 12, 10]


def test_acquire_batch_tie_break_lowest_index():
    model = _FixedPosteriorModel(np.tile([0.7, 0.3], (5, 1)))
    picked = acquire_batch(
        Strategy.MARGIN, model, np.zeros((5, 2)), np.array([40, 7, 23, 5, 12]), 3
    )
    assert picked.tolist() == [5, 7, 12]


def test_acquire_batch_pool_exhausted():
    model = _FixedPosteriorModel(THREE_POSTERIORS)
    with pytest.raises(ValueError, match="exhausted"):
        acquire_batch(Strategy.MARGIN, model, np.zeros((3, 2)), np.array([1, 2, 3]), 4)


def test_binary_ranking_equivalence():
    """Least-confident, margin and entropy order binary posteriors identically."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        p1 = rng.random(n)
        posteriors = np.column_stack([1.0 - p1, p1])
        indices = np.arange(n)
        orders = []
        for strategy in (Strategy.LEAST_CONFIDENT, Strategy.MARGIN, Strategy.ENTROPY):
            scores = score_posteriors(strategy, posteriors)
            orders.append(np.lexsort((indices, -scores)).tolist())
        assert orders[0] == orders[1] == orders[2]


def test_undersample_reduces_majority():
    rng = np.random.default_rng(4)
    labels = np.array([0] * 30 + [1] * 10)
    one_hot = np.zeros((40, 2))
    one_hot[np.arange(40), labels] = 1.0
    data = LabeledDataset(rng.random((40, 3)), one_hot)
    balanced = undersample(data, seed=1)
    assert balanced.class_counts() == (10, 10)
    # retained rows are a subset of the originals
    original = {row.tobytes() for row in data.features}
    assert all(row.tobytes() in original for row in balanced.features)
    # minority rows are untouched
    kept_minority = balanced.features[np.argmax(balanced.labels, axis=1) == 1]
    assert np.array_equal(kept_minority, data.features[labels == 1])


def test_undersample_balanced_input_unchanged():
    labels = np.array([0] * 15 + [1] * 15)
    one_hot = np.zeros((30, 2))
    one_hot[np.arange(30), labels] = 1.0
    data = LabeledDataset(np.random.default_rng(0).random((30, 2)), one_hot)
    assert undersample(data, seed=3) is data


def test_undersample_single_class_rejected():
    one_hot = np.tile([1.0, 0.0], (5, 1))
    data = LabeledDataset(np.zeros((5, 2)), one_hot)
    with pytest.raises(ValueError, match="both classes"):
        undersample(data, seed=0)


def test_undersample_seeded():
    labels = np.array([0] * 20 + [1] * 5)
    one_hot = np.zeros((25, 2))
    one_hot[np.arange(25), labels] = 1.0
    data = LabeledDataset(np.random.default_rng(1).random((25, 2)), one_hot)
    a = undersample(data, seed=7)
    b = undersample(data, seed=7)
    assert np.array_equal(a.features, b.features)


def _toy_run(strategy, *, n=120, undersample_flag=True, seed=0, **overrides):
    defaults = dict(initial_size=30, batch_size=10, max_iterations=4,
                    stop_window=3, stop_accuracy=0.999, undersample=undersample_flag,
                    seed=seed)
    defaults.update(overrides)
    cfg = ALConfig(**defaults)
    pool = toy_pool(n)
    model = MlpClassifier(hidden_layer_sizes=(8,), epochs=40, seed=5)
    return run_active_learning(pool, toy_test_set(), toy_oracle, strategy, cfg, model)


def test_run_budget_accounting_and_history():
    result = _toy_run(Strategy.MARGIN)
    # ran to the iteration cap: 3 acquisition rounds after the initial 30
    assert result.labels_consumed == 30 + 3 * 10
    assert [r.iteration for r in result.history] == [1, 2, 3, 4]
    assert result.history[0].raw_labeled == 30
    assert result.history[-1].raw_labeled == 60
    assert len(result.acquisitions) == 30


def test_run_acquisition_log_monotone_and_unique():
    result = _toy_run(Strategy.ENTROPY)
    indices = [a.pool_index for a in result.acquisitions]
    assert len(indices) == len(set(indices))
    iterations = [a.iteration for a in result.acquisitions]
    assert iterations == sorted(iterations)


def test_run_undersampled_never_exceeds_raw():
    result = _toy_run(Strategy.MARGIN)
    for record in result.history:
        assert record.undersampled <= record.raw_labeled


def test_same_seed_shares_initial_iteration_across_strategies():
    a = _toy_run(Strategy.RANDOM, seed=11)
    b = _toy_run(Strategy.MARGIN, seed=11)
    assert a.history[0] == b.history[0]
    # acquisitions diverge afterwards
    assert [x.pool_index for x in a.acquisitions[:10]] != [
        x.pool_index for x in b.acquisitions[:10]
    ]


def test_run_is_deterministic():
    a = _toy_run(Strategy.LEAST_CONFIDENT, seed=3)
    b = _toy_run(Strategy.LEAST_CONFIDENT, seed=3)
    assert a.history == b.history
    assert a.acquisitions == b.acquisitions


def test_stop_rule_waits_for_window():
    # an impossible bar keeps the loop running to the cap even at accuracy 1.0
    result = _toy_run(Strategy.MARGIN, stop_accuracy=1.0, max_iterations=3)
    assert len(result.history) == 3


def test_stop_rule_triggers_on_window_mean():
    # a trivial bar stops as soon as the window fills
    result = _toy_run(Strategy.MARGIN, stop_accuracy=0.01, stop_window=2, max_iterations=6)
    assert len(result.history) == 2
    assert result.labels_consumed == 30 + 1 * 10


def test_random_full_pool_acquisition_equals_passive():
    """One random batch sweeping the rest of the pool, then a final retrain,
    matches passive training on the fully labeled pool bit for bit."""
    n = 80
    pool = toy_pool(n, seed=2)
    model = MlpClassifier(hidden_layer_sizes=(8,), epochs=30, seed=9)
    cfg = ALConfig(initial_size=50, batch_size=30, max_iterations=2,
                   stop_window=2, stop_accuracy=1.0, undersample=False, seed=1)
    result = run_active_learning(pool, toy_test_set(), toy_oracle,
                                 Strategy.RANDOM, cfg, model)
    assert result.labels_consumed == n

    labels = toy_oracle(pool.rows)
    one_hot = np.zeros((n, 2))
    one_hot[np.arange(n), labels] = 1.0
    passive = clone(model).fit(pool.rows, one_hot)
    for (wa, ba), (wb, bb) in zip(result.model.layers_, passive.layers_):
        assert wa.tobytes() == wb.tobytes()
        assert ba.tobytes() == bb.tobytes()


def test_run_with_normalizer_consistent():
    pool = toy_pool(100, seed=5)
    normalizer = MinMaxNormalizer().fit(pool.rows)
    cfg = ALConfig(initial_size=30, batch_size=10, max_iterations=3,
                   stop_window=2, stop_accuracy=0.999, seed=2)
    model = MlpClassifier(hidden_layer_sizes=(8,), epochs=30, seed=5)
    result = run_active_learning(pool, toy_test_set(), toy_oracle,
                                 Strategy.MARGIN, cfg, model, normalizer)
    assert result.model.n_features_in_ == 2
    assert 0.0 <= result.history[-1].test_accuracy <= 1.0


def test_oracle_failure_carries_context():
    def broken(rows):
        raise RuntimeError("solver blew up")

    pool = toy_pool(50)
    cfg = ALConfig(initial_size=10, batch_size=5, max_iterations=2,
                   stop_window=2, stop_accuracy=0.999, seed=0)
    model = MlpClassifier(hidden_layer_sizes=(4,), epochs=5, seed=0)
    with pytest.raises(RuntimeError, match="iteration 0"):
        run_active_learning(pool, toy_test_set(), broken, Strategy.MARGIN, cfg, model)


def test_alconfig_validation():
    with pytest.raises(ValueError):
        ALConfig(initial_size=0)
    with pytest.raises(ValueError):
        ALConfig(stop_accuracy=0.0)
