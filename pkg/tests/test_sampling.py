import numpy as np
import pytest

from solvlearn.sampling import (
    FeatureMatrix,
    GenSlot,
    LoadSlot,
    MinMaxNormalizer,
    Normal,
    SamplingSpec,
    Uniform,
    build_spec_2d,
    build_spec_full,
    export_pool_csv,
    import_pool_csv,
    sample_pool,
    split_train_test,
)


def test_two_d_spec_dimension(case39):
    spec = build_spec_2d(case39)
    assert spec.dimension == 2
    assert spec.feature_names == ("loadP:3", "loadP:4")
    assert spec.gen_slots == ()


def test_two_d_spec_missing_load():
    from conftest import make_two_bus

    with pytest.raises(ValueError, match="bus 4"):
        build_spec_2d(make_two_bus(), bus_ids=(2, 4))


def test_two_d_samples_within_bounds(case39):
    pool = sample_pool(build_spec_2d(case39), 20000, 5)
    assert pool.rows.min() >= -3000.0
    assert pool.rows.max() <= 3000.0


def test_full_spec_dimension_from_data(case39):
    spec = build_spec_full(case39)
    n_gens = 9  # non-slack in-service generators
    n_loads = 21
    assert spec.dimension == 2 * n_gens + 2 * n_loads == 60
    # block order: generator P, generator Q, load P, load Q
    kinds = [n.split(":")[0] for n in spec.feature_names]
    assert kinds == ["genP"] * 9 + ["genQ"] * 9 + ["loadP"] * 21 + ["loadQ"] * 21
    # slack generator excluded from the sampled slots
    assert all(s.bus_id != case39.slack_bus.id for s in spec.gen_slots)


def test_full_spec_zero_spread_degenerates(case39):
    spec = build_spec_full(case39, load_std_frac=0.0)
    pool = sample_pool(spec, 8, 0)
    load_cols = [i for i, n in enumerate(spec.feature_names) if n.startswith("load")]
    base = pool.rows[0, load_cols]
    assert np.allclose(pool.rows[:, load_cols], base)


def test_two_bus_counting_identity(two_bus):
    spec = build_spec_full(two_bus)
    assert spec.dimension == 2  # no non-slack generators, one load


def test_spec_rejects_slack_generator_slot(case39):
    with pytest.raises(ValueError, match="slack"):
        SamplingSpec(slack_bus_id=31, gen_slots=(GenSlot(31, p=Uniform(0, 1)),))


def test_distribution_validation():
    with pytest.raises(ValueError, match="reversed"):
        Uniform(2.0, 1.0)
    with pytest.raises(ValueError, match="std"):
        Normal(0.0, -1.0)


def test_seeded_determinism(case39):
    spec = build_spec_2d(case39)
    a = sample_pool(spec, 64, 7)
    b = sample_pool(spec, 64, 7)
    assert a.rows.tobytes() == b.rows.tobytes()
    c = sample_pool(spec, 64, 8)
    assert a.rows.tobytes() != c.rows.tobytes()


def test_uniform_monte_carlo_mean(case39):
    # 3*sigma/sqrt(n) for U(-3000, 3000) at n=1e5 is about 16 MW
    pool = sample_pool(build_spec_2d(case39), 100_000, 11)
    assert abs(pool.rows[:, 0].mean()) < 30.0


def test_normal_monte_carlo_std():
    spec = SamplingSpec(slack_bus_id=1, load_slots=(LoadSlot(2, p=Normal(100.0, 50.0)),))
    pool = sample_pool(spec, 100_000, 13)
    assert pool.rows[:, 0].std() == pytest.approx(50.0, abs=1.0)
    assert pool.rows[:, 0].mean() == pytest.approx(100.0, abs=1.0)


def test_normalizer_endpoint_identities():
    X = np.array([[-3000.0], [0.0], [3000.0]])
    nz = MinMaxNormalizer().fit(X)
    out = nz.transform(X)
    assert out[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_normalizer_constant_feature_maps_to_half():
    X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    out = MinMaxNormalizer().fit(X).transform(X)
    assert np.all(out[:, 0] == 0.5)
    assert out[:, 1].tolist() == [0.0, 0.5, 1.0]


def test_normalizer_unit_range_exact():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 4)) * 100.0
    out = MinMaxNormalizer().fit(X).transform(X)
    assert np.all(out.min(axis=0) == 0.0)
    assert np.all(out.max(axis=0) == 1.0)


def test_normalizer_invertible_on_varying_features():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-500.0, 500.0, size=(30, 5))
        nz = MinMaxNormalizer().fit(X)
        back = nz.inverse_transform(nz.transform(X))
        assert np.abs(back - X).max() < 1e-12


def test_split_sizes_and_partition(case39):
    pool = sample_pool(build_spec_2d(case39), 1000, 3)
    train, test = split_train_test(pool, 0.2, seed=9)
    assert (train.n, test.n) == (800, 200)
    merged = np.vstack([train.rows, test.rows])
    assert np.array_equal(
        np.sort(merged, axis=0), np.sort(pool.rows, axis=0)
    )


def test_split_deterministic(case39):
    pool = sample_pool(build_spec_2d(case39), 100, 3)
    a = split_train_test(pool, 0.25, seed=4)
    b = split_train_test(pool, 0.25, seed=4)
    assert a[0].rows.tobytes() == b[0].rows.tobytes()
    assert a[1].rows.tobytes() == b[1].rows.tobytes()


def test_split_rejects_degenerate_fraction(case39):
    pool = sample_pool(build_spec_2d(case39), 10, 0)
    with pytest.raises(ValueError):
        split_train_test(pool, 0.0, seed=0)
    with pytest.raises(ValueError):
        split_train_test(pool, 1.0, seed=0)


def test_spec_json_round_trip(case39):
    for spec in (build_spec_2d(case39), build_spec_full(case39)):
        assert SamplingSpec.from_dict(spec.to_dict()) == spec


def test_pool_csv_round_trip(tmp_path, case39):
    spec = build_spec_2d(case39)
    pool = sample_pool(spec, 17, 21)
    path = tmp_path / "pool.csv"
    export_pool_csv(pool, path)
    back = import_pool_csv(path, spec)
    assert np.array_equal(back.rows, pool.rows)


def test_pool_csv_header_mismatch(tmp_path, case39):
    spec = build_spec_2d(case39)
    export_pool_csv(sample_pool(spec, 3, 0), tmp_path / "pool.csv")
    other = build_spec_full(case39)
    with pytest.raises(ValueError, match="header"):
        import_pool_csv(tmp_path / "pool.csv", other)


def test_feature_matrix_take_and_sample(case39):
    spec = build_spec_2d(case39)
    pool = sample_pool(spec, 10, 1)
    sub = pool.take([2, 5])
    assert sub.n == 2
    assert np.array_equal(sub.rows[1], pool.rows[5])
    s = pool.sample(3)
    assert s.spec is spec
    assert np.array_equal(s.values, pool.rows[3])
