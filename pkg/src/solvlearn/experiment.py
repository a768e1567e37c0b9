"""Experiment orchestration: configs, label caching, multi-seed runs, metrics.

A run cell is one (strategy, seed) pair. All cells of one seed share the same
pool, split, normalizer and initial labeled set because every random stream is
a named sub-stream of the cell seed; only the acquisition choices differ, so
strategy comparisons isolate the acquisition effect. Oracle labels are cached
on disk keyed by (network, solver config, feature row), which amortizes the
test-set labeling across strategies.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .active import ALConfig, ALResult, Strategy, run_active_learning
from .matpower import parse_case_file
from .mlp import LabeledDataset, MlpClassifier, save_model
from .network import PowerNetwork
from .powerflow import PfConfig, label_batch
from .sampling import (
    FeatureMatrix,
    MinMaxNormalizer,
    SamplingSpec,
    build_spec_2d,
    build_spec_full,
    sample_pool,
    split_train_test,
)

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "LabelCache",
    "run_experiment",
    "export_boundary_grid",
    "write_metrics_csv",
    "write_summary_csv",
]

logger = logging.getLogger(__name__)

METRICS_HEADER = ("strategy", "seed", "iteration", "labels_consumed",
                  "raw_labeled", "undersampled", "test_accuracy")

REFERENCE_FEATURE_COUNT = 57  # published full-injection feature count for this case family

# named sub-stream tags hung off each cell seed (the active loop uses 0-2)
_STREAM_POOL = 10
_STREAM_SPLIT = 11
_STREAM_TRAIN = 12


def _stream_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence((seed, tag)).generate_state(1)[0])


@dataclass(frozen=True)
class MetricsRecord:
    strategy: str
    seed: int
    iteration: int
    labels_consumed: int
    raw_labeled: int
    undersampled: int
    test_accuracy: float


@dataclass(frozen=True)
class ExperimentConfig:
    case_file: str
    kind: str = "2d"  # "2d" | "full"
    pool_size: int = 5000
    test_frac: float = 0.2
    load_std_frac: float = 0.5  # full-injection load spread
    bounds_mw: tuple[float, float] = (-3000.0, 3000.0)  # 2d load sweep
    sweep_buses: tuple[int, int] = (3, 4)
    sampling_spec: dict | None = None  # explicit spec overriding the kind builders
    strategies: tuple[str, ...] = (Strategy.MARGIN.value, Strategy.RANDOM.value)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    al: ALConfig = field(default_factory=ALConfig)
    train: dict = field(default_factory=dict)
    pf: PfConfig = field(default_factory=PfConfig)
    out_dir: str = "out"
    boundary_resolution: int = 100
    use_cache: bool = True

    def __post_init__(self):
        if self.kind not in ("2d", "full"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        budget = self.al.initial_size + self.al.max_iterations * self.al.batch_size
        if self.pool_size < budget:
            raise ValueError(
                f"pool_size {self.pool_size} cannot cover the label budget {budget}"
            )
        for s in self.strategies:
            Strategy(s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["al"] = asdict(self.al)
        d["pf"] = asdict(self.pf)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "al" in d:
            d["al"] = ALConfig(**d["al"])
        if "pf" in d:
            d["pf"] = PfConfig(**d["pf"])
        for key in ("bounds_mw", "sweep_buses", "strategies", "seeds"):
            if key in d:
                d[key] = tuple(d[key])
        train = d.get("train")
        if train and isinstance(train.get("hidden_layer_sizes"), list):
            train = dict(train, hidden_layer_sizes=tuple(train["hidden_layer_sizes"]))
            d["train"] = train
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class LabelCache:
    """Disk-backed map (network, solver config, feature row) -> class index.

    Transparent: a hit returns exactly what the oracle would compute, and any
    change to the network or solver config changes the key digest. A corrupt
    cache file logs a warning and falls back to recomputation.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, int] = {}
        self.oracle_calls = 0
        if self.path is not None and self.path.exists():
            try:
                loaded = json.loads(self.path.read_text())
                self._data = {str(k): int(v) for k, v in loaded.items()}
            except (ValueError, OSError) as exc:
                logger.warning("label cache %s unreadable (%s); starting fresh", self.path, exc)
                self._data = {}

    @staticmethod
    def context_digest(net: PowerNetwork, cfg: PfConfig) -> str:
        payload = repr((net.base_mva, net.buses, net.generators, net.loads, net.branches, cfg))
        return hashlib.sha256(payload.encode()).hexdigest()

    @staticmethod
    def row_key(context: str, row: np.ndarray) -> str:
        h = hashlib.sha256(context.encode())
        h.update(np.ascontiguousarray(row, dtype=np.float64).tobytes())
        return h.hexdigest()

    def labels_for(self, net: PowerNetwork, pool: FeatureMatrix, cfg: PfConfig) -> np.ndarray:
        """Class indices for every pool row, computing only cache misses."""
        context = self.context_digest(net, cfg)
        out = np.empty(pool.n, dtype=np.int8)
        miss_rows = []
        for i in range(pool.n):
            key = self.row_key(context, pool.rows[i])
            cached = self._data.get(key)
            if cached is None:
                miss_rows.append((i, key))
            else:
                out[i] = cached
        if miss_rows:
            subset = pool.take([i for i, _ in miss_rows])
            labels = label_batch(net, subset, cfg)
            self.oracle_calls += len(miss_rows)
            for (i, key), lab in zip(miss_rows, labels):
                out[i] = lab.class_index
                self._data[key] = lab.class_index
        return out

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".partial")
        tmp.write_text(json.dumps(self._data))
        os.replace(tmp, self.path)


def build_spec(cfg: ExperimentConfig, net: PowerNetwork) -> SamplingSpec:
    if cfg.sampling_spec is not None:
        return SamplingSpec.from_dict(cfg.sampling_spec)
    if cfg.kind == "2d":
        return build_spec_2d(net, bus_ids=cfg.sweep_buses, bounds_mw=cfg.bounds_mw)
    spec = build_spec_full(net, load_std_frac=cfg.load_std_frac)
    logger.info("full-injection feature dimension d=%d", spec.dimension)
    if spec.dimension != REFERENCE_FEATURE_COUNT:
        logger.warning(
            "feature dimension %d differs from the published count %d for this case family",
            spec.dimension,
            REFERENCE_FEATURE_COUNT,
        )
    return spec


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Run every (strategy, seed) cell and write artifacts to cfg.out_dir.

    Emits metrics.csv (one row per iteration per cell), summary.csv (mean and
    std per strategy and iteration across seeds), an acquisition log and a
    model checkpoint per cell, boundary grids for 2d runs, plots.gp, and the
    persistent label cache. A failing cell is recorded in failures.csv and the
    remaining cells proceed.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = parse_case_file(cfg.case_file)
    spec = build_spec(cfg, net)
    cache = LabelCache(out_dir / "label_cache.json" if cfg.use_cache else None)

    records: list[MetricsRecord] = []
    failures: list[tuple[str, int, str]] = []
    for seed in cfg.seeds:
        pool = sample_pool(spec, cfg.pool_size, _stream_seed(seed, _STREAM_POOL))
        train_pool, test_pool = split_train_test(pool, cfg.test_frac, _stream_seed(seed, _STREAM_SPLIT))
        normalizer = MinMaxNormalizer().fit(pool.rows)
        test_classes = cache.labels_for(net, test_pool, cfg.pf)
        one_hot = np.zeros((test_pool.n, 2))
        one_hot[np.arange(test_pool.n), test_classes] = 1.0
        test_set = LabeledDataset(test_pool.rows, one_hot)
        logger.info(
            "seed %d: pool %d, test %d (%.1f%% solvable)",
            seed, train_pool.n, test_pool.n, 100.0 * test_classes.mean(),
        )

        def oracle(rows: np.ndarray) -> np.ndarray:
            return cache.labels_for(net, FeatureMatrix(rows, spec, seed=0), cfg.pf)

        prototype = MlpClassifier(**{**cfg.train, "seed": _stream_seed(seed, _STREAM_TRAIN)})
        for strategy in cfg.strategies:
            try:
                result = run_active_learning(
                    pool=train_pool,
                    test_set=test_set,
                    oracle=oracle,
                    strategy=Strategy(strategy),
                    cfg=replace(cfg.al, seed=seed),
                    model=prototype,
                    normalizer=normalizer,
                )
            except Exception as exc:  # isolate the failing cell
                logger.error("cell (%s, seed %d) failed: %s", strategy, seed, exc)
                failures.append((strategy, seed, str(exc)))
                continue
            records.extend(
                MetricsRecord(strategy, seed, r.iteration, r.labels_consumed,
                              r.raw_labeled, r.undersampled, r.test_accuracy)
                for r in result.history
            )
            _write_acquisitions(out_dir / f"acquisitions_{strategy}_{seed}.csv", result, train_pool)
            save_model(out_dir / f"model_{strategy}_{seed}.npz", result.model, normalizer)
            if cfg.kind == "2d":
                grid = export_boundary_grid(
                    result.model, normalizer, cfg.bounds_mw, cfg.boundary_resolution
                )
                _write_boundary(out_dir / f"boundary_{strategy}_{seed}.csv", grid)
            logger.info(
                "cell (%s, seed %d): %d iterations, %d labels, final accuracy %.4f",
                strategy, seed, len(result.history), result.labels_consumed,
                result.history[-1].test_accuracy,
            )

    cache.save()
    write_metrics_csv(out_dir / "metrics.csv", records)
    write_summary_csv(out_dir / "summary.csv", records)
    (out_dir / "plots.gp").write_text(_gnuplot_template(cfg.strategies))
    if failures:
        with open(out_dir / "failures.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("strategy", "seed", "error"))
            writer.writerows(failures)
    return records


def export_boundary_grid(
    model: MlpClassifier,
    normalizer: MinMaxNormalizer,
    bounds: tuple[float, float],
    resolution: int,
) -> np.ndarray:
    """Solvability posterior over a uniform 2-D injection grid.

    Rows are (P_a MW, P_b MW, p_solvable, predicted_class) in raster order:
    the first feature varies fastest. resolution points per axis.
    """
    if model.n_features_in_ != 2:
        raise ValueError("boundary grids need a 2-feature model")
    axis = np.linspace(bounds[0], bounds[1], resolution)
    second, first = np.meshgrid(axis, axis, indexing="ij")
    rows = np.column_stack([first.ravel(), second.ravel()])
    posterior = model.predict_proba(normalizer.transform(rows))[:, 1]
    predicted = (posterior >= 0.5).astype(int)
    return np.column_stack([rows, posterior, predicted])


def _write_boundary(path: Path, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("p_first_mw", "p_second_mw", "p_solvable", "predicted_class"))
        for row in grid:
            writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])


def _write_acquisitions(path: Path, result: ALResult, pool: FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("iteration", "pool_index", *pool.spec.feature_names, "label"))
        for acq in result.acquisitions:
            features = [repr(float(v)) for v in pool.rows[acq.pool_index]]
            writer.writerow((acq.iteration, acq.pool_index, *features, acq.label))


def write_metrics_csv(path: str | Path, records: list[MetricsRecord]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".partial")  # never leave a truncated file
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in records:
            writer.writerow((r.strategy, r.seed, r.iteration, r.labels_consumed,
                             r.raw_labeled, r.undersampled, repr(r.test_accuracy)))
    os.replace(tmp, path)


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            MetricsRecord(
                strategy=row["strategy"],
                seed=int(row["seed"]),
                iteration=int(row["iteration"]),
                labels_consumed=int(row["labels_consumed"]),
                raw_labeled=int(row["raw_labeled"]),
                undersampled=int(row["undersampled"]),
                test_accuracy=float(row["test_accuracy"]),
            )
            for row in reader
        ]


def summarize(records: list[MetricsRecord]) -> list[tuple[str, int, float, float, float, float]]:
    """Per (strategy, iteration): mean/std of accuracy and of under-sampled size."""
    cells: dict[tuple[str, int], list[MetricsRecord]] = {}
    for r in records:
        cells.setdefault((r.strategy, r.iteration), []).append(r)
    out = []
    for (strategy, iteration), rs in sorted(cells.items()):
        accs = np.array([r.test_accuracy for r in rs])
        sizes = np.array([r.undersampled for r in rs], dtype=float)
        out.append((strategy, iteration, float(accs.mean()), float(accs.std()),
                    float(sizes.mean()), float(sizes.std())))
    return out


def write_summary_csv(path: str | Path, records: list[MetricsRecord]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".partial")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("strategy", "iteration", "accuracy_mean", "accuracy_std",
                         "undersampled_mean", "undersampled_std"))
        for strategy, iteration, am, astd, um, ustd in summarize(records):
            writer.writerow((strategy, iteration, repr(am), repr(astd), repr(um), repr(ustd)))
    os.replace(tmp, path)


def _gnuplot_template(strategies) -> str:
    plots = ", \\\n    ".join(
        f"'summary.csv' using 2:(strcol(1) eq '{s}' ? $3 : 1/0) "
        f"with linespoints title '{s}'"
        for s in strategies
    )
    return (
        "# accuracy-vs-iteration plot for the emitted summary.csv\n"
        "set datafile separator ','\n"
        "set xlabel 'iteration'\n"
        "set ylabel 'mean test accuracy'\n"
        "set key bottom right\n"
        "set grid\n"
        f"plot {plots}\n"
    )
