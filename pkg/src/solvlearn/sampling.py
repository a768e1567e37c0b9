"""Injection-space sampling: pool generation, normalization, train/test split.

A :class:`SamplingSpec` names which generator/load quantities vary and with
what distribution (physical MW/MVAr units). Feature order is fixed block
order: all generator P, all generator Q, all load P, all load Q; quantities
without a distribution stay at their base values and are not features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .network import PowerNetwork

__all__ = [
    "Uniform",
    "Normal",
    "GenSlot",
    "LoadSlot",
    "Feature",
    "SamplingSpec",
    "InjectionSample",
    "FeatureMatrix",
    "build_spec_2d",
    "build_spec_full",
    "sample_pool",
    "MinMaxNormalizer",
    "split_train_test",
    "export_pool_csv",
    "import_pool_csv",
]


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"uniform bounds reversed: ({self.lo}, {self.hi})")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)

    def to_dict(self) -> dict:
        return {"uniform": [self.lo, self.hi]}


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"normal std must be >= 0, got {self.std}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.std, n)

    def to_dict(self) -> dict:
        return {"normal": [self.mean, self.std]}


Distribution = Uniform | Normal


def _dist_from_dict(d: dict) -> Distribution | None:
    if d is None:
        return None
    if "uniform" in d:
        return Uniform(*d["uniform"])
    if "normal" in d:
        return Normal(*d["normal"])
    raise ValueError(f"unknown distribution spec: {d!r}")


@dataclass(frozen=True)
class GenSlot:
    bus_id: int
    p: Distribution | None = None
    q: Distribution | None = None


@dataclass(frozen=True)
class LoadSlot:
    bus_id: int
    p: Distribution | None = None
    q: Distribution | None = None


@dataclass(frozen=True)
class Feature:
    """One column of the feature matrix: a sampled quantity at a bus."""

    kind: str  # "gen" | "load"
    bus_id: int
    quantity: str  # "p" | "q"
    distribution: Distribution

    @property
    def name(self) -> str:
        return f"{self.kind}{self.quantity.upper()}:{self.bus_id}"


@dataclass(frozen=True)
class SamplingSpec:
    slack_bus_id: int
    gen_slots: tuple[GenSlot, ...] = ()
    load_slots: tuple[LoadSlot, ...] = ()

    def __post_init__(self):
        for slot in self.gen_slots:
            if slot.bus_id == self.slack_bus_id:
                raise ValueError(f"slack generator (bus {self.slack_bus_id}) cannot be sampled")

    @cached_property
    def features(self) -> tuple[Feature, ...]:
        """Feature columns in block order (gen P, gen Q, load P, load Q)."""
        feats: list[Feature] = []
        for kind, slots in (("gen", self.gen_slots), ("load", self.load_slots)):
            for quantity in ("p", "q"):
                for slot in slots:
                    dist = getattr(slot, quantity)
                    if dist is not None:
                        feats.append(Feature(kind, slot.bus_id, quantity, dist))
        return tuple(feats)

    @property
    def dimension(self) -> int:
        return len(self.features)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def to_dict(self) -> dict:
        def slot_dict(slot):
            return {
                "bus_id": slot.bus_id,
                "p": slot.p.to_dict() if slot.p else None,
                "q": slot.q.to_dict() if slot.q else None,
            }

        return {
            "slack_bus_id": self.slack_bus_id,
            "gen_slots": [slot_dict(s) for s in self.gen_slots],
            "load_slots": [slot_dict(s) for s in self.load_slots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingSpec":
        return cls(
            slack_bus_id=int(d["slack_bus_id"]),
            gen_slots=tuple(
                GenSlot(int(s["bus_id"]), _dist_from_dict(s.get("p")), _dist_from_dict(s.get("q")))
                for s in d.get("gen_slots", ())
            ),
            load_slots=tuple(
                LoadSlot(int(s["bus_id"]), _dist_from_dict(s.get("p")), _dist_from_dict(s.get("q")))
                for s in d.get("load_slots", ())
            ),
        )


@dataclass(frozen=True, eq=False)
class InjectionSample:
    """One feature row in physical units, tied to the spec that orders it."""

    values: np.ndarray
    spec: SamplingSpec


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray  # (n, d), physical MW/MVAr
    spec: SamplingSpec
    seed: int

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def sample(self, i: int) -> InjectionSample:
        return InjectionSample(values=self.rows[i], spec=self.spec)

    def take(self, indices) -> "FeatureMatrix":
        return FeatureMatrix(rows=self.rows[np.asarray(indices)], spec=self.spec, seed=self.seed)


def build_spec_2d(net: PowerNetwork, bus_ids: tuple[int, int] = (3, 4),
                  bounds_mw: tuple[float, float] = (-3000.0, 3000.0)) -> SamplingSpec:
    """Two-feature spec: active load power at two buses swept uniformly.

    Reactive load stays at its base value; generators are untouched.
    """
    load_buses = {ld.bus_id for ld in net.loads}
    for bus_id in bus_ids:
        if bus_id not in load_buses:
            raise ValueError(f"bus {bus_id} carries no load in this network")
    sweep = Uniform(*bounds_mw)
    return SamplingSpec(
        slack_bus_id=net.slack_bus.id,
        load_slots=tuple(LoadSlot(bus_id=b, p=sweep) for b in bus_ids),
    )


def build_spec_full(net: PowerNetwork, load_std_frac: float = 0.5) -> SamplingSpec:
    """Full injection space: every non-slack generator P/Q uniform within its
    dispatch limits, every load P/Q normal around base with a relative std."""
    if load_std_frac < 0:
        raise ValueError("load_std_frac must be >= 0")
    base = net.base_mva
    slack_id = net.slack_bus.id
    gen_slots = []
    for gen in net.generators:
        if not gen.in_service or gen.bus_id == slack_id:
            continue
        gen_slots.append(
            GenSlot(
                bus_id=gen.bus_id,
                p=Uniform(gen.p_min * base, gen.p_max * base),
                q=Uniform(gen.q_min * base, gen.q_max * base),
            )
        )
    load_slots = [
        LoadSlot(
            bus_id=ld.bus_id,
            p=Normal(ld.p * base, abs(ld.p * base) * load_std_frac),
            q=Normal(ld.q * base, abs(ld.q * base) * load_std_frac),
        )
        for ld in net.loads
    ]
    return SamplingSpec(slack_bus_id=slack_id, gen_slots=tuple(gen_slots),
                        load_slots=tuple(load_slots))


def sample_pool(spec: SamplingSpec, n: int, seed: int) -> FeatureMatrix:
    """Draw n independent rows per the spec's slot distributions (seeded)."""
    if n < 1:
        raise ValueError("pool size must be >= 1")
    rng = np.random.default_rng(seed)
    rows = np.empty((n, spec.dimension))
    for j, feat in enumerate(spec.features):
        rows[:, j] = feat.distribution.sample(rng, n)
    return FeatureMatrix(rows=rows, spec=spec, seed=seed)


class MinMaxNormalizer(BaseEstimator, TransformerMixin):
    """Per-feature min-max scaling fitted once on the full sample pool.

    Pool minimum maps to 0 and maximum to 1; constant features map to 0.5.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.feature_min_ = X.min(axis=0)
        self.feature_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "feature_min_")
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        span = self.feature_max_ - self.feature_min_
        constant = span == 0
        out = (X - self.feature_min_) / np.where(constant, 1.0, span)
        out[:, constant] = 0.5
        return out[0] if single else out

    def inverse_transform(self, Y):
        check_is_fitted(self, "feature_min_")
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        span = self.feature_max_ - self.feature_min_
        return self.feature_min_ + Y * span


def split_train_test(pool: FeatureMatrix, test_frac: float, seed: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Disjoint random row partition; train gets ceil(n*(1-test_frac)) rows."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must lie strictly between 0 and 1")
    n = pool.n
    n_train = math.ceil(n * (1.0 - test_frac))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return pool.take(train_idx), pool.take(test_idx)


def export_pool_csv(pool: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(pool.spec.feature_names)
        for row in pool.rows:
            writer.writerow([repr(float(v)) for v in row])


def import_pool_csv(path: str | Path, spec: SamplingSpec, seed: int = 0) -> FeatureMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != spec.feature_names:
            raise ValueError(
                f"CSV header {header} does not match spec features {spec.feature_names}"
            )
        rows = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if rows.size == 0:
        rows = rows.reshape(0, spec.dimension)
    return FeatureMatrix(rows=rows, spec=spec, seed=seed)
