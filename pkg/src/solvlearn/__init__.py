"""AC power flow solvability prediction with pool-based deep active learning.

An in-repo Newton-Raphson solver labels injection samples as solvable or not,
and a softmax MLP learns the solvability region from a pool of unlabeled
samples, querying the oracle only for the most informative ones.
"""

from .active import (
    ALConfig,
    ALResult,
    Strategy,
    acquire_batch,
    run_active_learning,
    score_posteriors,
    undersample,
)
from .experiment import ExperimentConfig, LabelCache, export_boundary_grid, run_experiment
from .matpower import parse_case, parse_case_file, serialize_case
from .mlp import LabeledDataset, MlpClassifier, load_model, save_model
from .network import (
    Branch,
    Bus,
    BusKind,
    Generator,
    Load,
    PowerNetwork,
    build_ybus,
    validate,
)
from .powerflow import (
    PfConfig,
    PfSolution,
    SolvabilityLabel,
    apply_injections,
    label,
    label_batch,
    solve_newton,
)
from .sampling import (
    FeatureMatrix,
    InjectionSample,
    MinMaxNormalizer,
    SamplingSpec,
    build_spec_2d,
    build_spec_full,
    sample_pool,
    split_train_test,
)

__version__ = "0.1.0"


def case_path(name: str) -> str:
    """Filesystem path of a bundled case file ("case39" or "two_bus")."""
    from importlib import resources

    resource = resources.files(__name__).joinpath(f"data/{name}.m")
    if not resource.is_file():
        raise ValueError(f"no bundled case named {name!r}")
    return str(resource)
