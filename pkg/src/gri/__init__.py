"""Grounded relational inference for interacting traffic agents.

Infers discrete semantic interaction graphs from trajectories and trains
graph-conditioned policies with structured rewards adversarially, so the
inferred relations both explain the data and carry grounded meaning.

Quick start::

    from gri import GRIEstimator, get_scenario
    est = GRIEstimator(scenario="cf_synthetic", n_iterations=200).fit(samples)
    graphs = est.predict(samples)

The ``gri`` console script exposes dataset generation, training,
evaluation, and headway-perturbation sweeps.
"""

__version__ = "0.1.0"

from .errors import (
    DivergenceError,
    GriError,
    InvalidArgumentError,
    NumericFaultError,
    ParseError,
)
from .graphs import (
    EdgeTypeVocabulary,
    InteractionGraph,
    Sample,
    SceneGraph,
    Trajectory,
    graph_from_pairs,
)
from .scenarios import SCENARIOS, ScenarioConfig, get_scenario, sample_initial_states, scenario_names
from .models import MODEL_KINDS, Batch, ModelBundle, build_bundle, tensorize
from .data import (
    DatasetManifest,
    generate_dataset,
    load_dataset,
    load_natural_log,
    load_samples,
    make_ood_dataset,
    save_samples,
    write_dataset,
    write_standin_log,
)
from .training import (
    TrainConfig,
    TrainResult,
    train_expert,
    train_gri,
    train_nri,
    train_supervised,
    update_beta,
)
from .evaluation import (
    EvalReport,
    edge_frequency_matrices,
    evaluate_model,
    graph_accuracy,
    horizon_std,
    infer_map_graphs,
    ood_evaluate,
    ood_metrics,
    reconstruct,
    rmse,
)
from .estimators import GRIEstimator, NRIEstimator, SupervisedPolicyEstimator

__all__ = [
    "__version__",
    "GriError",
    "InvalidArgumentError",
    "NumericFaultError",
    "ParseError",
    "DivergenceError",
    "SceneGraph",
    "EdgeTypeVocabulary",
    "InteractionGraph",
    "Trajectory",
    "Sample",
    "graph_from_pairs",
    "ScenarioConfig",
    "SCENARIOS",
    "scenario_names",
    "get_scenario",
    "sample_initial_states",
    "MODEL_KINDS",
    "Batch",
    "ModelBundle",
    "build_bundle",
    "tensorize",
    "DatasetManifest",
    "generate_dataset",
    "load_dataset",
    "load_natural_log",
    "load_samples",
    "make_ood_dataset",
    "save_samples",
    "write_dataset",
    "write_standin_log",
    "TrainConfig",
    "TrainResult",
    "train_expert",
    "train_gri",
    "train_nri",
    "train_supervised",
    "update_beta",
    "EvalReport",
    "edge_frequency_matrices",
    "evaluate_model",
    "graph_accuracy",
    "horizon_std",
    "infer_map_graphs",
    "ood_evaluate",
    "ood_metrics",
    "reconstruct",
    "rmse",
    "GRIEstimator",
    "NRIEstimator",
    "SupervisedPolicyEstimator",
]
