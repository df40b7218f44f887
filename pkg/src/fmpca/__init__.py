"""Federated multilinear principal component analysis and tensor-feature prognostics.

Submodules
----------
tensor       mode-n matricization, products, Kronecker chains, TNSR files
linalg       deterministic SVD and the incremental left-SVD update
mpca         centralized MPCA reference
federated    multi-party protocol (secure centralization, chained SVD)
prognostics  (log-)location-scale regression on tensor features
datagen      heat-transfer image-stream simulator
benchmark    replicated federated vs single-user comparison
cli          command-line entry point
"""

from .benchmark import BenchmarkConfig, run_benchmark
from .datagen import SimConfig, generate_dataset, simulate_heat
from .federated import InMemoryBus, Participant, Server, audit_log, fed_mpca, make_participants
from .linalg import SingularState, incremental_update, left_svd, svd_full
from .mpca import MpcaModel, mpca_fit, project_features
from .prognostics import ProgModel, fed_lls_fit, lls_fit, predict_ttf, prediction_error
from .tensor import (
    mode_n_fold,
    mode_n_matricize,
    mode_n_product,
    multi_mode_project,
    read_tnsr,
    vectorize,
    write_tnsr,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "InMemoryBus",
    "MpcaModel",
    "Participant",
    "ProgModel",
    "Server",
    "SimConfig",
    "SingularState",
    "audit_log",
    "fed_lls_fit",
    "fed_mpca",
    "generate_dataset",
    "incremental_update",
    "left_svd",
    "lls_fit",
    "make_participants",
    "mode_n_fold",
    "mode_n_matricize",
    "mode_n_product",
    "mpca_fit",
    "multi_mode_project",
    "predict_ttf",
    "prediction_error",
    "project_features",
    "read_tnsr",
    "run_benchmark",
    "simulate_heat",
    "svd_full",
    "vectorize",
    "write_tnsr",
]
