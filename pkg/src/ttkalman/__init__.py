"""Tensor-train Kalman filtering for Volterra system identification."""

from .kalman import (
    KalmanState,
    NoiseSpec,
    Observation,
    SingularInnovationError,
    dense_step,
    initial_state,
    step,
)
from .krp import RankPolicy, krp_to_tt, numerical_rank, rowwise_kron, tt_svd_matrix
from .tt import (
    RoundingSpec,
    TTNetwork,
    apply_operator,
    contract_full,
    core_kron,
    tt_add,
    tt_norm,
    tt_round,
)
from .volterra import InputStream, VolterraModel, build_ut, build_Ut, generate_outputs, synthesize_kernels

__version__ = "0.1.0"

__all__ = [
    "InputStream",
    "KalmanState",
    "NoiseSpec",
    "Observation",
    "RankPolicy",
    "RoundingSpec",
    "SingularInnovationError",
    "TTNetwork",
    "VolterraModel",
    "apply_operator",
    "build_Ut",
    "build_ut",
    "contract_full",
    "core_kron",
    "dense_step",
    "generate_outputs",
    "initial_state",
    "krp_to_tt",
    "numerical_rank",
    "rowwise_kron",
    "step",
    "synthesize_kernels",
    "tt_add",
    "tt_norm",
    "tt_round",
    "tt_svd_matrix",
]
