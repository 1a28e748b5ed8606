"""
Matrix-output Kalman filter on tensor trains.

The state holds ``l`` coupled columns: the mean ``M`` (``n^d x l``) as a
vector-train and the covariances ``P`` (``n^d x n^d x l``) as a
covariance-train, with the column index on the left rank of core 0.  Each
step observes ``Y = C X + R`` with ``Y`` of size ``m x l`` and ``C`` an
``m x n^d`` matrix-train whose row index lives on the output mode of core 0.

:func:`dense_step` is a textbook dense Kalman filter kept as an oracle for
small problems.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import ttio
from .krp import RankPolicy, numerical_rank
from .tt import (
    COVARIANCE,
    GAIN,
    VECTOR,
    RoundingSpec,
    TTNetwork,
    TTStructureError,
    apply_operator,
    contract_full,
    core_kron,
    right_orthogonalize,
    scaled_identity,
    tt_add,
    tt_round,
    tt_scale,
    zeros,
)

DEFAULT_DENSE_BUDGET = 4096


class SingularInnovationError(np.linalg.LinAlgError):
    """An innovation covariance slice could not be factored."""

    def __init__(self, index, reason):
        super().__init__(f"innovation covariance slice {index} is not invertible ({reason})")
        self.index = index


@dataclass(frozen=True)
class KalmanState:
    mean: TTNetwork
    cov: TTNetwork
    rounding: RoundingSpec = RoundingSpec()
    step_count: int = 0

    def __post_init__(self):
        if self.mean.kind != VECTOR:
            raise TTStructureError(f"mean must be a vector-train, got {self.mean.kind}")
        if self.cov.kind != COVARIANCE:
            raise TTStructureError(f"cov must be a covariance-train, got {self.cov.kind}")
        if self.mean.d != self.cov.d:
            raise TTStructureError(f"mean has {self.mean.d} cores, cov has {self.cov.d}")
        if self.mean.batch != self.cov.batch:
            raise TTStructureError(f"mean batch {self.mean.batch} != cov batch {self.cov.batch}")
        if self.mean.out_dims != self.cov.out_dims:
            raise TTStructureError(f"mean modes {self.mean.out_dims} != cov modes {self.cov.out_dims}")

    @property
    def batch(self) -> int:
        return self.mean.batch

    @property
    def dims(self) -> list[int]:
        return self.mean.out_dims


@dataclass(frozen=True)
class NoiseSpec:
    """Process covariance ``W`` (covariance-train or None for zero) and
    measurement covariance ``R`` (dense ``m x m x l``, diagonal slices)."""

    process: TTNetwork | None
    measurement: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.measurement, dtype=np.float64)
        if R.ndim != 3 or R.shape[0] != R.shape[1]:
            raise ValueError(f"measurement covariance must be m x m x l, got {R.shape}")
        diag = np.einsum("iil->il", R)
        if np.any(diag < 0):
            raise ValueError("measurement variances must be nonnegative")
        if np.any(R - np.einsum("il,ij->ijl", diag, np.eye(R.shape[0]))):
            raise ValueError("measurement covariance slices must be diagonal")
        object.__setattr__(self, "measurement", R)
        if self.process is not None and self.process.kind != COVARIANCE:
            raise TTStructureError("process noise must be a covariance-train")

    @classmethod
    def diagonal(cls, n, d, l, m, meas_var, process_var=0.0):
        """Constant diagonals: ``W = process_var * I``, ``R = meas_var * I``."""
        meas = np.broadcast_to(np.asarray(meas_var, dtype=np.float64), (l,))
        R = np.einsum("ij,l->ijl", np.eye(m), meas)
        proc = np.broadcast_to(np.asarray(process_var, dtype=np.float64), (l,))
        if np.any(proc < 0):
            raise ValueError("process variances must be nonnegative")
        W = scaled_identity(n, d, proc) if np.any(proc) else None
        return cls(W, R)


@dataclass(frozen=True)
class Observation:
    C_train: TTNetwork
    Y: np.ndarray
    max_elements: int = 2**26

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        C = self.C_train
        if C.batch != 1:
            raise TTStructureError("output model train must have batch 1")
        if C.out_dims[0] != Y.shape[0] or any(o != 1 for o in C.out_dims[1:]):
            raise TTStructureError(
                f"output model rows {C.out_dims} do not match {Y.shape[0]} measurement rows"
            )
        if Y.shape[0] * Y.shape[1] * max(C.ranks) > self.max_elements:
            raise ValueError("m * l * rank exceeds the memory budget; m and l must stay small")
        object.__setattr__(self, "Y", Y)

    @property
    def m(self) -> int:
        return self.Y.shape[0]


def initial_state(n: int, d: int, l: int = 1, prior_var=1.0, rounding: RoundingSpec = RoundingSpec()) -> KalmanState:
    """Zero mean and ``prior_var * I`` covariance, both rank 1."""
    mean = zeros([n] * d, [1] * d, batch=l, kind=VECTOR)
    cov = scaled_identity(n, d, np.broadcast_to(prior_var, (l,)))
    return KalmanState(mean, cov, rounding, 0)


def _round(net, spec, timings):
    if timings is None:
        return tt_round(net, spec)
    t0 = time.perf_counter()
    out = tt_round(net, spec)
    timings["round"] = timings.get("round", 0.0) + time.perf_counter() - t0
    return out


# -- the six tensor equations ------------------------------------------------


def predict(state: KalmanState, A_train: TTNetwork | None, noise: NoiseSpec, timings: dict | None = None) -> KalmanState:
    """``M+ = A M``, ``P+ = A P A^T + W``.

    The covariance is rounded whenever the prediction can have raised its
    ranks, i.e. unless ``A`` has rank 1 and there is no process noise.
    ``A_train=None`` stands for the identity.
    """
    mean, cov = state.mean, state.cov
    if A_train is not None:
        if A_train.in_dims != state.dims or A_train.out_dims != state.dims:
            raise TTStructureError(f"transition train modes do not match state modes {state.dims}")
        mean = apply_operator(A_train, mean, "first")
        cov = apply_operator(A_train, apply_operator(A_train, cov, "first"), "second")
    grew = A_train is not None and max(A_train.ranks) > 1
    if noise.process is not None:
        cov = tt_add(cov, noise.process)
        grew = True
    # a rank-1 transition without process noise cannot raise any rank
    if grew:
        cov = _round(cov, state.rounding, timings)
    return replace(state, mean=mean, cov=cov)


def innovation(state: KalmanState, obs: Observation) -> np.ndarray:
    """``V = Y - C M+`` as a dense ``m x l`` matrix."""
    if obs.Y.shape[1] != state.batch:
        raise TTStructureError(f"measurements have {obs.Y.shape[1]} columns, state has {state.batch}")
    proj = contract_full(apply_operator(obs.C_train, state.mean, "first"))
    return obs.Y - proj[:, :, 0].T


def _sandwich(C: TTNetwork, P: TTNetwork) -> np.ndarray:
    # C P C^T per batch slice, swept left to right; returns (l, m, m)
    b = P.batch
    env = np.eye(b).reshape(b, 1, 1, 1, b, 1)  # b J K c p c'
    for ck, pk in zip(C.cores, P.cores):
        t = np.tensordot(env, ck, axes=(3, 0))  # b J K p c' oj q c2
        t = np.tensordot(t, pk, axes=([3, 6], [0, 1]))  # b J K c' oj c2 q' p2
        t = np.tensordot(t, ck, axes=([3, 6], [0, 2]))  # b J K oj c2 p2 ok c2'
        bb, J, K, oj, c2, p2, ok, c3 = t.shape
        env = t.transpose(0, 1, 3, 2, 6, 4, 5, 7).reshape(bb, J * oj, K * ok, c2, p2, c3)
    return env[:, :, :, 0, 0, 0]


def innovation_cov(state: KalmanState, obs: Observation, noise: NoiseSpec) -> np.ndarray:
    """``S = C P+ C^T + R`` as a dense ``m x m x l`` tensor."""
    R = noise.measurement
    if R.shape != (obs.m, obs.m, state.batch):
        raise TTStructureError(f"measurement covariance shape {R.shape} != {(obs.m, obs.m, state.batch)}")
    S = _sandwich(obs.C_train, state.cov).transpose(1, 2, 0)
    return S + R


def _solve_slice(S_i, X, i):
    # S_i^{-1} X for one symmetrized innovation covariance slice
    S_i = 0.5 * (S_i + S_i.T)
    if not np.all(np.isfinite(S_i)):
        raise SingularInnovationError(i, "non-finite entries")
    cond = np.linalg.cond(S_i)
    if not cond < 1.0 / np.finfo(float).eps:
        raise SingularInnovationError(i, f"condition number {cond:.3g}")
    try:
        c = scipy.linalg.cho_factor(S_i, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        # rounding noise can push a nearly singular S slightly indefinite
        return scipy.linalg.solve(S_i, X, assume_a="sym", check_finite=False)
    return scipy.linalg.cho_solve(c, X, check_finite=False)


def kalman_gain(state: KalmanState, obs: Observation, S: np.ndarray, timings: dict | None = None) -> TTNetwork:
    """``K = P+ C^T S^{-1}`` as a gain-train.

    ``P+ ×_2 C`` is formed core by core, then every batch slice of core 0
    is multiplied by the inverse of its innovation covariance slice
    (Cholesky, or a symmetric indefinite solve when rounding noise has made
    a nearly singular slice indefinite; :class:`SingularInnovationError`
    when the condition number overflows).  The
    product has ranks ``rank(P) * rank(C)``; it is rounded at the state's
    tolerance before being returned.
    """
    G = apply_operator(obs.C_train, state.cov, "second", kind=GAIN)
    core0 = np.array(G.cores[0])  # l n m r
    l_, n, m, r = core0.shape
    for i in range(l_):
        x = core0[i].transpose(1, 0, 2).reshape(m, n * r)
        core0[i] = _solve_slice(S[:, :, i], x, i).reshape(m, n, r).transpose(1, 0, 2)
    K = TTNetwork((core0,) + G.cores[1:], GAIN)
    return _round(K, state.rounding, timings)


def update_mean(state: KalmanState, K: TTNetwork, V: np.ndarray, timings: dict | None = None) -> TTNetwork:
    """``M = M+ + K V`` slice by slice, rounded."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (K.in_dims[0], state.batch):
        raise TTStructureError(f"innovation shape {V.shape} != {(K.in_dims[0], state.batch)}")
    kv = np.einsum("inmr,mi->inr", K.cores[0], V)[:, :, None, :]
    correction = TTNetwork((kv,) + K.cores[1:], VECTOR)
    return _round(tt_add(state.mean, correction), state.rounding, timings)


def downdate_train(K: TTNetwork, S: np.ndarray, compress: bool = False) -> TTNetwork:
    """Covariance-train of ``K S K^T`` per batch slice.

    Core 0 slice ``i`` is ``K_i S_i K_i^T`` regrouped as ``n x n x r_1^2``;
    later cores are ``core_kron`` of each gain core with its transpose.

    With ``compress=True`` the gain is first right-orthogonalized, which
    makes the ``r_1^2`` bond of the product exactly compressible by an SVD
    of core 0 alone; singular values below machine precision are dropped
    and the ``r_1^2 x r_1^2`` Kronecker core is never formed.
    """
    S = np.asarray(S, dtype=np.float64)
    Ssym = 0.5 * (S + S.transpose(1, 0, 2))
    if compress:
        K = right_orthogonalize(K)
    k0 = K.cores[0]  # l n m r
    l_, n, m, r = k0.shape
    if Ssym.shape != (m, m, l_):
        raise TTStructureError(f"innovation covariance shape {S.shape} != {(m, m, l_)}")
    c0 = np.einsum("ixja,jki,iykb->ixyab", k0, Ssym, k0).reshape(l_, n, n, r * r)
    rest = list(K.cores[1:])
    if not (compress and rest):
        return TTNetwork([c0] + [core_kron(kk, kk.transpose(0, 2, 1, 3)) for kk in rest], COVARIANCE)

    u, s, vt = np.linalg.svd(c0.reshape(l_ * n * n, r * r), full_matrices=False)
    rank = numerical_rank(s, RankPolicy(), (l_ * n * n, r * r))
    c0 = (u[:, :rank] * s[:rank]).reshape(l_, n, n, rank)
    k1 = rest[0][:, :, 0, :]  # r n r2
    n1, r2 = k1.shape[1], k1.shape[2]
    c1 = np.tensordot(vt[:rank].reshape(rank, r, r), k1, axes=(1, 0))  # k b x c
    c1 = np.tensordot(c1, k1, axes=(1, 0)).transpose(0, 1, 3, 2, 4)  # k x y c d
    cores = [c0, c1.reshape(rank, n1, n1, r2 * r2)]
    cores += [core_kron(kk, kk.transpose(0, 2, 1, 3)) for kk in rest[1:]]
    return TTNetwork(cores, COVARIANCE)


def update_cov(state: KalmanState, K: TTNetwork, S: np.ndarray, timings: dict | None = None,
               compress: bool = True) -> TTNetwork:
    """``P = P+ - K S K^T``, rounded.

    ``compress`` selects the exactly compressed downdate (see
    :func:`downdate_train`); the result agrees with the literal
    construction to rounding accuracy.
    """
    down = downdate_train(K, S, compress=compress)
    return _round(tt_add(state.cov, tt_scale(down, -1.0)), state.rounding, timings)


def step(
    state: KalmanState,
    A_train: TTNetwork | None,
    noise: NoiseSpec,
    obs: Observation,
    timings: dict | None = None,
) -> KalmanState:
    """One predict + update iteration.

    If ``timings`` is a dict, the seconds spent in rounding are accumulated
    under ``"round"``.
    """
    pred = predict(state, A_train, noise, timings)
    V = innovation(pred, obs)
    S = innovation_cov(pred, obs, noise)
    K = kalman_gain(pred, obs, S, timings)
    mean = update_mean(pred, K, V, timings)
    cov = update_cov(pred, K, S, timings)
    return KalmanState(mean, cov, state.rounding, state.step_count + 1)


# -- dense oracle ------------------------------------------------------------


def dense_step(M, P, A, W, C, Y, R, max_dim: int = DEFAULT_DENSE_BUDGET):
    """Dense Kalman iteration for every column.

    Parameters
    ----------
    M : (N, l) means
    P : (l, N, N) covariances
    A : (N, N) transition, or None for identity
    W : (l, N, N) process covariances, or None for zero
    C : (m, N) output model
    Y : (m, l) measurements
    R : (m, m, l) measurement covariances

    Returns
    -------
    M_new, P_new
    """
    M = np.asarray(M, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    N, l = M.shape
    if N > max_dim:
        raise ValueError(f"state dimension {N} exceeds dense budget {max_dim}")
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).reshape(C.shape[0], l)
    R = np.asarray(R, dtype=np.float64).reshape(C.shape[0], C.shape[0], l)
    M_new = np.empty_like(M)
    P_new = np.empty_like(P)
    for i in range(l):
        m_pred = M[:, i] if A is None else A @ M[:, i]
        p_pred = P[i] if A is None else A @ P[i] @ A.T
        if W is not None:
            p_pred = p_pred + W[i]
        S = C @ p_pred @ C.T + R[:, :, i]
        K = np.linalg.solve(S, C @ p_pred).T
        M_new[:, i] = m_pred + K @ (Y[:, i] - C @ m_pred)
        P_new[i] = p_pred - K @ S @ K.T
    return M_new, P_new


def dense_view(state: KalmanState, max_elements: int = 2**24):
    """``(M, P)`` of a desk-scale state as ``(N, l)`` and ``(l, N, N)`` arrays."""
    M = contract_full(state.mean, max_elements)[:, :, 0].T
    P = contract_full(state.cov, max_elements)
    return M, P


# -- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = b"TTKF0001"


def save_checkpoint(path: str | os.PathLike, state: KalmanState, noise: NoiseSpec | None = None) -> None:
    """State trains in the binary train format behind a small header."""
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        R = np.zeros((0, 0)) if noise is None else np.einsum("iil->il", noise.measurement)
        has_w = int(noise is not None and noise.process is not None)
        f.write(struct.pack("<qdqqqq", state.step_count, state.rounding.tolerance,
                            state.rounding.max_rank, R.shape[0], R.shape[1], has_w))
        f.write(np.ascontiguousarray(R, dtype="<f8").tobytes())
        ttio.write_tt(f, state.mean)
        ttio.write_tt(f, state.cov)
        if has_w:
            ttio.write_tt(f, noise.process)


def load_checkpoint(path: str | os.PathLike):
    """Inverse of :func:`save_checkpoint`; returns ``(state, noise_or_None)``."""
    with open(path, "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a filter checkpoint")
        step_count, tol, max_rank, m, l, has_w = struct.unpack("<qdqqqq", f.read(48))
        R = np.frombuffer(f.read(8 * m * l), dtype="<f8").reshape(m, l)
        mean = ttio.read_tt(f)
        cov = ttio.read_tt(f)
        W = ttio.read_tt(f) if has_w else None
    state = KalmanState(mean, cov, RoundingSpec(tol, max_rank), step_count)
    noise = None
    if m:
        noise = NoiseSpec(W, np.einsum("il,ij->ijl", R, np.eye(m)))
    return state, noise
