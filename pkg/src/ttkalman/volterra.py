"""
Volterra regressors and synthetic identification data.

A ``p``-input, ``l``-output Volterra system of degree ``d`` and memory
``M`` maps the regressor row

    u_t = [1, u_1(t), ..., u_p(t), u_1(t-1), ..., u_p(t-M+1)]

through ``kron(u_t, ..., u_t)`` (``d`` factors) onto an ``n^d x l``
coefficient matrix, ``n = p*M + 1``.  Grouping ``m`` consecutive samples
gives ``Y = (U_t ⊙ ... ⊙ U_t) X + noise`` with ``U_t`` stacking rows
``u_t .. u_{t+m-1}``.  Time is 1-based and inputs before ``t = 1`` are zero.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .krp import krp_to_tt
from .tt import VECTOR, TTNetwork, apply_operator, contract_full


@dataclass(frozen=True)
class InputStream:
    """Input samples ``u(1), u(2), ...`` as a ``(T, p)`` array."""

    samples: np.ndarray
    source: str = "array"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"samples must be (T, p), got shape {s.shape}")
        object.__setattr__(self, "samples", s)

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @classmethod
    def gaussian(cls, length: int, p: int = 1, seed=None) -> "InputStream":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((length, p)), "gaussian")

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "InputStream":
        """One row per time step, ``p`` comma-separated columns; a non-numeric header row is skipped."""
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f) if r]
        if rows:
            try:
                float(rows[0][0])
            except ValueError:
                rows = rows[1:]
        return cls(np.array(rows, dtype=np.float64).reshape(len(rows), -1), "file")

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            for row in self.samples:
                w.writerow([f"{v:.17g}" for v in row])


def build_ut(stream: InputStream, t: int, p: int, M: int) -> np.ndarray:
    """Regressor row of length ``p*M + 1`` at time ``t`` (1-based)."""
    if t < 1:
        raise ValueError(f"time index must be >= 1, got {t}")
    if p != stream.p:
        raise ValueError(f"stream has {stream.p} inputs, expected {p}")
    if t > len(stream):
        raise IndexError(f"time {t} is past the end of a stream of length {len(stream)}")
    row = np.zeros(p * M + 1)
    row[0] = 1.0
    for lag in range(min(M, t)):
        row[1 + lag * p: 1 + (lag + 1) * p] = stream.samples[t - 1 - lag]
    return row


def build_Ut(stream: InputStream, t: int, m: int, p: int, M: int) -> np.ndarray:
    """``m x (pM+1)`` matrix whose row ``j`` is ``build_ut(stream, t + j)``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return np.stack([build_ut(stream, t + j, p, M) for j in range(m)])


def kernel_train(h: np.ndarray, d: int) -> TTNetwork:
    """Vector-train whose column ``k`` is ``kron(h[k], ..., h[k])`` (``d`` factors).

    With one output this is rank 1; ``l`` outputs give a block-diagonal
    train of rank ``l``.
    """
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    l, n = h.shape
    if d == 1:
        return TTNetwork([h[:, :, None, None]], VECTOR)
    eye = np.eye(l)
    first = np.einsum("kn,kq->knq", h, eye)[:, :, None, :]
    mid = np.einsum("kn,kq->knq", h, eye)[:, :, None, :]
    last = h[:, :, None, None]
    return TTNetwork([first] + [mid] * (d - 2) + [last], VECTOR)


def synthesize_kernels(n: int, d: int, l: int = 1, seed=None) -> TTNetwork:
    """``h^{⊗d}`` per output with ``h`` standard normal of length ``n``."""
    if min(n, d, l) < 1:
        raise ValueError("n, d and l must be >= 1")
    rng = np.random.default_rng(seed)
    return kernel_train(rng.standard_normal((l, n)), d)


@dataclass(frozen=True)
class VolterraModel:
    p: int
    l: int
    M: int
    d: int
    kernels: TTNetwork
    meas_var: float = 1e-8

    def __post_init__(self):
        if min(self.p, self.l, self.M, self.d) < 1:
            raise ValueError("p, l, M and d must all be >= 1")
        if self.meas_var < 0:
            raise ValueError("measurement variance must be nonnegative")
        k = self.kernels
        if k.kind != VECTOR or k.d != self.d or k.batch != self.l or any(o != self.n for o in k.out_dims):
            raise ValueError(f"kernel train {k!r} does not fit n={self.n}, d={self.d}, l={self.l}")

    @property
    def n(self) -> int:
        return self.p * self.M + 1

    @classmethod
    def random(cls, p, l, M, d, meas_var=1e-8, seed=None) -> "VolterraModel":
        return cls(p, l, M, d, synthesize_kernels(p * M + 1, d, l, seed), meas_var)


def noiseless_outputs(C_train: TTNetwork, kernels: TTNetwork) -> np.ndarray:
    """``C X`` as an ``m x l`` matrix."""
    return contract_full(apply_operator(C_train, kernels, "first"))[:, :, 0].T


def generate_outputs(model: VolterraModel, stream: InputStream, t: int, m: int, seed=None, C_train=None) -> np.ndarray:
    """Noisy block ``y(t), ..., y(t+m-1)`` as an ``m x l`` matrix.

    ``seed`` may be a Generator, which is then advanced.  Passing the
    block's ``C_train`` skips rebuilding it.
    """
    if C_train is None:
        C_train = krp_to_tt(build_Ut(stream, t, m, model.p, model.M), model.d)
    Y = noiseless_outputs(C_train, model.kernels)
    if model.meas_var > 0:
        rng = np.random.default_rng(seed)
        Y = Y + np.sqrt(model.meas_var) * rng.standard_normal(Y.shape)
    return Y


def write_dataset(path, stream: InputStream, outputs: np.ndarray, t0: int = 1) -> None:
    """CSV with columns ``t, u1..up, y1..yl``."""
    outputs = np.atleast_2d(outputs)
    p = stream.p
    l = outputs.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t"] + [f"u{k + 1}" for k in range(p)] + [f"y{k + 1}" for k in range(l)])
        for j, y in enumerate(outputs):
            t = t0 + j
            w.writerow([t] + [f"{v:.17g}" for v in stream.samples[t - 1]] + [f"{v:.17g}" for v in y])
