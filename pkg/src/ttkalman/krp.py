"""
Row-wise Kronecker (transposed Khatri-Rao) matrices in tensor-train form.

``krp_to_tt`` builds the train of ``U ⊙ U ⊙ ... ⊙ U`` directly from the
``m x n`` factor, one core at a time from the right, without ever forming
the ``m x n^d`` matrix.  ``tt_svd_matrix`` is the generic TT-SVD of an
explicit dense matrix and serves as baseline and cross-check.

Both produce trains whose first core has shape ``(1, m, n, r_1)`` and whose
remaining cores have shape ``(r_{k-1}, 1, n, r_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tt import DEFAULT_MAX_ELEMENTS, MATRIX, BudgetExceededError, TTNetwork

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class RankPolicy:
    """How many singular values survive a factorization.

    ``mode`` is ``"eps"`` (drop values below ``s[0] * max(shape) * eps``),
    ``"rel"`` (drop values below ``value * s[0]``) or ``"cap"`` (keep at most
    ``value`` values).
    """

    mode: str = "eps"
    value: float | None = None

    def __post_init__(self):
        if self.mode not in ("eps", "rel", "cap"):
            raise ValueError(f"unknown rank policy mode {self.mode!r}")
        if self.mode == "rel" and not (self.value is not None and self.value > 0):
            raise ValueError("relative-threshold policy needs a positive threshold")
        if self.mode == "cap" and not (self.value is not None and int(self.value) >= 1):
            raise ValueError("cap policy needs a cap >= 1")

    @classmethod
    def parse(cls, text: str) -> "RankPolicy":
        """Parse ``eps``, ``rel:1e-8`` or ``cap:12``."""
        text = text.strip()
        if text == "eps":
            return cls()
        mode, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"cannot parse rank policy {text!r}")
        try:
            num = float(value)
        except ValueError:
            raise ValueError(f"cannot parse rank policy threshold {value!r}") from None
        return cls(mode, num)

    def __str__(self):
        if self.mode == "eps":
            return "eps"
        if self.mode == "cap":
            return f"cap:{int(self.value)}"
        return f"rel:{self.value:g}"


def numerical_rank(singular_values, policy: RankPolicy = RankPolicy(), dims: Sequence[int] = (1,)) -> int:
    """Number of singular values kept under ``policy``; at least 1."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size == 0:
        raise ValueError("numerical_rank needs at least one singular value")
    if s[0] <= 0:
        return 1
    if policy.mode == "cap":
        r = min(int(policy.value), s.size)
    else:
        if policy.mode == "eps":
            cutoff = s[0] * max(dims) * _EPS
        else:
            cutoff = policy.value * s[0]
        r = int(np.count_nonzero(s > cutoff))
    return max(r, 1)


def rowwise_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row ``j`` of the result is ``np.kron(a[j], b[j])``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("rowwise_kron expects two matrices")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def rowwise_kron_power(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Dense ``factors[0] ⊙ factors[1] ⊙ ...`` (brute force)."""
    out = np.asarray(factors[0], dtype=np.float64)
    for f in factors[1:]:
        out = rowwise_kron(out, f)
    return out


def _factor_list(U, d):
    if isinstance(U, (list, tuple)):
        factors = [np.asarray(f, dtype=np.float64) for f in U]
        if d is not None and d != len(factors):
            raise ValueError(f"got {len(factors)} factors but d={d}")
    else:
        if d is None:
            raise ValueError("d is required when a single matrix is given")
        if int(d) != d or d < 1:
            raise ValueError(f"d must be a positive integer, got {d}")
        factors = [np.asarray(U, dtype=np.float64)] * int(d)
    if len(factors) < 1:
        raise ValueError("need at least one factor")
    m = factors[0].shape[0] if factors[0].ndim == 2 else -1
    for k, f in enumerate(factors):
        if f.ndim != 2:
            raise ValueError(f"factor {k} must be a matrix, got shape {f.shape}")
        if f.shape[0] != m:
            raise ValueError(f"factor {k} has {f.shape[0]} rows, expected {m}")
        if f.shape[1] < 1:
            raise ValueError(f"factor {k} has no columns")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"factor {k} has non-finite entries")
    return factors


def _zero_train(m, ns):
    cores = [np.zeros((1, max(m, 1) if k == 0 else 1, n, 1)) for k, n in enumerate(ns)]
    return TTNetwork(cores, MATRIX)


def _structured_svd(f, cur):
    # T = B @ cur with B[(j, a), j] = f[j, a]; B's columns are orthogonal
    w = np.linalg.norm(f, axis=1)
    safe = np.where(w > 0, w, 1.0)
    u, s, vt = np.linalg.svd(w[:, None] * cur, full_matrices=False)
    q = f / safe[:, None]
    left = (q[:, :, None] * u[:, None, :]).reshape(f.shape[0] * f.shape[1], -1)
    return left, s, vt


def krp_to_tt(U, d: int | None = None, policy: RankPolicy = RankPolicy(), svd: str = "dense") -> TTNetwork:
    """Exact train of the row-wise Kronecker power ``U ⊙ ... ⊙ U`` (``d`` factors).

    Parameters
    ----------
    U : ndarray or sequence of ndarray
        ``m x n`` factor, or a list of ``d`` factors with equal row counts
        (then ``d`` may be omitted).
    d : int
        Number of factors.
    policy : RankPolicy
        Numerical-rank rule for every SVD; the default keeps the result
        exact to machine precision.
    svd : {"dense", "structured"}
        ``"dense"`` forms each intermediate ``mn x nr`` matrix and calls a
        full SVD on it.  ``"structured"`` computes the same factorization
        from the ``m x nr`` matrix obtained by exploiting that each row
        block of the intermediate is a scaled copy of one factor row.

    Returns
    -------
    TTNetwork
        ``matrix-train`` with core 0 of shape ``(1, m, n, r_1)`` and cores
        ``k >= 1`` of shape ``(r_k, 1, n, r_{k+1})``.
    """
    if svd not in ("dense", "structured"):
        raise ValueError(f"svd must be 'dense' or 'structured', got {svd!r}")
    factors = _factor_list(U, d)
    m = factors[0].shape[0]
    ns = [f.shape[1] for f in factors]
    if m == 0 or not all(np.any(f) for f in factors):
        return _zero_train(m, ns)

    d = len(factors)
    cores = [None] * d
    cur = factors[-1]  # m x (n_k * r_right), r_right = 1
    r_right = 1
    for k in range(d - 1, 0, -1):
        f = factors[k - 1]
        if svd == "dense":
            t = rowwise_kron(f, cur).reshape(m * ns[k - 1], ns[k] * r_right)
            left, s, vt = np.linalg.svd(t, full_matrices=False)
            shape = t.shape
        else:
            left, s, vt = _structured_svd(f, cur)
            shape = (m * ns[k - 1], ns[k] * r_right)
        r = min(numerical_rank(s, policy, shape), m, s.size)
        cores[k] = (s[:r, None] * vt[:r]).reshape(r, 1, ns[k], r_right)
        cur = left[:, :r].reshape(m, ns[k - 1] * r)
        r_right = r
    cores[0] = cur.reshape(1, m, ns[0], r_right)
    return TTNetwork(cores, MATRIX)


def tt_svd_matrix(
    C: np.ndarray,
    n: int | Sequence[int],
    d: int | None = None,
    policy: RankPolicy = RankPolicy(),
    max_elements: int = DEFAULT_MAX_ELEMENTS,
) -> TTNetwork:
    """TT-SVD of an explicit ``m x prod(n)`` matrix, row index on core 0.

    The first step factors the ``(m * n_0) x (n_1 ... n_{d-1})`` unfolding;
    subsequent steps factor the reshaped ``S V^T`` remainder.
    """
    ns = [int(n)] * int(d) if np.isscalar(n) else [int(k) for k in n]
    C = np.asarray(C, dtype=np.float64)
    if C.size > max_elements:
        raise BudgetExceededError(f"matrix has {C.size} elements, budget is {max_elements}")
    if C.ndim != 2 or C.shape[1] != int(np.prod(ns)):
        raise ValueError(f"expected an m x {int(np.prod(ns))} matrix, got shape {C.shape}")
    m = C.shape[0]
    if m == 0 or not np.any(C):
        return _zero_train(m, ns)
    if len(ns) == 1:
        return TTNetwork([C.reshape(1, m, ns[0], 1)], MATRIX)

    cores = []
    rest = C
    r_left = 1
    for k, nk in enumerate(ns[:-1]):
        o = m if k == 0 else 1
        mat = rest.reshape(r_left * o * nk, -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = numerical_rank(s, policy, mat.shape)
        cores.append(u[:, :r].reshape(r_left, o, nk, r))
        rest = s[:r, None] * vt[:r]
        r_left = r
    cores.append(rest.reshape(r_left, 1, ns[-1], 1))
    return TTNetwork(cores, MATRIX)
