"""
Tensor-train containers and the primitives the filter is built from.

Every core is a 4-way array with axes ``(r_left, o, i, r_right)``: a left
rank, an output (row) mode, an input (column) mode and a right rank.  A
missing mode has size 1, so vectors, matrices and operators share one
layout.  The left rank of the first core is the batch index ``l`` (the
number of coupled state columns); the right rank of the last core is 1.

Dense conversions order indices row-major with core 0 slowest, so the
train of ``u, u`` on the input mode contracts to ``np.kron(u, u)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

VECTOR = "vector-train"
MATRIX = "matrix-train"
COVARIANCE = "covariance-train"
GAIN = "gain-train"
KINDS = (VECTOR, MATRIX, COVARIANCE, GAIN)

DEFAULT_MAX_ELEMENTS = 2**27


class TTStructureError(ValueError):
    """Raised when cores or trains have incompatible shapes."""


class BudgetExceededError(MemoryError):
    """Raised instead of materializing an object larger than the caller's budget."""


def _freeze(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class TTNetwork:
    """Ordered chain of 4-way cores.

    Parameters
    ----------
    cores : sequence of ndarray
        Core ``k`` has shape ``(r_{k}, o_k, i_k, r_{k+1})``. ``r_0`` is the
        batch size, ``r_d`` must be 1.
    kind : str
        One of ``vector-train`` (column vectors, input modes all 1),
        ``matrix-train``, ``covariance-train`` (square cores, ``o == i``)
        or ``gain-train`` (input mode 1 on every core except the first).
    """

    cores: tuple
    kind: str = MATRIX

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TTStructureError(f"unknown kind {self.kind!r}")
        if len(self.cores) == 0:
            raise TTStructureError("a train needs at least one core")
        cores = []
        for k, c in enumerate(self.cores):
            c = np.asarray(c, dtype=np.float64)
            if c.ndim != 4:
                raise TTStructureError(f"core {k} must be 4-way, got shape {c.shape}")
            if min(c.shape) < 1:
                raise TTStructureError(f"core {k} has an empty dimension: {c.shape}")
            if not np.all(np.isfinite(c)):
                raise TTStructureError(f"core {k} has non-finite entries")
            if k > 0 and c.shape[0] != cores[-1].shape[3]:
                raise TTStructureError(
                    f"core {k}: left rank {c.shape[0]} does not match right rank "
                    f"{cores[-1].shape[3]} of core {k - 1}"
                )
            cores.append(_freeze(c))
        if cores[-1].shape[3] != 1:
            raise TTStructureError(f"last core must have right rank 1, got {cores[-1].shape[3]}")
        for k, c in enumerate(cores):
            _, o, i, _ = c.shape
            if self.kind == VECTOR and i != 1:
                raise TTStructureError(f"core {k}: vector-train needs input mode 1, got {i}")
            if self.kind == COVARIANCE and o != i:
                raise TTStructureError(f"core {k}: covariance-train needs square modes, got ({o}, {i})")
            if self.kind == GAIN and k > 0 and i != 1:
                raise TTStructureError(f"core {k}: gain-train needs input mode 1 past core 0, got {i}")
        object.__setattr__(self, "cores", tuple(cores))

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def batch(self) -> int:
        return self.cores[0].shape[0]

    @property
    def ranks(self) -> list[int]:
        """``[r_0, r_1, ..., r_d]`` with ``r_0`` the batch size."""
        return [self.cores[0].shape[0]] + [c.shape[3] for c in self.cores]

    @property
    def out_dims(self) -> list[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def in_dims(self) -> list[int]:
        return [c.shape[2] for c in self.cores]

    @property
    def shape(self) -> tuple[int, int, int]:
        """Dense shape ``(batch, prod(out_dims), prod(in_dims))``."""
        return (self.batch, int(np.prod(self.out_dims)), int(np.prod(self.in_dims)))

    def with_kind(self, kind: str) -> "TTNetwork":
        return TTNetwork(self.cores, kind)

    def nbytes(self) -> int:
        return sum(c.nbytes for c in self.cores)

    def __repr__(self):
        return (
            f"TTNetwork(kind={self.kind!r}, d={self.d}, batch={self.batch}, "
            f"out={self.out_dims}, in={self.in_dims}, ranks={self.ranks})"
        )


@dataclass(frozen=True)
class RoundingSpec:
    """Relative truncation threshold and optional hard rank cap (0 = none)."""

    tolerance: float = 1e-10
    max_rank: int = 0

    def __post_init__(self):
        if not self.tolerance >= 0:
            raise ValueError(f"tolerance must be nonnegative, got {self.tolerance}")
        if self.max_rank < 0:
            raise ValueError(f"max_rank must be >= 0, got {self.max_rank}")


# -- constructors ----------------------------------------------------------


def zeros(out_dims: Sequence[int], in_dims: Sequence[int], batch: int = 1, kind: str = MATRIX) -> TTNetwork:
    """All-zero rank-1 train."""
    if len(out_dims) != len(in_dims):
        raise TTStructureError("out_dims and in_dims differ in length")
    cores = [np.zeros((batch if k == 0 else 1, o, i, 1)) for k, (o, i) in enumerate(zip(out_dims, in_dims))]
    return TTNetwork(cores, kind)


def rank_one(factors: Sequence[np.ndarray], kind: str = MATRIX) -> TTNetwork:
    """Rank-1 train from per-core ``(o, i)`` matrices (1-D arrays become rows)."""
    cores = []
    for f in factors:
        f = np.asarray(f, dtype=np.float64)
        if f.ndim == 1:
            f = f[None, :]
        cores.append(f[None, :, :, None])
    return TTNetwork(cores, kind)


def column_vector(factors: Sequence[np.ndarray]) -> TTNetwork:
    """Rank-1 vector-train representing ``kron(factors[0], factors[1], ...)`` as a column."""
    return rank_one([np.asarray(f, dtype=np.float64)[:, None] for f in factors], VECTOR)


def identity(n: int | Sequence[int], d: int | None = None, kind: str = MATRIX) -> TTNetwork:
    """Identity operator on ``n^d`` (or on the product of the listed mode sizes)."""
    dims = [n] * d if d is not None else list(n)
    return rank_one([np.eye(k) for k in dims], kind)


def scaled_identity(n: int, d: int, scale) -> TTNetwork:
    """Covariance-train holding ``scale[b] * I`` for every batch slice ``b``."""
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
    cores = [np.eye(n)[None, :, :, None] for _ in range(d)]
    cores[0] = scale[:, None, None, None] * cores[0]
    return TTNetwork(cores, COVARIANCE)


def swap_modes(net: TTNetwork, kind: str | None = None) -> TTNetwork:
    """Exchange the output and input mode of every core (transpose per batch slice)."""
    return TTNetwork([c.transpose(0, 2, 1, 3) for c in net.cores], kind or MATRIX)


# -- dense conversion --------------------------------------------------------


def contract_full(net: TTNetwork, max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
    """Materialize the train as an array of shape ``(batch, prod(o), prod(i))``.

    Desk-scale helper.  Raises :class:`BudgetExceededError` before allocating
    anything when an intermediate would exceed ``max_elements`` entries.
    """
    b = net.batch
    rows = cols = 1
    for c in net.cores:
        rows *= c.shape[1]
        cols *= c.shape[2]
        size = b * rows * cols * c.shape[3]
        if size > max_elements:
            raise BudgetExceededError(
                f"contraction needs {size} elements, budget is {max_elements}"
            )
    res = net.cores[0]
    for core in net.cores[1:]:
        b, O, I, _ = res.shape
        _, o, i, s = core.shape
        res = np.tensordot(res, core, axes=(3, 0))  # b O I o i s
        res = res.transpose(0, 1, 3, 2, 4, 5).reshape(b, O * o, I * i, s)
    return np.ascontiguousarray(res[..., 0])


# -- algebra -----------------------------------------------------------------


def _check_same_structure(a: TTNetwork, b: TTNetwork):
    if a.kind != b.kind:
        raise TTStructureError(f"kind mismatch: {a.kind} vs {b.kind}")
    if a.d != b.d:
        raise TTStructureError(f"core count mismatch: {a.d} vs {b.d}")
    if a.batch != b.batch:
        raise TTStructureError(f"batch mismatch: {a.batch} vs {b.batch}")
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        if ca.shape[1:3] != cb.shape[1:3]:
            raise TTStructureError(f"core {k}: mode sizes {ca.shape[1:3]} vs {cb.shape[1:3]}")


def tt_add(a: TTNetwork, b: TTNetwork) -> TTNetwork:
    """Sum of two trains by rank concatenation. Never rounds."""
    _check_same_structure(a, b)
    if a.d == 1:
        return TTNetwork([a.cores[0] + b.cores[0]], a.kind)
    cores = [np.concatenate([a.cores[0], b.cores[0]], axis=3)]
    for ca, cb in zip(a.cores[1:-1], b.cores[1:-1]):
        ra, o, i, sa = ca.shape
        rb, _, _, sb = cb.shape
        c = np.zeros((ra + rb, o, i, sa + sb))
        c[:ra, :, :, :sa] = ca
        c[ra:, :, :, sa:] = cb
        cores.append(c)
    cores.append(np.concatenate([a.cores[-1], b.cores[-1]], axis=0))
    return TTNetwork(cores, a.kind)


def tt_scale(net: TTNetwork, alpha) -> TTNetwork:
    """Multiply by a scalar, or slice-wise by a length-``batch`` vector."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 0:
        first = alpha * net.cores[0]
    else:
        if alpha.shape != (net.batch,):
            raise TTStructureError(f"per-batch scale needs shape ({net.batch},), got {alpha.shape}")
        first = alpha[:, None, None, None] * net.cores[0]
    return TTNetwork((first,) + net.cores[1:], net.kind)


def tt_sub(a: TTNetwork, b: TTNetwork) -> TTNetwork:
    return tt_add(a, tt_scale(b, -1.0))


def _truncation_rank(s: np.ndarray, threshold: float, max_rank: int) -> int:
    # smallest r >= 1 with ||s[r:]|| <= threshold
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    r = int(np.count_nonzero(tail[1:] > threshold)) + 1
    if max_rank:
        r = min(r, max_rank)
    return r


def right_orthogonalize(net: TTNetwork) -> TTNetwork:
    """Same train with cores ``1..d-1`` right-orthonormal (QR sweep from the right).

    Ranks can only shrink; all weight ends up in core 0.
    """
    cores = [np.array(c) for c in net.cores]
    for k in range(net.d - 1, 0, -1):
        r, o, i, s = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r, o * i * s).T)
        cores[k] = q.T.reshape(-1, o, i, s)
        cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=(3, 0))
    return TTNetwork(cores, net.kind)


def tt_round(net: TTNetwork, spec: RoundingSpec | float = RoundingSpec()) -> TTNetwork:
    """TT-rounding: right-to-left QR sweep, then left-to-right truncated SVDs.

    Each of the ``d - 1`` truncations discards a tail of Frobenius norm at
    most ``tolerance * ||net|| / sqrt(d - 1)``, so the total error is at most
    ``tolerance * ||net||`` (norm over all batch slices together).  The batch
    index rides along with the first mode and is never truncated.
    """
    if not isinstance(spec, RoundingSpec):
        spec = RoundingSpec(float(spec))
    d = net.d
    if d == 1:
        return net
    cores = list(right_orthogonalize(net).cores)

    norm = np.linalg.norm(cores[0])
    threshold = spec.tolerance * norm / np.sqrt(d - 1)

    for k in range(d - 1):
        r, o, i, s = cores[k].shape
        u, sv, vt = np.linalg.svd(cores[k].reshape(r * o * i, s), full_matrices=False)
        rank = _truncation_rank(sv, threshold, spec.max_rank)
        cores[k] = u[:, :rank].reshape(r, o, i, rank)
        cores[k + 1] = np.tensordot(sv[:rank, None] * vt[:rank], cores[k + 1], axes=(1, 0))
    return TTNetwork(cores, net.kind)


def tt_norm(net: TTNetwork) -> np.ndarray:
    """Frobenius norm of every batch slice, shape ``(batch,)``.

    Accumulated left to right through batched QR factors, so the dense
    object is never formed and small norms of nearly cancelling sums keep
    full relative accuracy.
    """
    c0 = net.cores[0]
    b, o, i, s = c0.shape
    r = np.linalg.qr(c0.reshape(b, o * i, s), mode="r")
    for core in net.cores[1:]:
        rk, o, i, s = core.shape
        # b k rk @ rk (o i s) -> b (k o i) s
        y = np.tensordot(r, core, axes=(2, 0)).reshape(b, -1, s)
        r = np.linalg.qr(y, mode="r")
    return np.linalg.norm(r.reshape(b, -1), axis=1)


def core_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of a column core and a row core.

    ``a`` carries its vector on the output mode (input mode 1), ``b`` on the
    input mode (output mode 1).  The result has
    ``C[(a1, a2), x, y, (b1, b2)] = a[a1, x, 0, b1] * b[a2, 0, y, b2]``,
    so ranks multiply.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 4 or b.ndim != 4:
        raise TTStructureError("core_kron expects 4-way cores")
    if a.shape[2] != 1:
        raise TTStructureError(f"left operand must have input mode 1, got shape {a.shape}")
    if b.shape[1] != 1:
        raise TTStructureError(f"right operand must have output mode 1, got shape {b.shape}")
    ra, o, _, sa = a.shape
    rb, _, i, sb = b.shape
    c = np.einsum("axp,cyq->acxypq", a[:, :, 0, :], b[:, 0, :, :])
    return c.reshape(ra * rb, o, i, sa * sb)


def apply_operator(op: TTNetwork, x: TTNetwork, side: str = "first", kind: str | None = None) -> TTNetwork:
    """Core-by-core product of an operator train with one mode of ``x``.

    ``side="first"`` computes ``op @ x`` (the operator's input mode meets
    the output mode of ``x``); ``side="second"`` computes ``x @ op.T``.  The
    operator must have batch 1; ranks of the result are products of the
    operand ranks, with the ``x`` rank index slowest so the batch index of
    ``x`` is preserved.
    """
    if op.batch != 1:
        raise TTStructureError(f"operator train must have batch 1, got {op.batch}")
    if op.d != x.d:
        raise TTStructureError(f"core count mismatch: operator {op.d}, operand {x.d}")
    if side not in ("first", "second"):
        raise ValueError(f"side must be 'first' or 'second', got {side!r}")
    axis = 1 if side == "first" else 2
    cores = []
    for k, (a, c) in enumerate(zip(op.cores, x.cores)):
        if a.shape[2] != c.shape[axis]:
            raise TTStructureError(
                f"core {k}: operator input mode {a.shape[2]} does not match operand mode {c.shape[axis]}"
            )
        ra, p, _, sa = a.shape
        rc, o, i, sc = c.shape
        if side == "first":
            new = np.tensordot(c, a, axes=(1, 2))  # c j d a p b
            new = new.transpose(0, 3, 4, 1, 2, 5).reshape(rc * ra, p, i, sc * sa)
        else:
            new = np.tensordot(c, a, axes=(2, 2))  # c i d a p b
            new = new.transpose(0, 3, 1, 4, 2, 5).reshape(rc * ra, o, p, sc * sa)
        cores.append(new)
    return TTNetwork(cores, kind or x.kind)
