"""
Tensor trains in a few lines
============================

A short walk through the container and its primitives: building trains,
contracting them back to dense arrays, adding and rounding.
"""

# %%
import numpy as np

from ttkalman.tt import RoundingSpec, column_vector, contract_full, rank_one, tt_add, tt_norm, tt_round

# A rank-1 train of the same vector twice is its Kronecker square.
u = np.array([1.0, 2.0])
net = column_vector([u, u])
print(net)
print(contract_full(net)[0, :, 0])  # [1, 2, 2, 4]

# %%
# Norms are computed core by core, never forming the dense vector.
v = np.array([3.0, 4.0])
print(tt_norm(column_vector([v, v])))  # ||v||^2 = 25

# %%
# Addition concatenates ranks; rounding removes what is redundant.
rng = np.random.default_rng(0)
mats = [rng.standard_normal((3, 3)) for _ in range(4)]
a = rank_one(mats)
twice = tt_add(a, a)
print("ranks after add:  ", twice.ranks)
rounded = tt_round(twice, RoundingSpec(1e-12))
print("ranks after round:", rounded.ranks)
err = np.linalg.norm(contract_full(rounded) - 2 * contract_full(a)) / np.linalg.norm(2 * contract_full(a))
print(f"relative error {err:.1e}")
