"""Alignment lattices: exact marginals, the enumeration oracle, and occupancies.

A transducer scores a label sequence by summing over every monotone
alignment of labels to frames.  This walk-through builds a small model,
computes the marginal with the forward recursion, checks it against
explicit path enumeration, and looks at the alpha/beta grids.
"""

import numpy as np

from mhat import (
    EncoderConfig,
    MhatModel,
    Vocabulary,
    brute_force_log_prob,
    build_lattice,
    forward_log_prob,
)

rng = np.random.default_rng(0)

vocab = Vocabulary.default(4)
model = MhatModel(vocab, EncoderConfig(d_x=3, d_f=8), label_dim=8, blank_dim=4, joint_dim=6, seed=1)

# Three frames of synthetic features, two labels to explain.
X = rng.standard_normal((3, 3))
y = [2, 0]

print("forward recursion :", float(forward_log_prob(model, X, y).data))
print("path enumeration  :", brute_force_log_prob(model, X, y))

# The lattice object exposes everything the recursions computed.
lat = build_lattice(model, X, y)
print("\nlog_alpha (rows t=0..T, cols u=0..U):")
print(np.array_str(lat.log_alpha, precision=3))
print("\nlog_beta:")
print(np.array_str(lat.log_beta, precision=3))
print("\nalpha at the origin is 0; beta at the origin reproduces the total:")
print("  beta[1,0] =", lat.log_beta[1, 0], " vs log_prob =", lat.log_prob)

# Posterior arc occupancies: how much probability mass crosses each arc.
# Summed over any anti-diagonal cut of the lattice they account for all paths.
t_len, u_len, tot = lat.t_len, lat.u_len, lat.log_prob
print("\nblank-arc occupancies (t, u):")
for t in range(1, t_len):
    for u in range(u_len + 1):
        occ = np.exp(lat.log_alpha[t, u] + lat.log_blank[t - 1, u] + lat.log_beta[t + 1, u] - tot)
        if occ > 1e-6:
            print(f"  ({t},{u}): {occ:.4f}")
print("label-arc occupancies (t, u) -> emits token y[u]:")
for t in range(1, t_len + 1):
    for u in range(u_len):
        occ = np.exp(lat.log_alpha[t, u] + lat.log_label[t - 1, u] + lat.log_beta[t, u + 1] - tot)
        if occ > 1e-6:
            print(f"  ({t},{u}): {occ:.4f}")
print("final blank occupancy is always 1 (every alignment ends with it).")
