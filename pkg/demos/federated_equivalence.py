"""
Federated MPCA gives the centralized answer
===========================================

Three users hold 30, 20 and 10 tensors. They fit MPCA together without
pooling the data, and we compare the result with a plain MPCA fit on the
pooled tensors.
"""

import numpy as np

from fmpca import fed_mpca, make_participants, mpca_fit

rng = np.random.default_rng(7)
samples = rng.standard_normal((60, 8, 8, 5))

# each participant keeps its own block of samples
users = make_participants(samples, (30, 20, 10))
fed = fed_mpca(users, ranks=(3, 3, 2), seed=7)
central = mpca_fit(samples, (3, 3, 2))

# factors are unique only up to column sign
for n, (u, v) in enumerate(zip(fed.factors, central.factors)):
    signs = np.sign(np.sum(u * v, axis=0))
    print(f"mode {n}: max factor deviation {np.max(np.abs(u - v * signs)):.2e}")

print("scatter per sweep (federated):", np.round(fed.scatter_history, 6))
print("scatter per sweep (central):  ", np.round(central.scatter_history, 6))
print("sweeps run:", fed.iterations_run, "converged:", fed.converged)

# the server only ever saw these kinds of payload
print("message kinds:", sorted({m.kind for m in fed.log}))
