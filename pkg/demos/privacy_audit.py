"""
Auditing the federated message log
==================================

Every payload exchanged during a federated fit is recorded with a digest.
The audit checks that only permitted payload kinds appear and that no
payload matches a raw sample, a local mean or a local unfolding.
"""

import numpy as np

from fmpca import audit_log, fed_mpca, make_participants

rng = np.random.default_rng(11)
samples = rng.standard_normal((40, 5, 4, 3)) + 2.0
users = make_participants(samples, (25, 10, 5))

fed = fed_mpca(users, ranks=0.9, mask_scatter=True, seed=11)

counts = {}
for msg in fed.log:
    counts[msg.kind] = counts.get(msg.kind, 0) + 1
for kind, count in sorted(counts.items()):
    print(f"{kind:>17}: {count} messages")

findings = audit_log(fed.log, users)
print("audit findings:", findings or "none")
