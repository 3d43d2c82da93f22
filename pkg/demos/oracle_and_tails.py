"""
Checking the simulator against exact transition probabilities
=============================================================

For a single frozen environment the law of the walk after t steps can be
computed exactly by pushing probability mass forward.  We compare it with a
million simulated walks, then look at how fast the tails decay.
"""

import numpy as np

from rwre import ConductanceLaw, EnvironmentField, simulate_discrete
from rwre.oracle import check_detailed_balance, exact_distribution, total_variation

law = ConductanceLaw.two_point(1, 4, 0.5)
field = EnvironmentField(law, seed=5, env_index=0)

print("conductances on the edges around the origin (+e0, -e0, +e1, -e1):", field.incident((0, 0)))
print("detailed balance:", check_detailed_balance(field, radius=6))

t, n = 8, 10**6
kernel = exact_distribution(field, t)
# every walk in environment 0, each with its own stream
batch = simulate_discrete(law, 2, 5, t, np.zeros(n, dtype=np.uint64), np.arange(n, dtype=np.uint64))
print(f"total variation, {n} walks vs exact, t={t}: {total_variation(kernel, batch.positions):.4f}")

# tails at a longer horizon: P[|Y(t)| >= r sqrt(t)] falls off like exp(-c r^2)
t = 64
kernel = exact_distribution(field, t)
for r in (0.5, 1, 2, 3, 4):
    print(f"r={r}: P = {kernel.tail(r):.3e}")
