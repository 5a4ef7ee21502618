"""Build the nearest-neighbour chain for a pursuit game and look at what it certifies.

Run with ``python demos/lattice_chain.py``.
"""

import numpy as np

from mftg import (DiscreteMeasure, Lattice, SimplexVector, build_lattice_chain, build_split_chain,
                  certify_epsilon, embed, make_game, metric_comparison, project, wasserstein)

game = make_game("pursuit-1d")
print(f"{game.name}: speed bound R = {game.bound_R}, Lipschitz constant L = {game.lipschitz_L}")

for h in (1 / 4, 1 / 8, 1 / 16):
    chain = build_lattice_chain(game, h)
    report = certify_epsilon(chain, samples=4)
    print(f"h = 1/{round(1 / h):<3d} states = {chain.n:<3d} epsilon = {chain.epsilon:.5f} certified = {report.ok}")

# the split chain moves each player's share of the velocity separately but keeps the same epsilon
split = build_split_chain(game, 1 / 8)
print(f"split chain epsilon at h = 1/8: {split.epsilon:.5f}")

# a distribution off the lattice, its projection, and the cost of moving between them
m0 = DiscreteMeasure([[0.3], [0.52]], [0.4, 0.6])
mu = project(m0, split.lattice)
gap, _ = wasserstein(2, m0, embed(mu))
print(f"projection of {m0.points[:, 0].tolist()} onto the lattice: weights {np.round(mu.values, 3).tolist()}")
print(f"W2 to the projection: {gap:.4f} (covering radius {split.h / 2:.4f})")

# the Euclidean norm on the simplex is comparable to the transport metric on a fixed lattice
lattice = Lattice.regular(1 / 8, 1)
rng = np.random.default_rng(1)
a, b = (SimplexVector(lattice, rng.dirichlet(np.ones(8))) for _ in range(2))
rep = metric_comparison(2, a, b)
print(f"W2^2 = {rep.w_p ** 2:.4f} lies in [{rep.lower_bound:.4f}, {rep.upper_bound:.4f}]: {rep.ok}")
