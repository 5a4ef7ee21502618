"""Play the guided extremal-shift strategy against several opponents.

The first player steers a particle crowd toward a lattice guide; the
outcome stays below the value on the lattice plus a correction that
shrinks with the spacing.
"""

from mftg import (DiscreteMeasure, ExtremalShiftStrategy, build_split_chain, estimate_value, make_adversary,
                  make_cost, make_game, partition, residual_proxy, solve_linear_value, outcome_bound)

game = make_game("pursuit-1d")
cost = make_cost("sin2")
m0 = DiscreteMeasure([[0.35], [0.5], [0.65]], [0.25, 0.5, 0.25])
chain = build_split_chain(game, 1 / 16)
field = solve_linear_value(chain, cost)
bound = outcome_bound(game, cost, chain, field, m0)
print(f"lattice value {bound.phi:.4f}, modulus correction {bound.modulus_term:.4f}, bound {bound.bound:.4f}")

opponents = [make_adversary("constant", index=i) for i in range(game.n_v)]
opponents += [make_adversary("random", seed=7), make_adversary("extremal"), make_adversary("gradient", cost=cost)]
strategy = ExtremalShiftStrategy(chain, field, partition(0.0, game.horizon, 0.05), cost)
est = estimate_value(game, cost, strategy, opponents, m0, n_particles=256)
for name, outcome in est.outcomes.items():
    flow = est.results[name]
    print(f"{name:>12s}: outcome {outcome:.4f}, residual {residual_proxy(flow):.4f}")
print(f"strongest opponent: {est.strongest} with {est.upper:.4f} <= {bound.bound:.4f}")
