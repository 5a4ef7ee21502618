"""Solve the lattice Hamilton-Jacobi equation and compare with a single agent's value.

For the pursuit game the payoff only sees where each agent ends up, so the
value of the crowd game is the average of one agent's value.  The lattice
solution approaches it as the spacing shrinks.
"""

import numpy as np

from mftg import build_lattice_chain, hamiltonian, make_cost, make_game, oracle, solve_linear_value

game = make_game("pursuit-1d")
cost = make_cost("sin2")
agent = oracle.agent_hji_1d(game, cost)
print(f"single-agent value on a {agent.cells}-cell grid, v(0, 1/2) = {agent.at([0.5])[0]:.4f}")

for h in (1 / 8, 1 / 16, 1 / 32):
    chain = build_lattice_chain(game, h)
    field = solve_linear_value(chain, cost)
    w0 = field.weights(0.0)
    err = np.abs(w0 - agent.at(chain.lattice.points[:, 0])).max()
    print(f"h = 1/{round(1 / h):<3d} max gap to the agent value {err:.4f}  (epsilon {chain.epsilon:.4f})")

# each state plays a small matrix game; at a uniform law the Hamiltonian sums their values
chain = build_lattice_chain(game, 1 / 8)
mu = np.full(chain.n, 1 / chain.n)
w = cost.linear_c(chain.lattice.points)
value, games = hamiltonian(chain, 0.0, mu, w)
print(f"H at the uniform law with w = c: {value:.4f}; pure saddles in {sum(g.pure for g in games)} of {chain.n} states")
