"""Finite-state Markov approximations of zero-sum mean-field-type differential games on the torus."""

import os as _os

# MFTG_THREADS caps BLAS worker threads; it has to be set before numpy loads
_threads = _os.environ.get("MFTG_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .chainsim import integrate_kolmogorov, moment_bounds_check, sample_chain  # noqa: E402
from .dynamics import GameDynamics, TerminalCost, make_cost, make_game  # noqa: E402
from .hj import hamiltonian, solve_grid, solve_linear_value, solve_matrix_game, verify_supersolution  # noqa: E402
from .markov import build_lattice_chain, build_split_chain, certify_epsilon, lattice_epsilon  # noqa: E402
from .measures import DiscreteMeasure, Lattice, SimplexVector, embed, metric_comparison, project, wasserstein  # noqa: E402
from .mfsim import estimate_value, make_adversary, residual_proxy, simulate_flow, outcome_bound  # noqa: E402
from .strategy import ExtremalShiftStrategy, partition  # noqa: E402

__all__ = [
    "DiscreteMeasure", "ExtremalShiftStrategy", "GameDynamics", "Lattice", "SimplexVector", "TerminalCost",
    "build_lattice_chain", "build_split_chain", "certify_epsilon", "embed", "estimate_value", "hamiltonian",
    "integrate_kolmogorov", "lattice_epsilon", "make_adversary", "make_cost", "make_game", "metric_comparison",
    "moment_bounds_check", "partition", "project", "residual_proxy", "sample_chain", "simulate_flow", "solve_grid", "solve_linear_value",
    "solve_matrix_game", "outcome_bound", "verify_supersolution", "wasserstein",
]
