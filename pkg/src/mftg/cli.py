"""``mftg`` command line: lattice certification, chain sampling, value solving, particle simulation,
convergence studies and the acceptance suites.

Exit codes: 0 success, 1 usage error, 2 certification or bound violation.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import verify as suites
from .chainsim import RelaxedFeedback, integrate_kolmogorov, moment_bounds_check, r_one, sample_states
from .dynamics import COSTS, GAMES, make_cost, make_game
from .errors import CertificationError, ContractError, MFTGError, SupersolutionDefectError
from .hj import hj_residual, solve_linear_value, verify_supersolution
from .markov import build_lattice_chain, build_split_chain, certify_epsilon, parse_h
from .measures import CSV_HEADER, DiscreteMeasure, lattice_to_csv
from .mfsim import ADVERSARY_KINDS, c_star, make_adversary, residual_proxy, simulate_flow, outcome_bound
from .strategy import ExtremalShiftStrategy, partition
from .torus import format_coord

OK, USAGE, VIOLATION = 0, 1, 2
COMMANDS = ("lattice", "chain-sim", "solve", "simulate", "convergence", "verify")
SHARED_SECTIONS = ("", "common", "defaults")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- config ----------------------------------------------------------------

def parse_config(text: str, command: str) -> dict:
    """Flat ``key = value`` lines; ``[section]`` headers scope keys to one subcommand."""
    out, section = {}, ""
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise UsageError(f"config line {number}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {number}: empty key")
        if section in SHARED_SECTIONS or section == command:
            out[key.replace("-", "_")] = value
    return out


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def _thread_cap() -> int | None:
    raw = os.environ.get("MFTG_THREADS")
    if raw is None or raw == "":
        return None
    if not raw.isdigit() or int(raw) < 1:
        raise UsageError(f"MFTG_THREADS must be a positive integer, got {raw!r}")
    return int(raw)


# --- parser ------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--out", default="mftg-out", help="output directory")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--quiet", action="store_true", help="print only the status line")


def _game_args(p, split=True):
    p.add_argument("--game", default="pursuit-1d", choices=GAMES)
    p.add_argument("--h", default="1/16", help="lattice spacing 1/k")
    if split:
        p.add_argument("--split", action="store_true", help="use the separated (split) chain")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mftg", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("lattice", help="build a lattice chain and certify its epsilon")
    _game_args(p)
    p.add_argument("--samples", type=int, default=20, help="sampled laws for measure-dependent games")
    _common(p)

    p = sub.add_parser("chain-sim", help="integrate the chain law and Monte Carlo check the moment bounds")
    _game_args(p)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--gaps", default="0.01,0.05,0.1", help="comma separated horizons t - s")
    _common(p)

    p = sub.add_parser("solve", help="solve the finite-state value function")
    _game_args(p)
    p.add_argument("--dt", type=float, default=None, help="backward step (default: automatic)")
    p.add_argument("--cost", default="sin2", choices=COSTS)
    p.add_argument("--samples", type=int, default=6, help="probes for the supersolution check")
    _common(p)

    p = sub.add_parser("simulate", help="run the extremal-shift strategy against an adversary")
    _game_args(p)
    p.add_argument("--particles", type=int, default=512)
    p.add_argument("--partition", type=int, default=20, help="number of partition intervals")
    p.add_argument("--adversary", default="extremal", choices=ADVERSARY_KINDS)
    p.add_argument("--adversary-index", type=int, default=0, help="control index for the constant adversary")
    p.add_argument("--cost", default="sin2", choices=COSTS)
    p.add_argument("--m0", default=None, help="initial law as 'x[;y]:w,...' (default: a three-atom law)")
    _common(p)

    p = sub.add_parser("convergence", help="nested (h, partition) refinements against the agent oracle")
    p.add_argument("--game", default="pursuit-1d", choices=GAMES)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--particles", type=int, default=512)
    p.add_argument("--cost", default="sin2", choices=COSTS)
    _common(p)

    p = sub.add_parser("verify", help="run acceptance suites")
    p.add_argument("--suite", default="all", choices=("all",) + tuple(suites.SUITES))
    _common(p)
    parser.subcommands = sub.choices
    return parser


def parse_args(argv):
    argv = list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(f"choose a subcommand: {', '.join(COMMANDS)}")
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        values = parse_config(text, args.command)
        sub = parser.subcommands[args.command]
        for key, value in values.items():
            default = sub.get_default(key)
            if key in ("help", "config") or (default is None and key not in vars(args)):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if isinstance(default, bool):
                values[key] = _truthy(value)
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# --- output helpers ----------------------------------------------------------

class Run:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list = []
        self.constants: dict = {}

    def write(self, name: str, text: str):
        (self.out / name).write_text(text)
        self.files.append(name)

    def say(self, text: str = ""):
        if not self.args.quiet:
            print(text)

    def manifest(self, status: str):
        lines = ["# mftg run manifest", f"command = {self.args.command}"]
        for key in sorted(vars(self.args)):
            if key not in ("command", "quiet"):
                lines.append(f"arg.{key} = {getattr(self.args, key)}")
        lines.append(f"threads = {_thread_cap() or 'unset'}")
        for key, value in self.constants.items():
            lines.append(f"{key} = {format_coord(value) if isinstance(value, float) else value}")
        for name in self.files:
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            lines.append(f"output {name} sha256={digest}")
        lines.append(f"status = {status}")
        (self.out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _chain_for(args, dyn):
    h = parse_h(args.h)
    if getattr(args, "split", False):
        return build_split_chain(dyn, h)
    return build_lattice_chain(dyn, h)


def _record_constants(run: Run, dyn, chain):
    run.constants.update({"epsilon": chain.epsilon, "c_star": c_star(dyn.horizon, dyn.lipschitz_L),
                          "r_one": r_one(dyn.bound_R, dyn.dim), "bound_R": dyn.bound_R,
                          "lipschitz_L": dyn.lipschitz_L})


def _csv(header: list, rows) -> str:
    lines = [CSV_HEADER, ",".join(header)]
    for row in rows:
        lines.append(",".join(format_coord(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_measure(text: str, dim: int) -> DiscreteMeasure:
    points, weights = [], []
    try:
        for atom in text.split(","):
            where, weight = atom.split(":")
            coords = [float(c) for c in where.split(";")]
            if len(coords) != dim:
                raise UsageError(f"atom {atom!r} has {len(coords)} coordinates, the game needs {dim}")
            points.append(coords)
            weights.append(float(weight))
    except ValueError as exc:
        raise UsageError(f"malformed initial law {text!r}: {exc}") from exc
    total = sum(weights)
    if total <= 0 or min(weights) < 0:
        raise UsageError("initial law weights must be nonnegative with positive total")
    return DiscreteMeasure(points, np.array(weights) / total)


def default_measure(dim: int) -> DiscreteMeasure:
    if dim == 1:
        return suites.REFERENCE_M0
    return DiscreteMeasure([[0.35, 0.5], [0.65, 0.5]], [0.5, 0.5])


# --- subcommands -------------------------------------------------------------

def cmd_lattice(run: Run) -> int:
    a = run.args
    dyn = make_game(a.game)
    chain = _chain_for(a, dyn)
    _record_constants(run, dyn, chain)
    rep = certify_epsilon(chain, samples=a.samples, rng=np.random.default_rng(a.seed))
    q = chain.rates(0.0, np.full(chain.n, 1.0 / chain.n))[0, 0]
    run.write("lattice.csv", lattice_to_csv(chain.lattice))
    run.write("rates.csv", _csv(["state"] + [f"q_{j + 1}" for j in range(chain.n)],
                                ([i + 1, *row] for i, row in enumerate(q))))
    report = [f"game = {dyn.name}", f"chain = {chain.name}", f"h = {format_coord(chain.h)}",
              f"states = {chain.n}", *rep.lines()]
    run.write("epsilon.txt", "\n".join(report) + "\n")
    for line in report:
        run.say(line)
    return OK if rep.ok else VIOLATION


def cmd_chain_sim(run: Run) -> int:
    a = run.args
    dyn = make_game(a.game)
    chain = _chain_for(a, dyn)
    _record_constants(run, dyn, chain)
    try:
        gaps = sorted(float(g) for g in a.gaps.split(","))
    except ValueError as exc:
        raise UsageError(f"malformed --gaps {a.gaps!r}") from exc
    if not gaps or gaps[0] <= 0 or gaps[-1] > dyn.horizon:
        raise UsageError("gaps must be positive and at most the horizon")
    if a.paths < 2:
        raise UsageError("--paths must be at least 2")
    rng = np.random.default_rng(a.seed)
    n = chain.n
    uniform = np.full(n, 1.0 / n)
    gamma, theta = RelaxedFeedback.uniform(n, chain.n_u), RelaxedFeedback.uniform(n, chain.n_v)
    law = integrate_kolmogorov(chain, uniform, gamma, theta, (0.0, gaps[-1]))
    run.write("law.csv", law.to_csv())

    starts = rng.integers(0, n, size=a.paths)
    states, _ = sample_states(chain, starts, law, gamma, theta, (0.0, gaps[-1]), gaps, rng)
    freq = [np.bincount(row, minlength=n) / a.paths for row in states]
    run.write("empirical.csv", _csv(["t"] + [f"mu_{i + 1}" for i in range(n)],
                                    ([g, *f] for g, f in zip(gaps, freq))))

    rep = moment_bounds_check(chain, a.paths, gaps, rng)
    run.write("moments.csv", _csv(["start", "schedule", "gap", "mean", "stderr", "bound_r1", "bound_eps", "margin"],
                                  ((r.start + 1, r.schedule, r.gap, r.mean, r.stderr, r.bound_r1, r.bound_eps,
                                    r.margin) for r in rep.rows)))
    bad = sum(not r.ok for r in rep.rows)
    run.say(f"law integrated to t = {gaps[-1]:g} on {n} states; final law error vs sample "
            f"{float(np.abs(freq[-1] - law.final().values).max()):.3e}")
    run.say(f"moment bounds: {len(rep.rows)} cells, {bad} violations, worst margin {rep.worst_margin:.4f}")
    return OK if rep.ok else VIOLATION


def _linear_field(a, dyn, chain, cost):
    if chain.measure_dependent:
        raise UsageError(f"game {dyn.name!r} depends on the distribution; the linear value solver "
                         "needs a distribution-independent game")
    return solve_linear_value(chain, cost, dt=getattr(a, "dt", None))


def cmd_solve(run: Run) -> int:
    a = run.args
    dyn = make_game(a.game)
    chain = _chain_for(a, dyn)
    _record_constants(run, dyn, chain)
    cost = make_cost(a.cost, dyn.dim)
    field_ = _linear_field(a, dyn, chain, cost)
    rng = np.random.default_rng(a.seed)
    resid = hj_residual(field_, chain, samples=a.samples, rng=rng)
    sup = verify_supersolution(field_, chain, cost, samples=a.samples, rng=rng)
    run.write("value.csv", field_.to_csv())
    report = [f"game = {dyn.name}", f"states = {chain.n}", f"steps = {len(field_.times) - 1}",
              f"hj_residual = {resid:.3e}", f"terminal_probes = {sup.terminal_checked}",
              f"flow_probes = {sup.flow_checked}",
              f"violations = {len(sup.terminal_violations) + len(sup.flow_violations)}",
              f"max_flow_increase = {sup.max_flow_increase:.3e}"]
    run.write("solve.txt", "\n".join(report) + "\n")
    for line in report:
        run.say(line)
    return OK if sup.ok else VIOLATION


def cmd_simulate(run: Run) -> int:
    a = run.args
    dyn = make_game(a.game)
    chain = _chain_for(a, dyn)
    _record_constants(run, dyn, chain)
    if a.particles < 1 or a.partition < 1:
        raise UsageError("--particles and --partition must be positive")
    cost = make_cost(a.cost, dyn.dim)
    m0 = parse_measure(a.m0, dyn.dim) if a.m0 else default_measure(dyn.dim)
    field_ = _linear_field(a, dyn, chain, cost)
    st = ExtremalShiftStrategy(chain, field_, partition(0.0, dyn.horizon, dyn.horizon / a.partition), cost)
    adv = make_adversary(a.adversary, seed=a.seed, index=a.adversary_index, cost=cost)
    flow = simulate_flow(dyn, cost, st, adv, m0, a.particles)
    bound = outcome_bound(dyn, cost, chain, field_, m0)
    resid = residual_proxy(flow)
    run.write("trajectory.csv", flow.trajectory_csv())
    run.write("guide.csv", st.trace_csv())
    ok = flow.outcome <= bound.bound + resid
    report = [f"adversary = {adv.name if hasattr(adv, 'name') else a.adversary}",
              f"outcome = {format_coord(flow.outcome)}", f"phi_upper = {format_coord(bound.phi)}",
              f"modulus_term = {format_coord(bound.modulus_term)}", f"residual = {format_coord(resid)}",
              f"guide_gap = {format_coord(st.guide_gap())}",
              f"bound_holds = {'yes' if ok else 'no'}"]
    run.write("outcome.txt", "\n".join(report) + "\n")
    for line in report:
        run.say(line)
    return OK if ok else VIOLATION


def cmd_convergence(run: Run) -> int:
    a = run.args
    if a.levels < 1:
        raise UsageError("--levels must be positive")
    dyn = make_game(a.game)
    if dyn.dim != 1 or dyn.measure_dependent:
        raise UsageError("the convergence study needs a one-dimensional distribution-independent game")
    levels = [(0.125 / 2 ** i, 0.1 / 2 ** i) for i in range(a.levels)]
    target, rows = suites.value_study(levels, particles=a.particles, seed=a.seed, game=a.game, cost_name=a.cost)
    run.constants.update({"c_star": c_star(dyn.horizon, dyn.lipschitz_L), "r_one": r_one(dyn.bound_R, dyn.dim),
                          "oracle": target})
    run.constants.update({f"epsilon_level{i + 1}": r["epsilon"] for i, r in enumerate(rows)})
    header = ["level", "h", "spacing", "epsilon", "estimate", "strongest", "oracle", "error"]
    table = [[i + 1, r["h"], r["spacing"], r["epsilon"], r["estimate"], r["strongest"], r["oracle"], r["error"]]
             for i, r in enumerate(rows)]
    run.write("convergence.csv", _csv(header, table))
    run.say(" ".join(f"{h:>10s}" for h in header))
    for row in table:
        run.say(" ".join(f"{v:>10.4g}" if isinstance(v, float) else f"{v!s:>10s}" for v in row))
    errors = [r["error"] for r in rows]
    return OK if all(b <= a_ for a_, b in zip(errors, errors[1:])) else VIOLATION


def cmd_verify(run: Run) -> int:
    a = run.args
    names = list(suites.SUITES) if a.suite == "all" else [a.suite]
    table, ok = [], True
    for name in names:
        res = suites.run_suite(name, seed=a.seed)
        ok &= res.ok
        run.say(res.summary())
        for line in res.lines:
            run.say(f"    {line}")
        for key, value in res.rows:
            table.append([res.name, res.criterion, "pass" if res.ok else "fail", key, value])
    run.write("verify.csv", _csv(["suite", "criterion", "status", "key", "value"], table))
    return OK if ok else VIOLATION


HANDLERS = {"lattice": cmd_lattice, "chain-sim": cmd_chain_sim, "solve": cmd_solve, "simulate": cmd_simulate,
            "convergence": cmd_convergence, "verify": cmd_verify}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        _thread_cap()
        args = parse_args(argv)
        job = Run(args)
        code = HANDLERS[args.command](job)
    except UsageError as exc:
        print(f"mftg: usage error: {exc}", file=sys.stderr)
        return USAGE
    except (CertificationError, SupersolutionDefectError, ContractError) as exc:
        print(f"mftg: check failed: {exc}", file=sys.stderr)
        return VIOLATION
    except (MFTGError, ValueError) as exc:
        print(f"mftg: {exc}", file=sys.stderr)
        return USAGE
    job.manifest("ok" if code == OK else "violation")
    if args.quiet:
        print("ok" if code == OK else "violation")
    return code


def main():
    sys.exit(run())
