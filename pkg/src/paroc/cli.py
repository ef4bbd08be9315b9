"""Command line interface: problem files, subcommands, report emission.

Subcommands: check, solve, front, certify, cq, transform.  Problems come
from a JSON file or the built-in registry (--problem NAME).  Reports are
canonical JSON (sorted keys, two-space indent, trailing newline) written
to stdout or --out; `front --format csv` writes delimited rows instead.
Exit codes: 0 all checked properties hold, 1 a property failed or a solve
did not converge, 2 a file or flag failed to parse.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import exprdsl as ex
from . import trajectory as tr
from .pontryagin import (DEFAULT_TOLERANCES, CheckConfig, MultiplierSet,
                         PontryaginError, check_conditions, integrate_adjoint,
                         recover_multipliers, terminal_adjoint)
from .problem import (BolzaProblem, ControlSet, ProblemError, Process,
                      check_admissible)
from .qualification import (QualificationError, check_constraint_control_rows,
                            check_constraint_gradients,
                            check_control_surjectivity,
                            check_objective_constraint_gradients)
from .registry import REGISTRY_NAMES, get_problem
from .solver import (SolverConfig, SolverError, integrate_state,
                     solve_scalarized, sweep_front, weight_grid, DOM_TOL)
from .sufficiency import SufficiencyConfig, SufficiencyError, certify
from .trajectory import TrajectoryError
from .transform import TransformError, bolza_to_mayer

SCHEMA_VERSION = 1
TOOL_NAME = "paroc"

_CONDITION_TOLS = tuple(DEFAULT_TOLERANCES)
_EXTRA_TOLS = ("cq", "active", "concavity", "hamiltonian_inequality",
               "dominance", "feasibility", "convergence")

_RUNTIME_ERRORS = (SolverError, SufficiencyError, QualificationError,
                   TransformError, PontryaginError, ProblemError,
                   TrajectoryError)


class CliParseError(Exception):
    """Anything that should exit with code 2."""


# ---------------------------------------------------------------------------
# canonical JSON and file loading


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2,
                      default=_json_default) + "\n"


def problem_hash(problem_file: dict) -> str:
    return hashlib.sha256(canonical_json(problem_file).encode()).hexdigest()


def _control_set_to_json(cs: ControlSet) -> dict:
    if cs.kind == "box":
        return {"kind": "box", "lower": cs.lower.tolist(),
                "upper": cs.upper.tolist()}
    if cs.kind == "finite":
        return {"kind": "finite", "points": cs.points.tolist()}
    return {"kind": "free"}


def problem_to_json(prob: BolzaProblem) -> dict:
    out = {
        "name": prob.name,
        "T": float(prob.T),
        "n": int(prob.n),
        "k": int(prob.k),
        "control_set": _control_set_to_json(prob.control_set),
        "xi0": prob.xi0.tolist(),
        "dynamics": [ex.pretty(f.expr) for f in prob.dynamics.fields],
        "running": [ex.pretty(f.expr) for f in prob.running],
        "terminal_objectives": [ex.pretty(f.expr) for f in prob.terminal],
        "ineq": [ex.pretty(f.expr) for f in prob.ineq],
        "eq": [ex.pretty(f.expr) for f in prob.eq],
        "params": {k: float(v) for k, v in sorted(prob.params.items())},
    }
    if prob.omega is not None:
        out["omega"] = {"lower": prob.omega[0].tolist(),
                        "upper": prob.omega[1].tolist()}
    return out


def _require(cond: bool, msg: str):
    if not cond:
        raise CliParseError(msg)


def problem_from_json(d: dict) -> BolzaProblem:
    _require(isinstance(d, dict), "problem file must be a JSON object")
    for key in ("name", "T", "n", "k", "control_set", "xi0", "dynamics",
                "running", "terminal_objectives"):
        _require(key in d, f"problem file is missing '{key}'")
    cs_d = d["control_set"]
    _require(isinstance(cs_d, dict) and "kind" in cs_d,
             "control_set must be an object with a 'kind'")
    kind = cs_d["kind"]
    try:
        if kind == "box":
            cs = ControlSet.box(cs_d["lower"], cs_d["upper"])
        elif kind == "finite":
            cs = ControlSet.finite(cs_d["points"])
        elif kind == "free":
            cs = ControlSet.free(int(d["k"]))
        else:
            raise CliParseError(f"unknown control_set kind '{kind}'")
        omega = None
        if d.get("omega") is not None:
            omega = (d["omega"]["lower"], d["omega"]["upper"])
        l = len(d["running"])
        _require(len(d["terminal_objectives"]) == l,
                 "running and terminal_objectives lengths differ")
        _require(len(d["dynamics"]) == int(d["n"]),
                 "dynamics length must equal n")
        return BolzaProblem.build(
            name=str(d["name"]), T=float(d["T"]), n=int(d["n"]),
            k=int(d["k"]), control_set=cs, xi0=d["xi0"],
            dynamics=list(d["dynamics"]), running=list(d["running"]),
            terminal=list(d["terminal_objectives"]),
            ineq=list(d.get("ineq", ())), eq=list(d.get("eq", ())),
            omega=omega, params=dict(d.get("params", {})))
    except KeyError as err:
        raise CliParseError(f"problem file is missing {err}") from err
    except ex.ExprSyntaxError as err:
        # the message already carries the byte offset
        raise CliParseError(f"expression parse error: {err}") from err
    except (ProblemError, TypeError, ValueError) as err:
        raise CliParseError(f"invalid problem file: {err}") from err


def _load_json_file(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as err:
        raise CliParseError(f"cannot read {path}: {err}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise CliParseError(
            f"{path}: JSON parse error at byte offset {err.pos}: {err.msg}"
        ) from err


def load_problem(args) -> tuple:
    """Returns (problem, problem_file_dict)."""
    path = getattr(args, "problem_file", None)
    name = getattr(args, "problem", None)
    _require(not (path and name),
             "give a problem file or --problem NAME, not both")
    if name:
        prob = get_problem(name)
        return prob, problem_to_json(prob)
    _require(path is not None,
             "a problem file or --problem NAME is required")
    data = _load_json_file(path)
    prob = problem_from_json(data)
    return prob, problem_to_json(prob)


def _samples_to_path(d: dict, cls, what: str):
    try:
        ts = np.asarray(d["ts"], dtype=float)
        vals = np.asarray(d["values"], dtype=float)
        interp = d.get("interpolation", "linear")
        return cls.from_samples(ts, vals, interpolation=interp)
    except KeyError as err:
        raise CliParseError(f"{what} needs 'ts' and 'values'") from err
    except (TrajectoryError, ValueError) as err:
        raise CliParseError(f"invalid {what}: {err}") from err


def load_trajectory(path: str, prob: BolzaProblem, n_steps: int):
    """Returns (process, theta or None, lam, mu) from a trajectory file.

    The file carries sampled control values and optionally sampled state
    values and multiplier components; a missing state is integrated from
    the dynamics."""
    data = _load_json_file(path)
    _require(isinstance(data, dict) and "control" in data,
             "trajectory file must be an object with a 'control' block")
    control = _samples_to_path(data["control"], tr.NormalizedPiecewiseC0Path,
                               "control samples")
    _require(control.dim == prob.k,
             f"control has dim {control.dim}, problem has k={prob.k}")
    if "state" in data and data["state"] is not None:
        state = _samples_to_path(data["state"], tr.PiecewiseC1Path,
                                 "state samples")
        _require(state.dim == prob.n,
                 f"state has dim {state.dim}, problem has n={prob.n}")
    else:
        state = integrate_state(prob, control, n_steps=n_steps)
    theta = data.get("theta")
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        _require(theta.size == prob.l,
                 f"theta has {theta.size} entries, problem has l={prob.l}")
    lam = np.asarray(data.get("lambda", np.zeros(prob.m)), dtype=float)
    mu = np.asarray(data.get("mu", np.zeros(prob.q)), dtype=float)
    _require(lam.size == prob.m and mu.size == prob.q,
             "multiplier lengths must match the constraint counts")
    return Process(state=state, control=control), theta, lam, mu


# ---------------------------------------------------------------------------
# flags and config plumbing


def _extract_tol_flags(argv):
    """Pulls --tol.NAME=value flags out of argv before argparse sees them."""
    tols, rest = {}, []
    for arg in argv:
        if not arg.startswith("--tol."):
            rest.append(arg)
            continue
        body = arg[len("--tol."):]
        name, eq, value = body.partition("=")
        name = name.replace("-", "_")
        if not eq:
            raise CliParseError(f"--tol.{name} needs =VALUE")
        if name not in _CONDITION_TOLS and name not in _EXTRA_TOLS:
            known = ", ".join(sorted(_CONDITION_TOLS + _EXTRA_TOLS))
            raise CliParseError(f"unknown tolerance '{name}' (known: {known})")
        try:
            tols[name] = float(value)
        except ValueError as err:
            raise CliParseError(f"--tol.{name}: bad float '{value}'") from err
    return tols, rest


def _parse_weights(text: str, l: int) -> np.ndarray:
    try:
        vals = np.asarray([float(v) for v in text.split(",")], dtype=float)
    except ValueError as err:
        raise CliParseError(f"bad --weights '{text}'") from err
    _require(vals.size == l, f"--weights needs {l} entries, got {vals.size}")
    return vals


def _weights_or_centroid(args, prob) -> np.ndarray:
    if getattr(args, "weights", None):
        return _parse_weights(args.weights, prob.l)
    return np.full(prob.l, 1.0 / prob.l)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PMP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise CliParseError(f"PMP_SEED must be an integer, got '{env}'") \
                from err
    return 0


def _condition_tols(tols: dict) -> dict:
    return {k: v for k, v in tols.items() if k in _CONDITION_TOLS}


def _check_config(args) -> CheckConfig:
    return CheckConfig(tolerances=_condition_tols(args.tols),
                       jobs=max(1, args.jobs))


def _solver_config(args) -> SolverConfig:
    base = {"adjoint_equation": 1e-3, "hamiltonian_maximum": 1e-4}
    base.update(_condition_tols(args.tols))
    kw = dict(max_iters=args.max_iters, n_steps=args.steps,
              check=CheckConfig(tolerances=base))
    if "convergence" in args.tols:
        kw["conv_tol"] = args.tols["convergence"]
    if "feasibility" in args.tols:
        kw["feas_tol"] = args.tols["feasibility"]
    try:
        return SolverConfig(**kw)
    except SolverError as err:
        raise CliParseError(str(err)) from err


def _sufficiency_config(args, seed: int) -> SufficiencyConfig:
    kw = dict(seed=seed)
    if "concavity" in args.tols:
        kw["conc_tol"] = args.tols["concavity"]
    if "hamiltonian_inequality" in args.tols:
        kw["ham_tol"] = args.tols["hamiltonian_inequality"]
    return SufficiencyConfig(**kw)


def _config_echo(args, extra: dict | None = None) -> dict:
    # jobs stays out of the echo so serial and parallel reports match
    echo = {"tolerances": dict(sorted(args.tols.items()))}
    for name in ("weights", "grid", "gauge", "strategy", "steps",
                 "max_iters", "format", "trajectories"):
        if hasattr(args, name) and getattr(args, name) is not None:
            echo[name] = getattr(args, name)
    if extra:
        echo.update(extra)
    return echo


def run_report(command: str, pf: dict, seed: int, config: dict,
               reports: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": TOOL_NAME, "version": __version__},
        "command": command,
        "problem_hash": problem_hash(pf),
        "seed": seed,
        "config": config,
        "reports": reports,
    }


def _emit(text: str, args) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _plot_dir(args) -> str | None:
    d = getattr(args, "plot_dir", None)
    if d:
        os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(args) -> int:
    prob, pf = load_problem(args)
    proc, theta, lam, mu = load_trajectory(args.trajectory_file, prob,
                                           args.steps)
    adm = check_admissible(prob, proc)
    cfg = _check_config(args)
    if theta is not None:
        pT = terminal_adjoint(prob, proc.state(prob.T), theta, lam, mu)
        adj = integrate_adjoint(prob, proc, pT, theta, n_steps=args.steps)
        mult = MultiplierSet.make(theta, lam, mu, adj).normalized()
        report = check_conditions(prob, proc, mult, cfg)
    else:
        mult, report = recover_multipliers(prob, proc, gauge=args.gauge,
                                           cfg=cfg, seed=_seed(args))
    reports = {
        "admissibility": adm.to_json(),
        "multipliers": mult.to_json(),
        "conditions": report.to_json(),
    }
    out = run_report("check", pf, _seed(args), _config_echo(args), reports)
    _emit(canonical_json(out), args)
    plot_dir = _plot_dir(args)
    if plot_dir:
        from . import plots
        plots.save_process_plot(proc, os.path.join(plot_dir, "process.png"),
                                title=prob.name)
        plots.save_residual_plot(report,
                                 os.path.join(plot_dir, "residuals.png"),
                                 title=prob.name)
    return 0 if adm.admissible and report.passed else 1


def _solve_point(args, prob):
    weights = _weights_or_centroid(args, prob)
    cfg = _solver_config(args)
    try:
        return solve_scalarized(prob, weights, cfg)
    except SolverError as err:
        raise CliParseError(f"solve failed: {err}") from err


def cmd_solve(args) -> int:
    prob, pf = load_problem(args)
    point = _solve_point(args, prob)
    reports = {"point": point.to_json(include_trajectories=args.trajectories)}
    out = run_report("solve", pf, _seed(args), _config_echo(args), reports)
    _emit(canonical_json(out), args)
    plot_dir = _plot_dir(args)
    if plot_dir:
        from . import plots
        plots.save_process_plot(point.process,
                                os.path.join(plot_dir, "process.png"),
                                title=prob.name)
        plots.save_residual_plot(point.necessary_report,
                                 os.path.join(plot_dir, "residuals.png"),
                                 title=prob.name)
    ok = point.converged and point.necessary_report.passed
    return 0 if ok else 1


def front_csv(front) -> str:
    """One row per converged weight: weights, objectives, flags, residual."""
    lines = []
    if front.points:
        l = len(front.points[0].weight.theta)
        n_obj = len(front.points[0].objectives)
    else:
        l = n_obj = 0
    header = [f"theta_{i}" for i in range(l)] \
        + [f"objective_{i}" for i in range(n_obj)] \
        + ["dominated", "weakly_dominated", "max_residual"]
    lines.append(",".join(header))
    for p in front.points:
        row = [f"{v:.17g}" for v in p.weight.theta] \
            + [f"{v:.17g}" for v in p.objectives] \
            + [str(int(p.dominated)), str(int(p.weakly_dominated)),
               f"{p.max_residual():.17g}"]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_front(args) -> int:
    prob, pf = load_problem(args)
    grid = weight_grid(prob.l, divisions=max(1, args.grid - 1))
    cfg = _solver_config(args)
    front = sweep_front(prob, grid, cfg, jobs=max(1, args.jobs),
                        dom_tol=args.tols.get("dominance", DOM_TOL))
    if args.format == "csv":
        _emit(front_csv(front), args)
    else:
        reports = {"front": front.to_json(
            include_trajectories=args.trajectories)}
        out = run_report("front", pf, _seed(args), _config_echo(args),
                         reports)
        _emit(canonical_json(out), args)
    plot_dir = _plot_dir(args)
    if plot_dir:
        from . import plots
        plots.save_front_plot(front, os.path.join(plot_dir, "front.png"))
    return 0 if not front.failures else 1


def cmd_certify(args) -> int:
    prob, pf = load_problem(args)
    seed = _seed(args)
    point = _solve_point(args, prob)
    cfg = _sufficiency_config(args, seed)
    suff = certify(prob, point.process, point.multipliers,
                   strategy=args.strategy, cfg=cfg,
                   report=point.necessary_report)
    point.sufficiency = suff
    reports = {
        "point": point.to_json(include_trajectories=args.trajectories),
        "sufficiency": suff.to_json(),
    }
    out = run_report("certify", pf, seed, _config_echo(args), reports)
    _emit(canonical_json(out), args)
    plot_dir = _plot_dir(args)
    if plot_dir:
        from . import plots
        plots.save_process_plot(point.process,
                                os.path.join(plot_dir, "process.png"),
                                title=f"{prob.name}: {suff.verdict}")
    return 0 if suff.verdict in ("pareto", "weak_pareto") else 1


def cmd_cq(args) -> int:
    prob, pf = load_problem(args)
    seed = _seed(args)
    point = _solve_point(args, prob)
    xT = point.process.state(prob.T)
    tol = args.tols.get("cq")
    act = args.tols.get("active")
    kw = {}
    if tol is not None:
        kw["tol"] = tol
    if act is not None:
        kw["act_tol"] = act
    required, info = {}, {}
    holds = []
    rep = check_constraint_gradients(prob, xT, seed=seed, **kw)
    required[rep.which] = rep.to_json()
    holds.append(rep.holds)
    point_kw = {} if tol is None else {"tol": tol}
    for fn in (check_constraint_control_rows, check_control_surjectivity):
        try:
            r = fn(prob, point.process, **point_kw)
        except QualificationError as err:
            required[fn.__name__.removeprefix("check_").replace("_", "-")] = \
                {"skipped": str(err)}
            continue
        required[r.which] = r.to_json()
        holds.append(r.holds)
    # the objective-inclusive variant fails whenever a terminal payoff is
    # constant, which says nothing about constraint degeneracy
    rep0 = check_objective_constraint_gradients(prob, xT, seed=seed, **kw)
    info[rep0.which] = rep0.to_json()
    reports = {
        "cq": {"required": required, "informational": info},
        "point": {"weight": point.weight.to_json(),
                  "objectives": [float(v) for v in point.objectives],
                  "converged": bool(point.converged)},
    }
    out = run_report("cq", pf, seed, _config_echo(args), reports)
    _emit(canonical_json(out), args)
    return 0 if all(holds) else 1


def cmd_transform(args) -> int:
    prob, pf = load_problem(args)
    aug = bolza_to_mayer(prob)
    reports = {
        "augmented_problem": problem_to_json(aug.mayer),
        "sigma_dim": aug.sigma_dim,
        "source_name": prob.name,
    }
    out = run_report("transform", pf, _seed(args), _config_echo(args),
                     reports)
    _emit(canonical_json(out), args)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sp, trajectory_file: bool = False):
    sp.add_argument("problem_file", nargs="?", default=None,
                    help="problem JSON file")
    sp.add_argument("--problem", choices=REGISTRY_NAMES,
                    help="built-in problem instead of a file")
    if trajectory_file:
        sp.add_argument("trajectory_file", help="trajectory JSON file")
    sp.add_argument("--seed", type=int, default=None,
                    help="random seed (falls back to PMP_SEED, then 0)")
    sp.add_argument("--jobs", type=int,
                    default=max(1, os.cpu_count() or 1),
                    help="parallel workers; 1 forces the serial baseline")
    sp.add_argument("--out", default=None, help="write the report here")
    sp.add_argument("--steps", type=int, default=1000,
                    help="integration steps across the horizon")
    sp.add_argument("--plot-dir", default=None,
                    help="also render figures into this directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Multiobjective optimal control: solve scalarized "
                    "problems, assemble Pareto fronts, and certify "
                    "candidates via the maximum-principle conditions.",
        epilog="Any tolerance can be overridden with --tol.NAME=VALUE, "
               "e.g. --tol.adjoint_equation=1e-3 or --tol.dominance=1e-6.")
    parser.add_argument("--version", action="version",
                        version=f"{TOOL_NAME} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="admissibility plus necessary "
                                           "conditions for a trajectory file")
    _add_common(p_check, trajectory_file=True)
    p_check.add_argument("--gauge", choices=("unit", "theta1"),
                         default="unit",
                         help="multiplier normalization when recovering")
    p_check.set_defaults(handler=cmd_check)

    p_solve = sub.add_parser("solve", help="solve one weighted scalarization")
    _add_common(p_solve)
    p_solve.add_argument("--weights", default=None,
                         help="comma-separated objective weights")
    p_solve.add_argument("--max-iters", type=int, default=200)
    p_solve.add_argument("--trajectories", action="store_true",
                         help="embed sampled trajectories in the report")
    p_solve.set_defaults(handler=cmd_solve)

    p_front = sub.add_parser("front", help="sweep a weight grid into a front")
    _add_common(p_front)
    p_front.add_argument("--grid", type=int, default=11,
                         help="weights per objective pair")
    p_front.add_argument("--format", choices=("json", "csv"),
                         default="json")
    p_front.add_argument("--max-iters", type=int, default=200)
    p_front.add_argument("--trajectories", action="store_true",
                         help="embed sampled trajectories in the report")
    p_front.set_defaults(handler=cmd_front)

    p_cert = sub.add_parser("certify", help="solve a scalarization and run "
                                            "the sufficiency checks on it")
    _add_common(p_cert)
    p_cert.add_argument("--weights", default=None)
    p_cert.add_argument("--strategy", default="auto",
                        choices=("auto", "joint-concavity",
                                 "maximized-hamiltonian",
                                 "hamiltonian-inequality"))
    p_cert.add_argument("--max-iters", type=int, default=200)
    p_cert.add_argument("--trajectories", action="store_true")
    p_cert.set_defaults(handler=cmd_certify)

    p_cq = sub.add_parser("cq", help="constraint qualification checks at a "
                                     "solved candidate")
    _add_common(p_cq)
    p_cq.add_argument("--weights", default=None)
    p_cq.add_argument("--at-solution", action="store_true",
                      help="evaluate at the solved candidate (the default)")
    p_cq.add_argument("--max-iters", type=int, default=200)
    p_cq.set_defaults(handler=cmd_cq)

    p_tr = sub.add_parser("transform", help="emit the terminal-payoff-only "
                                            "augmentation of a problem")
    _add_common(p_tr)
    p_tr.set_defaults(handler=cmd_transform)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        tols, argv = _extract_tol_flags(argv)
    except CliParseError as err:
        print(f"{TOOL_NAME}: error: {err}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    args.tols = tols
    try:
        return args.handler(args)
    except CliParseError as err:
        print(f"{TOOL_NAME}: error: {err}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as err:
        print(f"{TOOL_NAME}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
