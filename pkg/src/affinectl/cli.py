"""Command line scenario runner.

    affinectl <mode> --config scenario.cfg [--out DIR] [--seed N] [--tol X]
    affinectl compare a.csv b.csv [--norm sup|l2] [--columns x1,x2] [--tol X]

Exit status: 0 success, 1 usage (or compare above --tol), 2 numeric failure,
3 configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .controllability import (format_matrix, kalman_matrix, output_controllability_matrix,
                              realizable_controllability_matrix)
from .csvio import compare_csv, trajectory_csv, write_csv
from .errors import (AffineCtlError, BadParameter, ColumnMismatch, ConfigError, NumericFailure,
                     UnknownSystem)
from .numerics import TimeGrid, pseudo_inverse_projectors
from .optimal import TrackingProblem, gradient_descent
from .perturbation import composite_solution, direct_tracking, eps0_limit, problem_from_system
from .realizable import realize_output, solve_constraint, verify_tracking
from .systems import builtin_system, desired

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="scenario file")
    common.add_argument("--out", default=".", help="directory for CSV artifacts")
    common.add_argument("--seed", type=int, default=0,
                        help="random seed (every built-in scenario is deterministic)")
    common.add_argument("--tol", type=float, default=None,
                        help="compare: fail when the aggregate metric exceeds this")

    parser = _Parser(prog="affinectl", description="Affine control scenario runner.")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode in cfgmod.MODES:
        p = sub.add_parser(mode, parents=[common])
        if mode == "compare":
            p.add_argument("files", nargs="*", help="two CSV files")
            p.add_argument("--norm", choices=("sup", "l2"), default=None)
            p.add_argument("--columns", default=None, help="comma separated column names")
            p.add_argument("--window", default=None, help="t range 'lo,hi' to compare over")
    return parser


# mode runners ------------------------------------------------------------------------


def _system(sc):
    return builtin_system(sc.system, sc.params)


def _path(args, name):
    return os.path.join(args.out, name)


def _residual_rows(system, x, xdot):
    return np.array([np.linalg.norm(pseudo_inverse_projectors(system.B(xk)).Q @ (vk - system.R(xk)))
                     for xk, vk in zip(x, xdot)])


def run_realize(sc, args) -> str:
    s, grid = sc.settings, sc.grid
    if s["recipe"]:
        z = s["output"].signal()
        if s["x0"] is None:
            raise ConfigError("missing required key 'realize.x0'")
        res = realize_output(s["recipe"], sc.params, z, s["x0"], grid, clip=s["clip"])
        system = res.info["system"]
        x0 = s["x0"]
    else:
        system = _system(sc)
        values, derivs = [], []
        for i in range(system.n):
            e = sc.desired_expr(i)
            values.append(e)
            derivs.append(e.derivative() if e is not None else None)
        if s["x0"] is not None:
            x0 = s["x0"]
        elif all(v is not None for v in values):
            x0 = np.array([v(grid.t0) for v in values])
        else:
            raise ConfigError("missing required key 'realize.x0' (some components are free)")
        if x0.size != system.n:
            raise ConfigError(f"key 'realize.x0': expected {system.n} values")
        res = solve_constraint(system, desired(values, derivs), x0, grid)
    resid = _residual_rows(system, res.x_d.x, res.xdot_d) if res.xdot_d is not None \
        else np.full(grid.t.size, res.residual)
    trajectory_csv(_path(args, sc.csv), grid.t, {"x": res.x_d.x, "u": res.u.x, "residual": resid})
    rep = verify_tracking(system, res.u, x0, grid, res.x_d)
    clipped = " clipped=true" if res.clipped else ""
    return (f"realize system={system.name} max_deviation={rep.max_deviation:.6g} "
            f"residual={res.residual:.3g}{clipped}")


def run_controllability(sc, args) -> str:
    system = _system(sc)
    s = sc.settings
    x = s["x_ref"] if s["x_ref"] is not None else np.linspace(0.3, 0.7, system.n)
    if x.size != system.n:
        raise ConfigError(f"key 'controllability.x_ref': expected {system.n} values")
    A, B = system.gradR(x), system.B(x)
    variant = s["variant"]
    if variant == "kalman":
        rep = kalman_matrix(A, B)
    elif variant == "realizable":
        rep = realizable_controllability_matrix(A, B)
    else:
        C = s["C"]
        if C.shape[1] != system.n:
            raise ConfigError(f"key 'controllability.C': expected {system.n} columns")
        rep = output_controllability_matrix(A, B, C, variant.split("-", 1)[1])
    return f"{rep.summary()}\n{format_matrix(rep.matrix)}"


def run_optimal(sc, args) -> str:
    system = _system(sc)
    s, n = sc.settings, system.n
    if s["x0"].size != n:
        raise ConfigError(f"key 'problem.x0': expected {n} values")
    exprs = [sc.desired_expr(i) for i in range(n)]
    derivs = [e.derivative() for e in exprs]
    x_d = lambda t: np.array([e(t) for e in exprs])
    xdot_d = lambda t: np.array([d(t) for d in derivs])
    S = np.diag(s["S"]) if s["S"] is not None else np.eye(n)
    S1 = np.diag(s["S1"]) if s["S1"] is not None else np.zeros((n, n))
    x1 = s["x1"] if s["x1"] is not None else np.zeros(n)
    problem = TrackingProblem(system, x_d, S, S1, s["epsilon"], s["x0"], x1, sc.grid,
                              s["u0"], s["sharp"], xdot_d)
    sol = gradient_descent(problem, None, {"method": s["method"], "max_iter": s["max_iter"],
                                           "tol": s["tol"]})
    trajectory_csv(_path(args, sc.csv), sc.grid.t,
                   {"x": sol.x.x, "lam": sol.lam.x, "u": sol.u.x})
    return (f"J={sol.J:.10g} iters={sol.iterations} residual={sol.stationarity_residual:.3g} "
            f"converged={str(sol.converged).lower()}")


def run_analytic(sc, args) -> str:
    system = _system(sc)
    s, grid = sc.settings, sc.grid
    xd, yd = sc.desired["x1"].signal(), sc.desired["x2"].signal()
    (x0, y0), (x1, y1) = s["x0"], s["x1"]
    problem = problem_from_system(system, xd, yd, s1=s["s1"], s2=s["s2"], beta1=s["beta1"],
                                  epsilon=s["epsilon"], x0=x0, y0=y0, x1=x1, y1=y1, grid=grid)
    comp = composite_solution(problem, s["refine"])
    trajectory_csv(_path(args, sc.csv), grid.t,
                   {"x1": comp.x, "x2": comp.y, "lam1": comp.lam_x, "u1": comp.u})
    lines = [f"analytic system={system.name} y_init={comp.y_init:.12g} y_end={comp.y_end:.12g} "
             f"kappa={comp.kappa:.12g}", eps0_limit(problem, s["refine"]).report()]
    if s["numerical"]:
        num = direct_tracking(problem, y_guess=comp.y)
        stem, ext = os.path.splitext(sc.csv)
        name = f"{stem}_numerical{ext or '.csv'}"
        trajectory_csv(_path(args, name), grid.t,
                       {"x1": num.x.x[:, 0], "x2": num.x.x[:, 1], "u1": num.u.x[:, 0]})
        edge = 5.0 * s["epsilon"]
        inner = (grid.t >= grid.t0 + edge) & (grid.t <= grid.t1 - edge)
        gap = np.max(np.abs(num.x.x[inner] - np.column_stack([comp.x, comp.y])[inner]))
        lines.append(f"numerical J={num.J:.10g} converged={str(num.converged).lower()} "
                     f"sup_vs_composite={gap:.6g}")
    return "\n".join(lines)


def run_rds(sc, args) -> str:
    from . import rds

    s = sc.settings
    allowed = {"schloegl": ("k", "x0", "x1", "x2", "k1p", "D"),
               "fhn": ("a0", "a1", "a2", "Dx", "Dy")}[s["model"]]
    for key in sc.params:
        if key not in allowed:
            raise ConfigError(f"unknown key 'params.{key}' for rds model {s['model']}")
    if s["model"] == "schloegl":
        keys = ("k", "x0", "x1", "x2")
        kp = {"k": 1.0, "x0": 1.0, "x1": 1.5, "x2": 3.0, **sc.params}
        D = kp.pop("D", 1.0)
        profile = rds.schloegl_front(*(kp[k] for k in keys), D)
        system = rds.schloegl_rd({k: v for k, v in kp.items()}, D)
        grid = rds.RDGrid(s["L"] or 100.0, s["N"] or 1000, s["bc"] or "neumann")
        recipe, component, method = "schloegl-multiplicative", 0, "steepest-slope"
        phi0 = s["phi0"] if s["phi0"] is not None else 0.5 * grid.L
    else:
        fp = {"a0": 0.429, "a1": 0.0, "a2": 0.33, "Dx": 0.3, "Dy": 1.0, **sc.params}
        system = rds.fhn_rd(**fp)
        grid = rds.RDGrid(s["L"] or 150.0, s["N"] or 1024, s["bc"] or "periodic")
        profile = rds.fhn_wave_profile(system, grid)
        recipe, component, method = "fhn-activator", 1, "max"
        phi0 = s["phi0"] if s["phi0"] is not None else 0.5 * grid.L
    if s["protocol"] == "uniform":
        protocol = rds.uniform_protocol(profile.c, phi0)
    elif s["model"] == "schloegl":
        protocol = rds.smooth_sinusoidal_protocol(profile.c, phi0, s["A"], s["T"])
    else:
        protocol = rds.drifting_sinusoidal_protocol(profile.c, s["A"], s["T"], phi0)
    duration = s["duration"] or s["T"]
    dt = grid.stable_dt(float(np.max(system.D)))
    span = TimeGrid(0.0, duration, int(math.ceil(duration / dt)))
    pc = rds.position_control_signal(profile, protocol, recipe, grid, span, system)
    field = rds.rd_integrate(system, grid, pc.u, profile(grid.r - phi0), span,
                             store_every=s["store_every"])
    prev, pos = phi0, []
    for snap in field.values:
        prev = rds.measure_position(snap, component, method, grid,
                                    prev if grid.bc == "periodic" else None)
        pos.append(prev)
    pos = np.array(pos)
    err = float(np.max(np.abs(pos - protocol.phi(field.t))))

    n = field.values.shape[2]
    U = np.array([pc.u(t) for t in field.t])
    p = U.shape[2]
    rows = np.column_stack([np.repeat(field.t, grid.N), np.tile(grid.r, field.t.size),
                            field.values.reshape(-1, n), U.reshape(-1, p)])
    header = ["t", "r"] + [f"x{j + 1}" for j in range(n)] + [f"u{j + 1}" for j in range(p)]
    write_csv(_path(args, sc.csv), header, rows,
              meta={"L": float(grid.L), "N": grid.N, "dt": float(span.dt)})
    stem, ext = os.path.splitext(sc.csv)
    trajectory_csv(_path(args, f"{stem}_position{ext or '.csv'}"), field.t,
                   {"phi": protocol.phi(field.t), "measured": pos})
    return (f"rds model={s['model']} c={profile.c:.10g} position_error={err:.6g} "
            f"position_error_dx={err / grid.dx:.4g}")


def _run_compare(args, sc) -> tuple[str, int]:
    s = sc.settings if sc is not None else {}
    files = list(args.files)
    if not files and s.get("a") and s.get("b"):
        files = [s["a"], s["b"]]
    if len(files) != 2:
        raise UsageError("compare needs exactly two CSV files")
    norm = args.norm or s.get("norm") or "sup"
    cols = args.columns or s.get("columns")
    columns = [c.strip() for c in cols.split(",")] if cols else None
    window = None
    if args.window:
        try:
            lo, hi = (float(v) for v in args.window.split(","))
        except ValueError:
            raise UsageError("--window expects 'lo,hi'") from None
        window = (lo, hi)
    rep = compare_csv(files[0], files[1], norm, columns, window)
    status = EXIT_OK
    if args.tol is not None and rep.aggregate > args.tol:
        status = EXIT_USAGE
    return rep.summary(), status


RUNNERS = {"realize": run_realize, "controllability": run_controllability,
           "optimal": run_optimal, "analytic": run_analytic, "rds": run_rds}


def run_scenario(sc, args) -> int:
    """Dispatch a validated scenario, print its summary, return the exit status."""
    if sc.mode == "compare":
        text, status = _run_compare(args, sc)
    else:
        text, status = RUNNERS[sc.mode](sc, args), EXIT_OK
    print(text)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"affinectl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("affinectl: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    np.random.seed(args.seed % 2 ** 32)
    try:
        if args.config is None:
            if args.mode != "compare":
                raise UsageError(f"{args.mode} needs --config")
            sc = None
        else:
            sc = cfgmod.scenario_from_config(cfgmod.load_config(args.config), args.mode)
        os.makedirs(args.out, exist_ok=True)
        if sc is None:
            text, status = _run_compare(args, None)
            print(text)
            return status
        return run_scenario(sc, args)
    except UsageError as exc:
        print(f"affinectl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UnknownSystem, BadParameter) as exc:
        print(f"affinectl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ColumnMismatch as exc:
        print(f"affinectl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, ZeroDivisionError, FloatingPointError, np.linalg.LinAlgError,
            ValueError) as exc:
        print(f"affinectl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AffineCtlError as exc:
        print(f"affinectl: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"affinectl: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
