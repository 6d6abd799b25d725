"""Command-line interface.

Exit codes: 0 success, 1 invalid input or a failed check, 2 solver failure.
Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are long option names; options given on the command line win.
``RT_SUPERCONV_THREADS`` caps the threads used by the numerical libraries.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .mesh import generate_perturbed, generate_piecewise_uniform, generate_uniform, read_mesh, refine_regular, write_mesh
from .solver import SolverError

log = logging.getLogger("rtsuperconv")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtsuperconv", description="RT0 mixed / CR finite element superconvergence lab.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.add_argument("--config", help="file of 'key = value' lines (long option names)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        return sp

    r = add("run", "convergence study on a mesh family")
    r.add_argument("--family", choices=["uniform", "piecewise", "perturbed"], default="uniform")
    r.add_argument("--n0", type=int, default=8, help="subdivisions per side on the coarsest level")
    r.add_argument("--levels", type=int, default=4)
    r.add_argument("--alpha", type=float, default=0.5, help="perturbation exponent (perturbed family)")
    r.add_argument("--amplitude", type=float, default=1.0, help="displacement as a fraction of (1/n)^(1+alpha)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--problem", choices=["mixed", "mixed-neumann", "cr"], default="mixed")
    r.add_argument("--b", type=_floats, default=(0.0, 0.0), help="constant convection vector 'bx,by'")
    r.add_argument("--c", type=float, default=1.0, help="constant reaction coefficient")
    r.add_argument("--measure", choices=["gauss", "midpoint"], default="gauss",
                   help="quadrature for the interpolant in the supercloseness column and for L2 norms")
    r.add_argument("--triangle-degree", type=int, default=5)
    r.add_argument("--edge-degree", type=int, default=7)
    r.add_argument("--tol", type=float, default=1e-10, help="relative residual required of the solver")
    r.add_argument("--helmholtz", action="store_true", help="also report the gradient part of the supercloseness error")
    r.add_argument("--out", help="CSV output path")
    r.add_argument("--dat", help="gnuplot .dat output path")

    a = add("analyze-mesh", "classify a mesh or a refinement sequence")
    a.add_argument("--mesh", action="append", help="mesh file; repeat for a coarse-to-fine sequence")
    a.add_argument("--family", choices=["uniform", "piecewise", "perturbed"],
                   help="generate the sequence instead of reading files")
    a.add_argument("--n0", type=int, default=8)
    a.add_argument("--levels", type=int, default=1)
    a.add_argument("--amplitude", type=float, default=1.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--perturb-alpha", type=float, default=0.5, help="alpha used to generate perturbed meshes")
    a.add_argument("--alpha", type=float, default=float("inf"), help="hypothesised alpha for the thresholds")
    a.add_argument("--C", type=float, default=1.0, help="threshold constant")
    a.add_argument("--out", help="CSV output path")

    v = add("verify-identities", "run the randomized identity oracles")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-12)

    c = add("recover", "recover a flux and compute error indicators")
    c.add_argument("--mesh", required=False, help="mesh file")
    c.add_argument("--solution", required=False, help="CSV of RT dofs (index,value)")
    c.add_argument("--out", help="CSV of recovered midpoint values")
    c.add_argument("--indicators", help="CSV of per-triangle indicators")

    g = add("generate-mesh", "write a generated mesh file")
    g.add_argument("--family", choices=["uniform", "piecewise", "perturbed"], default="uniform")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--refine", type=int, default=0, help="regular refinements applied afterwards")
    g.add_argument("--alpha", type=float, default=0.5)
    g.add_argument("--amplitude", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=False, help="mesh file to write")

    s = add("solve", "solve the manufactured mixed problem on a mesh file and write RT dofs")
    s.add_argument("--mesh", required=False)
    s.add_argument("--problem", choices=["mixed", "mixed-neumann"], default="mixed")
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--b", type=_floats, default=(0.0, 0.0))
    s.add_argument("--out", required=False, help="CSV of RT dofs")
    return p


# ---------------------------------------------------------------------------
# config file handling


def read_config(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(sp: argparse.ArgumentParser, config: dict) -> None:
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in config.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} must be a boolean")
            value = raw.lower() in ("true", "1", "yes")
        elif isinstance(act, argparse._AppendAction):
            value = [v.strip() for v in raw.split(",")]
        else:
            try:
                value = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices is not None and value not in act.choices:
                raise UsageError(f"config key {key!r} must be one of {list(act.choices)}")
        defaults[key] = value
    sp.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    if args.config:
        sp = _subparser(parser, args.command)
        _apply_config(sp, read_config(args.config))
        args = parser.parse_args(argv)
    return args


def _echo(args) -> None:
    for k, v in sorted(vars(args).items()):
        print(f"# {k} = {v}")


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) in (None, [])]
    if missing:
        raise UsageError(f"{args.command}: missing --{', --'.join(m.replace('_', '-') for m in missing)}")


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    from .study import ExperimentAborted, ExperimentConfig, run_experiment

    cfg = ExperimentConfig(
        family=args.family, n0=args.n0, levels=args.levels, alpha=args.alpha,
        amplitude=args.amplitude, seed=args.seed, problem=args.problem, b=tuple(args.b),
        c=args.c, triangle_degree=args.triangle_degree, edge_degree=args.edge_degree,
        measure=args.measure, tol=args.tol, helmholtz=args.helmholtz, out=args.out, dat=args.dat,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        report = run_experiment(cfg)
    except ExperimentAborted as exc:
        print(exc.report.table())
        raise
    print(report.table())
    return EXIT_OK


def _family_meshes(args):
    if args.mesh:
        return [read_mesh(p) for p in args.mesh]
    if args.family is None:
        raise UsageError("analyze-mesh: give --mesh files or --family")
    if args.family == "perturbed":
        return [generate_perturbed(args.n0 * 2**l, args.perturb_alpha, args.amplitude, args.seed + l)
                for l in range(args.levels)]
    gen = generate_uniform if args.family == "uniform" else generate_piecewise_uniform
    meshes = [gen(args.n0)]
    for _ in range(args.levels - 1):
        meshes.append(refine_regular(meshes[-1]))
    return meshes


def cmd_analyze(args) -> int:
    from .structure import analyze_structure

    if args.C <= 0:
        raise UsageError("--C must be positive")
    report = analyze_structure(_family_meshes(args), args.alpha, args.C)
    cols = ["level", "h", "|E1|", "|E2|", "E2_measure", "kappa", "alphahat", "sigmahat", "rho"]
    print(",".join(cols))
    for row in report.rows():
        print(",".join(str(row[c]) if isinstance(row[c], int) else f"{row[c]:.6g}" for c in cols))
    print(f"# alpha_hat = {report.alpha_hat}, sigma_hat = {report.sigma_hat}, "
          f"rho = {report.rho}, rho_hat = {report.rho_hat}")
    if args.out:
        report.to_csv(args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .identities import run_identity_suite

    if args.trials < 1:
        raise UsageError("--trials must be positive")
    results, seconds = run_identity_suite(args.trials, args.seed, args.tol)
    for r in results:
        print(r)
    print(f"# {seconds:.2f} s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def cmd_recover(args) -> int:
    from .recovery import apply_gh, estimator, write_indicators, write_recovered
    from .spaces import rt_from_csv

    _require(args, "mesh", "solution")
    mesh = read_mesh(args.mesh)
    p_h = rt_from_csv(mesh, args.solution)
    G = apply_gh(p_h)
    eta, eta_tau = estimator(p_h)
    print(f"eta = {eta:.6e}")
    print(f"max indicator = {eta_tau.max():.6e} (triangle {int(eta_tau.argmax())})")
    print(f"one-sided boundary fallbacks = {len(G.fallback_edges)}")
    if args.out:
        write_recovered(G, args.out)
    if args.indicators:
        write_indicators(eta_tau, args.indicators)
    return EXIT_OK


def cmd_generate(args) -> int:
    _require(args, "out")
    if args.family == "uniform":
        mesh = generate_uniform(args.n)
    elif args.family == "piecewise":
        mesh = generate_piecewise_uniform(args.n)
    else:
        mesh = generate_perturbed(args.n, args.alpha, args.amplitude, args.seed)
    for _ in range(args.refine):
        mesh = refine_regular(mesh)
    write_mesh(mesh, args.out)
    print(f"V = {mesh.n_vertices}, E = {mesh.n_edges}, T = {mesh.n_triangles}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .problem import DIRICHLET, NEUMANN, manufactured_problem
    from .solver import solve_problem
    from .spaces import to_csv

    _require(args, "mesh", "out")
    mesh = read_mesh(args.mesh)
    b = None if not any(args.b) else np.asarray(args.b)
    bc = NEUMANN if args.problem == "mixed-neumann" else DIRICHLET
    sol = solve_problem(mesh, manufactured_problem(b=b, c=args.c, bc_kind=bc))
    to_csv(sol.p_h, args.out)
    print(sol.report)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "analyze-mesh": cmd_analyze,
    "verify-identities": cmd_verify,
    "recover": cmd_recover,
    "generate-mesh": cmd_generate,
    "solve": cmd_solve,
}


def _thread_limit():
    raw = os.environ.get("RT_SUPERCONV_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"RT_SUPERCONV_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        _echo(args)
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
