"""Error norms, order fitting and the convergence-study driver.

A study solves a manufactured problem on a family of meshes and records, per
level, the flux error, the distance to the interpolant (supercloseness), its
divergence, the distance of ``u_h`` to the cell averages of ``u``, the error of
the recovered flux and the estimator's effectivity index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mesh import Mesh, generate_perturbed, generate_piecewise_uniform, generate_uniform, refine_regular
from .problem import DIRICHLET, NEUMANN, SINE, manufactured_problem, poisson_problem
from .quadrature import QuadratureRule, edge_midpoint_rule, edge_rule, triangle_rule
from .recovery import apply_gh, estimator
from .solver import SOLVER_TOL, SolverError, helmholtz_split, solve_cr, solve_problem
from .spaces import P0Field, RTField, interpolate_rt, project_p0

log = logging.getLogger(__name__)

FAMILIES = ("uniform", "piecewise", "perturbed")
PROBLEMS = ("mixed", "mixed-neumann", "cr")
MEASURES = ("gauss", "midpoint")


# ---------------------------------------------------------------------------
# norms and orders


def error_norm(a, b=None, quad: QuadratureRule | None = None, which: str = "L2") -> float:
    """L2 (or divergence) norm of ``a - b``.

    Parameters
    ----------
    a : field
        Discrete field with ``mesh`` and ``evaluate``.
    b : field, callable or None
        Second operand on the same mesh, an analytic function of ``x``
        (for ``which="div"`` the analytic divergence), or None for ``||a||``.
    which : {"L2", "div"}
        ``"div"`` uses the piecewise constant divergence of RT fields.
    """
    mesh = a.mesh
    if b is not None and hasattr(b, "mesh") and b.mesh is not mesh:
        raise ValueError("operands live on different meshes")
    quad = quad or QuadratureRule.default()
    rule = quad.triangle
    x = mesh.geometry.to_physical(np.broadcast_to(rule.bary, (mesh.n_triangles,) + rule.bary.shape))
    w = mesh.areas[:, None] * rule.weights[None, :]

    if which == "div":
        if not isinstance(a, RTField):
            raise TypeError("the divergence norm needs an RTField")
        da = np.repeat(a.divergence()[:, None], len(rule.weights), axis=1)
        if b is None:
            db = 0.0
        elif isinstance(b, RTField):
            db = b.divergence()[:, None]
        else:
            db = np.asarray(b(x), dtype=float)
        return float(np.sqrt(np.sum(w * (da - db) ** 2)))
    if which != "L2":
        raise ValueError(f"unknown norm {which!r}")

    va = a.evaluate(rule.bary)
    if b is None:
        vb = 0.0
    elif hasattr(b, "evaluate"):
        vb = b.evaluate(rule.bary)
    else:
        vb = np.asarray(b(x), dtype=float)
    d = np.asarray(va - vb)
    sq = d**2 if d.ndim == 2 else np.sum(d**2, axis=-1)
    return float(np.sqrt(np.sum(w * sq)))


@dataclass
class OrderFit:
    """Orders between consecutive levels (NaN where undefined) and the log-log slope."""

    steps: list
    slope: float

    @property
    def last(self) -> float:
        return self.steps[-1] if self.steps else math.nan


def fit_order(errors: Sequence[float], h: Sequence[float]) -> OrderFit:
    """Pairwise orders ``log(e_prev/e)/log(h_prev/h)`` and a least-squares slope.

    An order involving a zero (or non-finite) error is undefined and reported
    as NaN; the slope uses the levels with positive errors only.
    """
    e = np.asarray(errors, dtype=float)
    hh = np.asarray(h, dtype=float)
    if len(e) != len(hh):
        raise ValueError("errors and h must have the same length")
    if len(e) < 2:
        raise ValueError("at least two levels are needed for an order")
    ok = np.isfinite(e) & (e > 0)
    steps = []
    for i in range(1, len(e)):
        if ok[i] and ok[i - 1]:
            steps.append(float(np.log(e[i - 1] / e[i]) / np.log(hh[i - 1] / hh[i])))
        else:
            steps.append(math.nan)
    slope = float(np.polyfit(np.log(hh[ok]), np.log(e[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    return OrderFit(steps, slope)


# ---------------------------------------------------------------------------
# experiment configuration and report


@dataclass
class ExperimentConfig:
    """Everything that determines a convergence study.

    ``measure`` selects how the interpolant's edge fluxes and the L2 norms are
    evaluated: ``"gauss"`` uses the Gauss rules of ``triangle_degree`` and
    ``edge_degree``; ``"midpoint"`` uses one-point edge fluxes and the
    three-point edge-midpoint triangle rule. Assembly always uses the Gauss
    rules.
    """

    family: str = "uniform"
    n0: int = 8
    levels: int = 4
    alpha: float = 0.5
    amplitude: float = 1.0
    seed: int = 0
    problem: str = "mixed"
    b: tuple = (0.0, 0.0)
    c: float = 1.0
    triangle_degree: int = 5
    edge_degree: int = 7
    measure: str = "gauss"
    tol: float = SOLVER_TOL
    helmholtz: bool = False
    out: str | None = None
    dat: str | None = None

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}, got {self.measure!r}")
        if self.levels < 2:
            raise ValueError("at least two levels are needed to compute orders")
        if self.n0 < 1:
            raise ValueError("n0 must be positive")
        if self.family == "piecewise" and self.n0 % 2:
            raise ValueError("the piecewise family needs an even n0")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if len(self.b) != 2:
            raise ValueError("b must have two components")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def describe(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in asdict(self).items())


@dataclass
class LevelRecord:
    nu: int
    h: float
    err_p: float
    err_superclose: float
    err_div: float
    err_u: float
    err_recovery: float
    effectivity: float
    err_grad: float = math.nan
    err_cr: float = math.nan


ERROR_COLUMNS = ("err_p", "err_superclose", "err_div", "err_u", "err_recovery")


class ExperimentAborted(SolverError):
    """A level failed to solve; ``report`` holds the levels completed so far."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class ErrorReport:
    config: ExperimentConfig
    records: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def orders(self, name: str) -> OrderFit:
        return fit_order(self.column(name), self.column("h"))

    def _columns(self):
        cols = list(ERROR_COLUMNS)
        if self.config.helmholtz:
            cols.append("err_grad")
        if self.config.problem == "cr":
            cols.append("err_cr")
        return cols

    def rows(self):
        """Table rows as dicts; the order on a row is the one reached at that level."""
        cols = self._columns()
        orders = {c: [math.nan] + self.orders(c).steps for c in cols} if len(self.records) > 1 else {}
        out = []
        for i, r in enumerate(self.records):
            row = {"nu": r.nu, "h": r.h}
            for c in cols:
                row[c] = getattr(r, c)
                row["ord" + c[3:]] = orders[c][i] if orders else math.nan
                if c == "err_recovery":
                    row["effectivity"] = r.effectivity
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        if not rows:
            return
        header = list(rows[0])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[k]) for k in header) + "\n")

    def to_dat(self, path) -> None:
        """gnuplot data: log10 h followed by log10 of each error column."""
        cols = self._columns()
        with open(path, "w") as fh:
            fh.write("# log10(h) " + " ".join(f"log10({c})" for c in cols) + "\n")
            for r in self.records:
                vals = [r.h] + [getattr(r, c) for c in cols]
                fh.write(" ".join(_fmt(math.log10(v) if v > 0 else math.nan) for v in vals) + "\n")

    def table(self) -> str:
        rows = self.rows()
        if not rows:
            return "(no levels)"
        header = list(rows[0])
        lines = ["  ".join(f"{k:>14s}" for k in header)]
        for row in rows:
            lines.append("  ".join(f"{_fmt(row[k]):>14s}" for k in header))
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.6e}"


# ---------------------------------------------------------------------------
# driver


def mesh_family(cfg: ExperimentConfig):
    """Yield the meshes of the configured family, coarse to fine.

    Uniform and piecewise meshes are refined regularly. Perturbed meshes are
    generated afresh at ``n0 * 2**level`` so the displacement keeps scaling
    like ``h^(1+alpha)``.
    """
    if cfg.family == "perturbed":
        for level in range(cfg.levels):
            yield generate_perturbed(cfg.n0 * 2**level, cfg.alpha, cfg.amplitude, cfg.seed + level)
        return
    mesh = generate_uniform(cfg.n0) if cfg.family == "uniform" else generate_piecewise_uniform(cfg.n0)
    for level in range(cfg.levels):
        if level:
            mesh = refine_regular(mesh)
        yield mesh


def _problem(cfg: ExperimentConfig):
    if cfg.problem == "cr":
        return poisson_problem(SINE)
    bc = NEUMANN if cfg.problem == "mixed-neumann" else DIRICHLET
    b = None if not np.any(cfg.b) else np.asarray(cfg.b, dtype=float)
    return manufactured_problem(SINE, b=b, c=cfg.c, bc_kind=bc)


def _assembly_rule(cfg: ExperimentConfig) -> QuadratureRule:
    return QuadratureRule(triangle_rule(cfg.triangle_degree), edge_rule(cfg.edge_degree))


def _measure_rules(cfg: ExperimentConfig):
    """(quadrature for norms, quadrature for the measured interpolant)."""
    if cfg.measure == "midpoint":
        return QuadratureRule(edge_midpoint_rule(), edge_rule(1)), QuadratureRule.midpoint()
    q = _assembly_rule(cfg)
    return q, q


def run_level(mesh: Mesh, cfg: ExperimentConfig, problem=None) -> LevelRecord:
    """Solve on one mesh and measure every error of the table."""
    problem = problem or _problem(cfg)
    assembly = _assembly_rule(cfg)
    norm_q, interp_q = _measure_rules(cfg)

    sol = solve_problem(mesh, problem, assembly, cfg.tol)
    p_h, u_h = sol.p_h, sol.u_h
    # the canonical interpolant (exact fluxes) commutes with div; the
    # measurement one may use cheaper edge rules and only enters the L2 column
    xi = interpolate_rt(problem.exact_p, mesh, assembly) - p_h
    xi_m = xi if cfg.measure == "gauss" else interpolate_rt(problem.exact_p, mesh, interp_q) - p_h
    G = apply_gh(p_h)
    err_p = error_norm(p_h, problem.exact_p, norm_q)
    eta, _ = estimator(p_h, norm_q)
    rec = LevelRecord(
        nu=mesh.n_edges + mesh.n_triangles,
        h=mesh.h,
        err_p=err_p,
        err_superclose=error_norm(xi_m, None, norm_q),
        err_div=error_norm(xi, None, norm_q, which="div"),
        err_u=error_norm(P0Field(mesh, project_p0(problem.exact_u, mesh, assembly).values - u_h.values)),
        err_recovery=error_norm(G, problem.exact_p, norm_q),
        effectivity=eta / err_p if err_p > 0 else math.nan,
    )
    if cfg.helmholtz:
        split = helmholtz_split(xi, problem.bc_kind, cfg.tol)
        rec.err_grad = error_norm(split.grad_part, None, norm_q)
    if cfg.problem == "cr":
        u_cr = solve_cr(mesh, problem.f, assembly, tol=cfg.tol)
        Gg = apply_gh(P0Field(mesh, u_cr.gradient()))
        rec.err_cr = error_norm(Gg, problem.exact_grad_u, norm_q)
    log.info("level nu=%d h=%.4g: %s", rec.nu, rec.h, sol.report)
    return rec


def run_experiment(cfg: ExperimentConfig, on_level: Callable | None = None) -> ErrorReport:
    """Run all levels, then write the CSV and .dat outputs if configured.

    Raises
    ------
    ExperimentAborted
        When a level fails to solve; the partial report is attached (and
        written to ``cfg.out`` if set).
    """
    cfg.validate()
    problem = _problem(cfg)
    report = ErrorReport(cfg)
    for mesh in mesh_family(cfg):
        try:
            report.records.append(run_level(mesh, cfg, problem))
        except SolverError as exc:
            if cfg.out:
                report.to_csv(cfg.out)
            raise ExperimentAborted(
                f"solver failed at level {len(report.records)} ({mesh!r}): {exc}", report
            ) from exc
        if on_level is not None:
            on_level(report.records[-1])
    if cfg.out:
        report.to_csv(cfg.out)
    if cfg.dat:
        report.to_dat(cfg.dat)
    return report
