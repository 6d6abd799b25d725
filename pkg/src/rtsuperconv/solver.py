"""Assembly and solution of the RT0 x P0 mixed system and the CR system.

Unknowns of the mixed system are ordered edges first (global edge index),
triangles second. The block system reads::

    [ M      B^T - N ] [p]   [G]
    [ -B     C       ] [u] = [F]

with ``M_ee' = (alpha phi_e', phi_e)``, ``N_et = (phi_e, beta 1_t)``,
``B_te = (div phi_e, 1_t)``, ``C_tt = (c, 1_t)``, ``G_e = <phi_e.n, g>`` and
``F_t = (f, 1_t)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh
from .problem import DIRICHLET, NEUMANN, ProblemSpec
from .quadrature import QuadratureRule, edge_rule
from .spaces import CRField, P0Field, P1Field, RTField, _edge_points, quadrature_points

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-10


class SolverError(RuntimeError):
    """The linear system could not be solved to the required residual."""


@dataclass
class SolveReport:
    residual: float
    n_unknowns: int
    nnz: int
    factor_nnz: int
    seconds: float
    method: str = "sparse LU (SuperLU, COLAMD ordering)"

    def __str__(self):
        return (
            f"{self.method}: n={self.n_unknowns} nnz={self.nnz} "
            f"fill={self.factor_nnz} residual={self.residual:.3e} time={self.seconds:.3f}s"
        )


@dataclass(eq=False)
class LinearSystem:
    """Sparse system plus the bookkeeping needed to rebuild full fields.

    ``edge_unknowns`` lists the global edges whose dofs are unknowns, in the
    order they appear in the matrix; triangle unknowns follow. Edges in
    ``fixed_edges`` carry prescribed dofs ``fixed_values``.
    """

    mesh: Mesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    edge_unknowns: np.ndarray
    fixed_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bc_kind: str = DIRICHLET
    pinned_mean: bool = False
    blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]

    @property
    def ordering(self) -> str:
        return (
            f"{len(self.edge_unknowns)} edge unknowns (by global edge index), "
            f"then {self.mesh.n_triangles} triangle unknowns"
        )


@dataclass(eq=False)
class MixedSolution:
    p_h: RTField
    u_h: P0Field
    report: SolveReport


# ---------------------------------------------------------------------------
# element integrals


def _rt_basis_at_points(mesh: Mesh, x):
    """Global-sign RT basis of each triangle at points x (T, nq, 2): (T, nq, 3, 2)."""
    geom = mesh.geometry
    rel = x[:, :, None, :] - geom.vertices[:, None, :, :]
    scale = mesh.tri_signs / (2.0 * mesh.areas[:, None])
    return rel * scale[:, None, :, None]


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix(
        (np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape
    ).tocsr()


def rt_mass_matrix(mesh: Mesh, alpha=None, quad: QuadratureRule | None = None):
    """``(alpha phi_j, phi_i)`` over all edges; ``alpha=None`` is the identity.

    ``alpha`` may be a callable returning 2x2 matrices at points.
    """
    x, w = quadrature_points(mesh, quad)
    phi = _rt_basis_at_points(mesh, x)
    if alpha is None:
        local = np.einsum("tq,tqid,tqjd->tij", w, phi, phi)
    else:
        a = alpha(x)
        local = np.einsum("tq,tqid,tqde,tqje->tij", w, phi, a, phi)
    te = mesh.tri_edges
    E = mesh.n_edges
    return _scatter(
        np.broadcast_to(te[:, :, None], local.shape),
        np.broadcast_to(te[:, None, :], local.shape),
        local,
        (E, E),
    )


def divergence_matrix(mesh: Mesh):
    """``B_te = (div phi_e, 1_t)``, which is the incidence sign."""
    T = mesh.n_triangles
    rows = np.repeat(np.arange(T), 3)
    return _scatter(rows, mesh.tri_edges, mesh.tri_signs, (T, mesh.n_edges))


def _boundary_edge_data(mesh: Mesh, rule):
    be = mesh.boundary_edges
    owner = mesh.edge_tris[be, 0]
    k = np.argmax(mesh.tri_edges[owner] == be[:, None], axis=1)
    sign = mesh.tri_signs[owner, k]
    x = _edge_points(mesh, rule)[be]
    n_out = sign[:, None] * mesh.edge_normals[be]
    return be, sign, x, n_out


def assemble_mixed(
    mesh: Mesh, problem: ProblemSpec, quad: QuadratureRule | None = None
) -> LinearSystem:
    """Assemble the mixed system for ``problem`` on ``mesh``.

    For Dirichlet problems the boundary term ``<phi_e.n, g>`` is included.
    For Neumann problems it is omitted; pass the result to
    :func:`apply_neumann` to impose the flux and remove boundary test functions.
    """
    quad = quad or QuadratureRule.default()
    E, T = mesh.n_edges, mesh.n_triangles
    x, w = quadrature_points(mesh, quad)
    phi = _rt_basis_at_points(mesh, x)

    M = rt_mass_matrix(mesh, None if problem.A is None else problem.alpha_at, quad)
    B = divergence_matrix(mesh)

    beta = problem.beta_at(x)
    if beta is None:
        N = sp.csr_matrix((E, T))
    else:
        local = np.einsum("tq,tqid,tqd->ti", w, phi, beta)
        N = _scatter(mesh.tri_edges, np.repeat(np.arange(T)[:, None], 3, axis=1), local, (E, T))

    cvals = problem.c_at(x)
    C = sp.csr_matrix((T, T)) if cvals is None else sp.diags(np.sum(w * cvals, axis=1)).tocsr()

    F = np.sum(w * problem.f(x), axis=1)
    G = np.zeros(E)
    if problem.bc_kind == DIRICHLET and problem.g is not None and len(mesh.boundary_edges):
        rule = quad.edge
        be, sign, xb, _ = _boundary_edge_data(mesh, rule)
        # phi_e . n_out = sign / length on the edge, so <phi_e.n, g> = sign * mean(g)
        G[be] = sign * np.einsum("q,eq->e", rule.weights, problem.g(xb))

    K = sp.bmat([[M, B.T - N], [-B, C]], format="csr")
    return LinearSystem(
        mesh=mesh,
        matrix=K,
        rhs=np.concatenate([G, F]),
        edge_unknowns=np.arange(E),
        bc_kind=problem.bc_kind,
        blocks={"M": M, "B": B, "N": N, "C": C},
    )


def neumann_dofs(mesh: Mesh, g, rule=None):
    """Prescribed boundary dofs ``sign * int_e g`` for outward flux data ``g(x, n)``."""
    rule = rule or edge_rule()
    be, sign, xb, n_out = _boundary_edge_data(mesh, rule)
    nq = len(rule.weights)
    vals = g(xb, np.repeat(n_out[:, None, :], nq, axis=1))
    flux = mesh.edge_lengths[be] * np.einsum("q,eq->e", rule.weights, vals)
    return be, sign * flux


def apply_neumann(
    mesh: Mesh,
    problem: ProblemSpec,
    system: LinearSystem,
    quad: QuadratureRule | None = None,
    pin_mean: bool = True,
    compat_tol: float = 1e-8,
) -> LinearSystem:
    """Impose ``p.n = g`` by fixing boundary dofs and dropping their test rows.

    Each boundary dof is set to the exact flux of ``g`` through the edge,
    i.e. the edge mean of ``g`` times the edge length. Without a reaction term
    the scalar is defined up to a constant, which is fixed by replacing the
    last triangle equation with ``sum |t| u_t = 0`` (when ``pin_mean``).

    Raises
    ------
    ValueError
        If the problem is not a Neumann problem, or ``c == 0`` and the data
        violate ``int f + int g = 0``.
    """
    if problem.bc_kind != NEUMANN:
        raise ValueError("apply_neumann needs a Neumann problem")
    quad = quad or QuadratureRule.default()
    E, T = mesh.n_edges, mesh.n_triangles
    be, fixed = neumann_dofs(mesh, problem.g, quad.edge)
    pure = problem.c is None
    if pure:
        _check_compatibility(mesh, problem, compat_tol)

    free = mesh.interior_edges
    keep = np.concatenate([free, E + np.arange(T)])
    K = system.matrix
    Kk = K[keep]
    rhs = system.rhs[keep] - Kk[:, be] @ fixed
    Kred = Kk[:, keep].tolil() if (pure and pin_mean) else Kk[:, keep]
    pinned = False
    if pure and pin_mean:
        last = Kred.shape[0] - 1
        Kred[last, :] = 0.0
        Kred[last, len(free):] = mesh.areas
        rhs[last] = 0.0
        pinned = True
    return LinearSystem(
        mesh=mesh,
        matrix=sp.csr_matrix(Kred),
        rhs=rhs,
        edge_unknowns=free,
        fixed_edges=be,
        fixed_values=fixed,
        bc_kind=NEUMANN,
        pinned_mean=pinned,
        blocks=system.blocks,
    )


def _check_compatibility(mesh: Mesh, problem: ProblemSpec, tol: float):
    fine = QuadratureRule.of_degree(14, 21)
    x, w = quadrature_points(mesh, fine)
    fw = w * problem.f(x)
    _, dofs = neumann_dofs(mesh, problem.g, fine.edge)
    _, sign, _, _ = _boundary_edge_data(mesh, fine.edge)
    total = fw.sum() + sign @ dofs
    if abs(total) > tol * max(np.abs(fw).sum(), 1.0):
        raise ValueError(f"incompatible pure Neumann data: int f + int g = {total:.3e}")


def assemble(mesh: Mesh, problem: ProblemSpec, quad: QuadratureRule | None = None) -> LinearSystem:
    """Assemble and, for Neumann problems, constrain the mixed system."""
    system = assemble_mixed(mesh, problem, quad)
    if problem.bc_kind == NEUMANN:
        system = apply_neumann(mesh, problem, system, quad)
    return system


def _lu_solve(A, b, tol):
    t0 = time.perf_counter()
    A = sp.csc_matrix(A)
    try:
        lu = splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from None
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() <= 1e-13 * piv.max():
        raise SolverError(
            f"matrix is numerically singular (pivot ratio {piv.min() / piv.max():.2e})"
        )
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    res = res / bnorm if bnorm > 0 else res
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds {tol:.1e}")
    report = SolveReport(
        residual=float(res),
        n_unknowns=A.shape[0],
        nnz=A.nnz,
        factor_nnz=lu.L.nnz + lu.U.nnz,
        seconds=time.perf_counter() - t0,
    )
    return x, report


def solve_mixed(system: LinearSystem, tol: float = SOLVER_TOL) -> MixedSolution:
    """Solve with a sparse direct factorization.

    Raises
    ------
    SolverError
        If the matrix is singular or the relative residual exceeds ``tol``.
    """
    mesh = system.mesh
    x, report = _lu_solve(system.matrix, system.rhs, tol)
    log.info("mixed solve: %s", report)
    ne = len(system.edge_unknowns)
    dofs = np.zeros(mesh.n_edges)
    dofs[system.edge_unknowns] = x[:ne]
    dofs[system.fixed_edges] = system.fixed_values
    return MixedSolution(RTField(mesh, dofs), P0Field(mesh, x[ne:]), report)


def solve_problem(
    mesh: Mesh, problem: ProblemSpec, quad: QuadratureRule | None = None, tol: float = SOLVER_TOL
) -> MixedSolution:
    return solve_mixed(assemble(mesh, problem, quad), tol)


def error_equation_residual(
    solution: MixedSolution, problem: ProblemSpec, quad: QuadratureRule | None = None
) -> np.ndarray:
    """Per-edge residual of the first error equation with the exact (p, u).

    Entry ``e`` is ``(alpha(p - p_h), phi_e) - (phi_e, beta(u - u_h)) + (div phi_e, u - u_h)``,
    which vanishes up to quadrature and solver error.
    """
    mesh = solution.p_h.mesh
    quad = quad or QuadratureRule.default()
    x, w = quadrature_points(mesh, quad)
    phi = _rt_basis_at_points(mesh, x)
    ep = problem.exact_p(x) - solution.p_h.evaluate(quad.triangle.bary)
    aep = ep if problem.A is None else np.einsum("tqij,tqj->tqi", problem.alpha_at(x), ep)
    eu = problem.exact_u(x) - solution.u_h.values[:, None]
    local = np.einsum("tq,tqid,tqd->ti", w, phi, aep)
    beta = problem.beta_at(x)
    if beta is not None:
        local -= np.einsum("tq,tqid,tqd,tq->ti", w, phi, beta, eu)
    local += (mesh.tri_signs / mesh.areas[:, None]) * np.sum(w * eu, axis=1)[:, None]
    res = np.zeros(mesh.n_edges)
    np.add.at(res, mesh.tri_edges, local)
    return res


# ---------------------------------------------------------------------------
# Crouzeix-Raviart


def assemble_cr(mesh: Mesh, f, quad: QuadratureRule | None = None, projected: bool = False):
    """Full CR stiffness matrix (E x E) and load vector for ``-Laplace u = f``.

    With ``projected`` the load uses the cell averages of ``f``.
    """
    quad = quad or QuadratureRule.default()
    geom = mesh.geometry
    gphi = -2.0 * geom.grad_lambda  # gradient of 1 - 2 lambda_k
    local = mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", gphi, gphi)
    te = mesh.tri_edges
    E = mesh.n_edges
    K = _scatter(
        np.broadcast_to(te[:, :, None], local.shape),
        np.broadcast_to(te[:, None, :], local.shape),
        local,
        (E, E),
    )
    x, w = quadrature_points(mesh, quad)
    fx = f(x)
    if projected:
        pf = np.sum(w * fx, axis=1) / mesh.areas
        lf = np.repeat((pf * mesh.areas / 3.0)[:, None], 3, axis=1)
    else:
        psi = 1.0 - 2.0 * quad.triangle.bary  # (nq, 3)
        lf = np.einsum("tq,tq,qk->tk", w, fx, psi)
    F = np.zeros(E)
    np.add.at(F, te, lf)
    return K, F


def solve_cr(
    mesh: Mesh,
    f,
    quad: QuadratureRule | None = None,
    projected: bool = False,
    tol: float = SOLVER_TOL,
) -> CRField:
    """CR solution of ``-Laplace u = f`` with zero boundary midpoint values."""
    K, F = assemble_cr(mesh, f, quad, projected)
    free = mesh.interior_edges
    vals = np.zeros(mesh.n_edges)
    if len(free):
        x, report = _lu_solve(K[free][:, free], F[free], tol)
        log.info("CR solve: %s", report)
        vals[free] = x
    return CRField(mesh, vals)


def marini_reconstruct(u_cr: CRField, f_avg: P0Field) -> RTField:
    """RT field ``grad u_cr - (f_avg / 2)(x - x_t)`` on each triangle.

    ``u_cr`` must solve the CR problem with cell-averaged load ``f_avg``. The
    dofs are exact edge fluxes of the affine field, read on each edge's first
    adjacent triangle.
    """
    mesh = u_cr.mesh
    grad = u_cr.gradient()
    tri = mesh.edge_tris[:, 0]
    m = mesh.edge_midpoints
    val = grad[tri] - 0.5 * f_avg.values[tri, None] * (m - mesh.barycenters[tri])
    dofs = mesh.edge_lengths * np.einsum("ed,ed->e", val, mesh.edge_normals)
    return RTField(mesh, dofs)


# ---------------------------------------------------------------------------
# discrete Helmholtz decomposition


@dataclass(eq=False)
class HelmholtzSplit:
    """``xi = grad_part + curl_part`` with ``curl_part = curl w``."""

    xi: RTField
    w: P1Field
    curl_part: RTField
    grad_part: RTField
    v: P0Field
    orthogonality: float  # |(grad_part, curl_part)| / ||xi||^2
    potential_residual: float


def curl_matrix(mesh: Mesh):
    """Map vertex values of ``w`` to RT dofs of ``curl w`` (E x V)."""
    E = mesh.n_edges
    rows = np.repeat(np.arange(E), 2)
    cols = mesh.edges.ravel()
    vals = np.tile([-1.0, 1.0], E)
    return _scatter(rows, cols, vals, (E, mesh.n_vertices))


def helmholtz_split(xi: RTField, bc_kind: str = DIRICHLET, tol: float = SOLVER_TOL) -> HelmholtzSplit:
    """L2-orthogonal split of an RT field into a discrete gradient and a curl.

    ``w`` solves ``(curl w, curl s) = (xi, curl s)`` for all continuous
    piecewise linear ``s``. In the Dirichlet variant ``w`` has zero mean; in
    the Neumann variant (``xi`` with zero boundary flux) ``w`` vanishes on the
    boundary. ``v`` is the piecewise constant with ``(grad_h v, q) = -(v, div q)``.
    """
    mesh = xi.mesh
    M = rt_mass_matrix(mesh)
    Cm = curl_matrix(mesh)
    K = (Cm.T @ M @ Cm).tocsr()
    rhs = Cm.T @ (M @ xi.dofs)
    V = mesh.n_vertices
    w = np.zeros(V)
    if bc_kind == NEUMANN:
        free = np.setdiff1d(np.arange(V), mesh.boundary_vertices)
    else:
        free = np.arange(1, V)
    if len(free):
        w[free], _ = _lu_solve(K[free][:, free], rhs[free], tol)
    if bc_kind != NEUMANN:
        # zero-mean gauge
        w -= np.sum(mesh.areas * w[mesh.triangles].mean(axis=1)) / mesh.areas.sum()
    curl = RTField(mesh, Cm @ w)
    grad = xi - curl

    B = divergence_matrix(mesh)
    rows = mesh.interior_edges if bc_kind == NEUMANN else np.arange(mesh.n_edges)
    Br = B[:, rows]
    target = -(M @ grad.dofs)[rows]
    L = (Br @ Br.T).tocsr()
    T = mesh.n_triangles
    v = np.zeros(T)
    if bc_kind == NEUMANN:
        sub = np.arange(1, T)
        v[sub], _ = _lu_solve(L[sub][:, sub], (Br @ target)[sub], tol)
        v -= np.sum(mesh.areas * v) / mesh.areas.sum()
    else:
        v, _ = _lu_solve(L, Br @ target, tol)
    tnorm = np.linalg.norm(target)
    pres = np.linalg.norm(Br.T @ v - target) / tnorm if tnorm > 0 else 0.0

    xnorm2 = float(xi.dofs @ (M @ xi.dofs))
    inner = float(grad.dofs @ (M @ curl.dofs))
    ortho = abs(inner) / xnorm2 if xnorm2 > 0 else abs(inner)
    return HelmholtzSplit(xi, P1Field(mesh, w), curl, grad, P0Field(mesh, v), ortho, float(pres))
