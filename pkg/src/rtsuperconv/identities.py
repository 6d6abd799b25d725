"""Numerical oracles for exact algebraic identities of the RT0 element.

Each check returns a defect that vanishes up to round-off. Linear vector
fields are passed as ``(c, G)`` meaning ``p(x) = c + G x`` with
``G[i, j] = d p_i / d x_j``; derivatives of other analytic fields are supplied
by the caller, never differentiated numerically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TriangleGeometry, generate_perturbed, generate_uniform
from .problem import poisson_problem
from .quadrature import QuadratureRule, edge_rule, triangle_rule
from .solver import helmholtz_split, marini_reconstruct, solve_cr, solve_problem
from .spaces import interpolate_cr, interpolate_rt, project_p0, rt_basis_eval

# quadrature for checks whose integrands are not polynomial
HIGH_ORDER = QuadratureRule.of_degree(20, 21)


def _edge_param(geom: TriangleGeometry, k: int, s):
    """Points on local edge k at parameters s in [0, 1] (from a_{k+1} to a_{k+2})."""
    a = geom.vertices
    return a[(k + 1) % 3] + np.multiply.outer(s, a[(k + 2) % 3] - a[(k + 1) % 3])


def rt_dof_duality_check(geom: TriangleGeometry) -> float:
    """``max |N_j(phi_k) - delta_jk|`` with outward-normal dofs by edge quadrature."""
    rule = edge_rule(3)
    N = np.empty((3, 3))
    for j in range(3):
        x = _edge_param(geom, j, rule.points)
        for k in range(3):
            vals = rt_basis_eval(geom, k, x) @ geom.normals[j]
            N[j, k] = geom.lengths[j] * rule.weights @ vals
    return float(np.max(np.abs(N - np.eye(3))))


def _local_interpolant(geom: TriangleGeometry, c, G):
    """Pi_h of ``c + G x`` on one triangle, as a callable (dofs by the midpoint rule, exact)."""
    mids = 0.5 * (geom.vertices[[1, 2, 0]] + geom.vertices[[2, 0, 1]])
    dofs = geom.lengths * np.einsum("kd,kd->k", c + mids @ G.T, geom.normals)

    def pi(x):
        return sum(dofs[k] * rt_basis_eval(geom, k, x) for k in range(3))

    return pi


def local_expansion_check(geom: TriangleGeometry, c, G) -> float:
    """Max over quadrature nodes of ``|p_L - Pi_h p_L - curl r|``.

    ``r = -sum_k (l_k^2 / 2) (n_k . dp_L/dt_k) lambda_{k-1} lambda_{k+1}`` and
    ``curl r = (dr/dy, -dr/dx)``.
    """
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    rule = triangle_rule(5)
    lam = rule.bary
    x = lam @ geom.vertices
    alpha = -0.5 * geom.lengths**2 * np.einsum("kd,de,ke->k", geom.normals, G, geom.tangents)
    gl = geom.grad_lambda
    grad_r = np.zeros_like(x)
    for k in range(3):
        km, kp = (k - 1) % 3, (k + 1) % 3
        grad_r += alpha[k] * (lam[:, [kp]] * gl[km] + lam[:, [km]] * gl[kp])
    curl_r = np.stack([grad_r[:, 1], -grad_r[:, 0]], axis=1)
    defect = (c + x @ G.T) - _local_interpolant(geom, c, G)(x) - curl_r
    return float(np.max(np.linalg.norm(defect, axis=1)))


def local_variational_identity_check(geom: TriangleGeometry, c, G, q) -> float:
    """``|LHS - RHS|`` of the local variational error identity for constant ``q``.

    LHS is ``int_tau (p_L - Pi_h p_L) . q``; RHS is the sum over edges of
    ``cot(theta_k) int_{e_k} lambda_{k-1} lambda_{k+1} (sum_j alpha_k^j A_k^j p_L) (q . n_k)``.
    """
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    q = np.asarray(q, dtype=float)
    rule = triangle_rule(5)
    x = rule.bary @ geom.vertices
    diff = (c + x @ G.T) - _local_interpolant(geom, c, G)(x)
    lhs = geom.area * rule.weights @ (diff @ q)

    erule = edge_rule(3)
    s = erule.points
    rhs = 0.0
    for k in range(3):
        km, kp = (k - 1) % 3, (k + 1) % 3
        t, n = geom.tangents[k], geom.normals[k]
        coef = (
            geom.area * (t @ G @ t)
            - geom.area * (n @ G @ n)
            + 0.5 * (geom.lengths[km] ** 2 - geom.lengths[kp] ** 2) * (n @ G @ t)
        )
        # on e_k, lambda_{k+1} = 1 - s and lambda_{k-1} = lambda_{k+2} = s
        bubble = geom.lengths[k] * erule.weights @ (s * (1.0 - s))
        rhs += coef * bubble * (q @ n) / np.tan(geom.angles[k])
    return float(abs(lhs - rhs))


def cr_interpolant_check(q, mesh: Mesh, quad: QuadratureRule | None = None) -> float:
    """Relative dof-wise defect of ``Pi_h I_CR q = Pi_h q``."""
    quad = quad or QuadratureRule.default()
    direct = interpolate_rt(q, mesh, quad).dofs
    via_cr = interpolate_rt(interpolate_cr(q, mesh, quad), mesh, quad).dofs
    scale = max(np.max(np.abs(direct)), np.finfo(float).tiny)
    return float(np.max(np.abs(direct - via_cr)) / scale)


def commuting_diagram_check(q, div_q, mesh: Mesh, quad: QuadratureRule | None = None) -> float:
    """``max_tau |div(Pi_h q) - P_h(div q)|``, relative to ``max |P_h div q|`` when nonzero."""
    quad = quad or HIGH_ORDER
    lhs = interpolate_rt(q, mesh, quad).divergence()
    rhs = project_p0(div_q, mesh, quad).values
    scale = np.max(np.abs(rhs))
    d = float(np.max(np.abs(lhs - rhs)))
    return d / scale if scale > 0 else d


def marini_check(n: int) -> float:
    """Max dof difference between the mixed Poisson solution and Marini's reconstruction."""
    mesh = generate_uniform(n)
    prob = poisson_problem()
    mixed = solve_problem(mesh, prob)
    u_bar = solve_cr(mesh, prob.f, projected=True)
    rec = marini_reconstruct(u_bar, project_p0(prob.f, mesh))
    return float(np.max(np.abs(rec.dofs - mixed.p_h.dofs)))


def helmholtz_check(xi):
    """Orthogonality, div of the curl part and the dimension identity of a split.

    Returns
    -------
    dict with ``orthogonality`` (relative), ``div_curl`` (max per-triangle
    divergence of the curl part) and ``dimension`` (``E - T - V + 1``).
    """
    split = helmholtz_split(xi)
    m = xi.mesh
    return {
        "orthogonality": split.orthogonality,
        "div_curl": float(np.max(np.abs(split.curl_part.divergence()))),
        "dimension": m.n_edges - m.n_triangles - m.n_vertices + 1,
    }


# ---------------------------------------------------------------------------
# randomized suite


def random_triangle(rng, min_angle: float = np.pi / 18) -> TriangleGeometry:
    """Random CCW triangle in the unit square with all angles above ``min_angle``."""
    while True:
        a = rng.random((3, 2))
        geom = TriangleGeometry.from_vertices(a)
        if geom.area < 0:
            geom = TriangleGeometry.from_vertices(a[[0, 2, 1]])
        if geom.angles.min() > min_angle:
            return geom


def random_polynomial_field(rng, degree: int):
    """Random vector polynomial of total degree ``degree`` and its divergence."""
    powers = [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]
    coef = rng.standard_normal((len(powers), 2))

    def q(x):
        out = np.zeros(x.shape[:-1] + (2,))
        for (i, j), cf in zip(powers, coef):
            out += np.multiply.outer(x[..., 0] ** i * x[..., 1] ** j, cf)
        return out

    def div(x):
        out = np.zeros(x.shape[:-1])
        for (i, j), cf in zip(powers, coef):
            if i:
                out += cf[0] * i * x[..., 0] ** (i - 1) * x[..., 1] ** j
            if j:
                out += cf[1] * j * x[..., 0] ** i * x[..., 1] ** (j - 1)
        return out

    return q, div


@dataclass
class OracleResult:
    name: str
    max_defect: float
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tolerance

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.name:<28s} max defect {self.max_defect:.3e} "
            f"(tol {self.tolerance:.0e}, {self.trials} trials) {status}"
        )


def run_identity_suite(trials: int = 100, seed: int = 0, tol: float = 1e-12, extra: bool = True):
    """Run every randomized oracle ``trials`` times.

    The local identities use random triangles and random linear fields; the
    CR-interpolant and commuting-diagram checks use random polynomial fields on
    small perturbed meshes. With ``extra`` the Marini and Helmholtz checks are
    appended (one deterministic run each, with their own tolerances).

    Returns
    -------
    list of OracleResult, seconds elapsed
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = dict.fromkeys(
        ["rt dof duality", "interpolant via CR", "local expansion", "local variational", "commuting diagram"],
        0.0,
    )
    for _ in range(trials):
        geom = random_triangle(rng)
        h = geom.lengths.max()
        c = rng.standard_normal(2)
        G = rng.standard_normal((2, 2))
        qc = rng.standard_normal(2)
        gnorm = np.linalg.norm(G)
        worst["rt dof duality"] = max(worst["rt dof duality"], rt_dof_duality_check(geom))
        worst["local expansion"] = max(
            worst["local expansion"], local_expansion_check(geom, c, G) / (gnorm * h)
        )
        worst["local variational"] = max(
            worst["local variational"],
            local_variational_identity_check(geom, c, G, qc) / (h**2 * np.linalg.norm(qc) * gnorm),
        )

        mesh = generate_perturbed(int(rng.integers(2, 6)), 0.0, 0.2, seed=int(rng.integers(1 << 31)))
        q3, _ = random_polynomial_field(rng, 3)
        worst["interpolant via CR"] = max(worst["interpolant via CR"], cr_interpolant_check(q3, mesh))
        q4, div4 = random_polynomial_field(rng, 4)
        worst["commuting diagram"] = max(
            worst["commuting diagram"], commuting_diagram_check(q4, div4, mesh, QuadratureRule.default())
        )
    results = [OracleResult(k, v, tol, trials) for k, v in worst.items()]

    if extra:
        results.append(OracleResult("Marini reconstruction n=8", marini_check(8), 1e-8, 1))
        mesh = generate_perturbed(8, 0.5, 0.25, seed=seed)
        xi = interpolate_rt(lambda x: np.stack([np.sin(3 * x[..., 1]), x[..., 0] ** 2], -1), mesh)
        hc = helmholtz_check(xi)
        results.append(OracleResult("Helmholtz orthogonality", hc["orthogonality"], 1e-10, 1))
        results.append(OracleResult("Helmholtz div of curl part", hc["div_curl"], 1e-12, 1))
        results.append(OracleResult("Helmholtz dimension", float(abs(hc["dimension"])), 0.0, 1))
    return results, time.perf_counter() - start
