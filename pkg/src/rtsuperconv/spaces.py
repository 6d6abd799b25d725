"""Finite element fields on a :class:`~rtsuperconv.mesh.Mesh`.

Four discrete spaces are supported:

* :class:`RTField` -- lowest-order Raviart-Thomas, one flux per global edge;
* :class:`P0Field` -- piecewise constants, one value per triangle;
* :class:`CRField` -- Crouzeix-Raviart, one (scalar or 2-vector) value per
  edge midpoint;
* :class:`P1Field` -- continuous piecewise linears, one value per vertex.

Every field can be evaluated at a barycentric quadrature rule on all triangles
at once (``evaluate``), at the points of an edge rule (``edge_values``) and at a
single physical point (:func:`eval_field`).

Analytic fields are plain callables mapping points of shape ``(..., 2)`` to
values of shape ``(...)`` or ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TriangleGeometry
from .quadrature import EdgeRule, QuadratureRule, edge_rule


def rt_basis_eval(geom: TriangleGeometry, k: int, x, sign: float = 1.0):
    """Local RT basis function ``sign * (x - a_k) / (2|tau|)`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    return sign * (x - geom.vertices[k]) / (2.0 * geom.area)


def _edge_points(mesh: Mesh, rule: EdgeRule):
    v = mesh.vertices[mesh.edges]  # (E, 2, 2)
    s = rule.points[None, :, None]
    return v[:, None, 0] + s * (v[:, None, 1] - v[:, None, 0])  # (E, nq, 2)


def _first_side(mesh: Mesh):
    """Owning triangle and local index for each edge, taken on its first side."""
    tri = mesh.edge_tris[:, 0]
    k = np.argmax(mesh.tri_edges[tri] == np.arange(mesh.n_edges)[:, None], axis=1)
    return tri, k


class _Field:
    mesh: Mesh

    def evaluate(self, bary) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def evaluate_in(self, tris, bary) -> np.ndarray:
        """Values in triangles ``tris`` at per-triangle barycentrics (n, nq, 3)."""
        raise NotImplementedError

    def edge_values(self, rule: EdgeRule | None = None) -> np.ndarray:
        """Values at edge quadrature points, seen from each edge's first triangle."""
        rule = rule or edge_rule()
        tri, _ = _first_side(self.mesh)
        x = _edge_points(self.mesh, rule)
        return self.evaluate_in(tri, self.mesh.geometry.take(tri).barycentric(x))


@dataclass(frozen=True, eq=False)
class RTField(_Field):
    """RT0 field: ``dofs[e]`` is the flux through edge ``e`` along its global normal."""

    mesh: Mesh
    dofs: np.ndarray

    def __post_init__(self):
        if self.dofs.shape != (self.mesh.n_edges,):
            raise ValueError(
                f"RTField needs {self.mesh.n_edges} dofs, got shape {self.dofs.shape}"
            )

    def local_fluxes(self) -> np.ndarray:
        """Fluxes through each triangle's edges along its outward normals, (T, 3)."""
        return self.mesh.tri_signs * self.dofs[self.mesh.tri_edges]

    def affine(self):
        """Per-triangle form ``q(x) = c + s x``; returns ``c`` (T, 2) and ``s`` (T,)."""
        geom = self.mesh.geometry
        w = self.local_fluxes() / (2.0 * geom.area[:, None])
        s = w.sum(axis=1)
        c = -np.einsum("tk,tkd->td", w, geom.vertices)
        return c, s

    def divergence(self) -> np.ndarray:
        """Piecewise constant divergence, (T,)."""
        return self.local_fluxes().sum(axis=1) / self.mesh.areas

    def evaluate(self, bary):
        x = self.mesh.geometry.to_physical(np.broadcast_to(bary, (self.mesh.n_triangles,) + np.shape(bary)))
        c, s = self.affine()
        return c[:, None, :] + s[:, None, None] * x

    def evaluate_in(self, tris, bary):
        c, s = self.affine()
        x = np.einsum("tqk,tkd->tqd", bary, self.mesh.geometry.vertices[tris])
        return c[tris, None, :] + s[tris, None, None] * x

    def __add__(self, other):
        return RTField(self.mesh, self.dofs + other.dofs)

    def __sub__(self, other):
        return RTField(self.mesh, self.dofs - other.dofs)

    def __mul__(self, a):
        return RTField(self.mesh, a * self.dofs)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class P0Field(_Field):
    """Piecewise constant scalar, or vector when ``values`` has shape (T, 2)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.mesh.n_triangles:
            raise ValueError("P0Field needs one value per triangle")

    def evaluate(self, bary):
        nq = np.shape(bary)[-2]
        v = self.values[:, None]
        return np.repeat(v, nq, axis=1)

    def evaluate_in(self, tris, bary):
        nq = np.shape(bary)[-2]
        return np.repeat(self.values[tris][:, None], nq, axis=1)


@dataclass(frozen=True, eq=False)
class CRField(_Field):
    """Crouzeix-Raviart field given by its edge-midpoint values (E,) or (E, 2)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.mesh.n_edges:
            raise ValueError("CRField needs one value per edge")

    def local_values(self) -> np.ndarray:
        return self.values[self.mesh.tri_edges]

    def evaluate(self, bary):
        # the CR basis function of edge k is 1 - 2 lambda_k
        phi = 1.0 - 2.0 * np.asarray(bary)
        return np.einsum("qk,tk...->tq...", phi, self.local_values())

    def evaluate_in(self, tris, bary):
        phi = 1.0 - 2.0 * np.asarray(bary)
        return np.einsum("tqk,tk...->tq...", phi, self.local_values()[tris])

    def gradient(self) -> np.ndarray:
        """Piecewise gradient (T, 2) for scalar fields, (T, 2, 2) for vectors.

        For vector fields entry ``[t, i, j]`` is d q_i / d x_j.
        """
        g = -2.0 * self.mesh.geometry.grad_lambda  # (T, 3, 2)
        return np.einsum("tkj,tk...->t...j", g, self.local_values())


@dataclass(frozen=True, eq=False)
class P1Field(_Field):
    """Continuous piecewise linear scalar given by vertex values (V,)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("P1Field needs one value per vertex")

    def local_values(self):
        return self.values[self.mesh.triangles]

    def evaluate(self, bary):
        return np.einsum("qk,tk->tq", np.asarray(bary), self.local_values())

    def evaluate_in(self, tris, bary):
        return np.einsum("tqk,tk->tq", bary, self.local_values()[tris])

    def gradient(self) -> np.ndarray:
        return np.einsum("tkd,tk->td", self.mesh.geometry.grad_lambda, self.local_values())

    def curl(self) -> np.ndarray:
        """Piecewise constant vector curl ``(dw/dy, -dw/dx)``, (T, 2)."""
        g = self.gradient()
        return np.stack([g[:, 1], -g[:, 0]], axis=1)

    def curl_rt(self) -> RTField:
        """The curl as an RT field: the flux through edge e is w(end) - w(start)."""
        e = self.mesh.edges
        return RTField(self.mesh, self.values[e[:, 1]] - self.values[e[:, 0]])


def eval_field(field, triangle: int, point, tol: float = 1e-10):
    """Evaluate ``field`` restricted to ``triangle`` at a physical ``point``.

    Raises
    ------
    ValueError
        If the point lies outside the triangle.
    """
    mesh = field.mesh
    x = np.asarray(point, dtype=float).reshape(1, 1, 2)
    lam = mesh.geometry.take([triangle]).barycentric(x)
    if lam.min() < -tol:
        raise ValueError(f"point {tuple(np.ravel(point))} is not in triangle {triangle}")
    return field.evaluate_in(np.array([triangle]), lam)[0, 0]


# ---------------------------------------------------------------------------
# interpolation operators


def _edge_integrals(q, mesh: Mesh, rule: EdgeRule):
    """Integral of ``q`` over every edge, (E,) or (E, 2)."""
    if isinstance(q, _Field):
        vals = q.edge_values(rule)
    else:
        vals = np.asarray(q(_edge_points(mesh, rule)), dtype=float)
    return mesh.edge_lengths.reshape((-1,) + (1,) * (vals.ndim - 2)) * np.einsum(
        "q,eq...->e...", rule.weights, vals
    )


def interpolate_rt(q, mesh: Mesh, quad: QuadratureRule | None = None) -> RTField:
    """Canonical RT interpolant: match the flux through every edge."""
    quad = quad or QuadratureRule.default()
    integrals = _edge_integrals(q, mesh, quad.edge)
    return RTField(mesh, np.einsum("ed,ed->e", integrals, mesh.edge_normals))


def project_p0(v, mesh: Mesh, quad: QuadratureRule | None = None) -> P0Field:
    """L2 projection onto piecewise constants (cell averages)."""
    quad = quad or QuadratureRule.default()
    rule = quad.triangle
    if isinstance(v, _Field):
        vals = v.evaluate(rule.bary)
    else:
        vals = np.asarray(v(mesh.geometry.to_physical(
            np.broadcast_to(rule.bary, (mesh.n_triangles,) + rule.bary.shape))))
    return P0Field(mesh, np.einsum("q,tq...->t...", rule.weights, vals))


def interpolate_cr(q, mesh: Mesh, quad: QuadratureRule | None = None) -> CRField:
    """CR interpolant: the midpoint value on each edge is the edge mean of ``q``."""
    quad = quad or QuadratureRule.default()
    integrals = _edge_integrals(q, mesh, quad.edge)
    return CRField(mesh, integrals / mesh.edge_lengths.reshape((-1,) + (1,) * (integrals.ndim - 1)))


def interpolate_p1(v, mesh: Mesh) -> P1Field:
    """Nodal interpolant onto continuous piecewise linears."""
    return P1Field(mesh, np.asarray(v(mesh.vertices), dtype=float))


def quadrature_points(mesh: Mesh, quad: QuadratureRule | None = None):
    """Physical triangle quadrature points (T, nq, 2) and weights (T, nq)."""
    quad = quad or QuadratureRule.default()
    rule = quad.triangle
    bary = np.broadcast_to(rule.bary, (mesh.n_triangles,) + rule.bary.shape)
    x = mesh.geometry.to_physical(bary)
    return x, mesh.areas[:, None] * rule.weights[None, :]


def to_csv(field, path) -> None:
    """Write ``index,value[,value]`` rows for debugging and exchange."""
    vals = field.dofs if isinstance(field, RTField) else field.values
    vals = np.asarray(vals).reshape(len(vals), -1)
    with open(path, "w") as fh:
        names = ",".join(f"value{i}" for i in range(vals.shape[1])) if vals.shape[1] > 1 else "value"
        fh.write(f"index,{names}\n")
        for i, row in enumerate(vals):
            fh.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def rt_from_csv(mesh: Mesh, path) -> RTField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != mesh.n_edges:
        raise ValueError(f"{path}: {data.shape[0]} rows for a mesh with {mesh.n_edges} edges")
    dofs = np.empty(mesh.n_edges)
    dofs[data[:, 0].astype(int)] = data[:, 1]
    return RTField(mesh, dofs)
