"""Midpoint-averaging flux recovery and the estimator built on it.

``apply_gh`` maps a discontinuous vector field (an RT field, a piecewise
constant gradient, ...) to a vector-valued Crouzeix-Raviart field. Interior
midpoints get the average of the two one-sided values. A boundary midpoint is
extrapolated linearly along a chain of two interior midpoints of the
neighbouring patch, which is exact for linear fields on parallelogram patches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .quadrature import QuadratureRule
from .spaces import CRField, RTField

log = logging.getLogger(__name__)

# barycentric coordinates of the midpoint of local edge k (opposite vertex k)
MIDPOINT_BARY = 0.5 * (1.0 - np.eye(3))


@dataclass(frozen=True, eq=False)
class RecoveredField(CRField):
    """Vector CR field produced by :func:`apply_gh`.

    ``fallback_edges`` lists boundary edges whose extrapolation patch left the
    mesh; those carry the one-sided value instead.
    """

    fallback_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def midpoint_values(q) -> np.ndarray:
    """One-sided values of ``q`` at the three edge midpoints of every triangle, (T, 3, 2)."""
    vals = np.asarray(q.evaluate(MIDPOINT_BARY), dtype=float)
    if vals.ndim != 3 or vals.shape[-1] != 2:
        raise ValueError(f"expected a vector field, got values of shape {vals.shape}")
    return vals


@dataclass(frozen=True)
class BoundaryStencil:
    """For each boundary edge: the interior edges m' and m'' used for extrapolation.

    ``second`` is -1 where the patch is incomplete (one-sided fallback).
    """

    edges: np.ndarray
    first: np.ndarray
    second: np.ndarray


def boundary_stencil(mesh: Mesh) -> BoundaryStencil:
    """Pick e' and e'' for every boundary edge.

    e' is the interior edge of the boundary triangle with the lowest global
    index; e'' is the edge of the triangle across e' that does not touch the
    boundary edge. The stencil is rejected when e'' is itself on the boundary.
    """
    bnd = mesh.boundary_edges
    first = np.full(len(bnd), -1)
    second = np.full(len(bnd), -1)
    for i, e in enumerate(bnd):
        tau = mesh.edge_tris[e, 0]
        cand = [f for f in mesh.tri_edges[tau] if f != e and not mesh.is_boundary_edge[f]]
        if not cand:
            continue
        e1 = min(cand)
        t0, t1 = mesh.edge_tris[e1]
        tau1 = t1 if t0 == tau else t0
        ends = set(mesh.edges[e])
        e2 = next(f for f in mesh.tri_edges[tau1] if not ends & set(mesh.edges[f]))
        first[i] = e1
        if not mesh.is_boundary_edge[e2]:
            second[i] = e2
    return BoundaryStencil(bnd, first, second)


def apply_gh(q, mesh: Mesh | None = None) -> RecoveredField:
    """Recover a vector CR field from a per-triangle field.

    Parameters
    ----------
    q : field or ndarray
        Anything with ``evaluate(bary)`` returning (T, nq, 2) values (RTField,
        vector P0Field, vector CRField), or an array (T, 3, 2) of one-sided
        values at the midpoints of each triangle's local edges.
    mesh : Mesh, optional
        Required when ``q`` is an array.

    Returns
    -------
    RecoveredField
    """
    if isinstance(q, np.ndarray):
        if mesh is None:
            raise ValueError("a mesh is needed when midpoint values are given as an array")
        vals = q
        if vals.shape != (mesh.n_triangles, 3, 2):
            raise ValueError(f"midpoint values must have shape (T, 3, 2), got {vals.shape}")
    else:
        if mesh is not None and mesh is not q.mesh:
            raise ValueError("field lives on a different mesh")
        mesh = q.mesh
        vals = midpoint_values(q)

    E = mesh.n_edges
    total = np.zeros((E, 2))
    count = np.zeros(E)
    # every (triangle, local edge) pair contributes its one-sided value
    np.add.at(total, mesh.tri_edges.ravel(), vals.reshape(-1, 2))
    np.add.at(count, mesh.tri_edges.ravel(), 1.0)
    G = total / count[:, None]

    st = boundary_stencil(mesh)
    ok = st.second >= 0
    G[st.edges[ok]] = 2.0 * G[st.first[ok]] - G[st.second[ok]]
    fallback = st.edges[~ok]
    if len(fallback):
        log.warning(
            "G_h: %d boundary edge(s) without a complete patch use one-sided values: %s",
            len(fallback), fallback.tolist(),
        )
    return RecoveredField(mesh, G, fallback_edges=fallback)


def estimator(p_h: RTField, quad: QuadratureRule | None = None):
    """Recovery-based a posteriori estimator ``||G_h p_h - p_h||``.

    Returns
    -------
    eta : float
        Global estimate.
    eta_tau : ndarray (T,)
        Per-triangle indicators.
    """
    quad = quad or QuadratureRule.default()
    rule = quad.triangle
    d = apply_gh(p_h).evaluate(rule.bary) - p_h.evaluate(rule.bary)
    eta_tau = np.sqrt(p_h.mesh.areas * np.einsum("q,tq->t", rule.weights, np.sum(d * d, axis=-1)))
    return float(np.sqrt(np.sum(eta_tau**2))), eta_tau


def write_indicators(eta_tau, path) -> None:
    """CSV with columns ``triangle,eta``."""
    with open(path, "w") as fh:
        fh.write("triangle,eta\n")
        for t, v in enumerate(np.asarray(eta_tau)):
            fh.write(f"{t},{v:.17g}\n")


def write_recovered(G: CRField, path) -> None:
    """CSV with columns ``edge,x,y,gx,gy`` (midpoint and recovered value)."""
    m = G.mesh.edge_midpoints
    with open(path, "w") as fh:
        fh.write("edge,x,y,gx,gy\n")
        for e in range(G.mesh.n_edges):
            fh.write(f"{e},{m[e, 0]:.17g},{m[e, 1]:.17g},{G.values[e, 0]:.17g},{G.values[e, 1]:.17g}\n")
