"""Quadrature on triangles (barycentric) and on edges (Gauss-Legendre).

Triangle weights are normalized to sum to one, so an integral over a triangle
is ``area * sum(w * f(x_q))``. Edge points live on [0, 1] with weights summing
to one; an edge integral is ``length * sum(w * f(x_q))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class TriangleRule:
    bary: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    degree: int


@dataclass(frozen=True)
class EdgeRule:
    points: np.ndarray  # (nq,) in [0, 1]
    weights: np.ndarray  # (nq,)
    degree: int


@dataclass(frozen=True)
class QuadratureRule:
    """A triangle rule paired with an edge rule."""

    triangle: TriangleRule
    edge: EdgeRule

    @classmethod
    def default(cls) -> "QuadratureRule":
        return cls(triangle_rule(5), edge_rule(7))

    @classmethod
    def midpoint(cls) -> "QuadratureRule":
        """Edge-midpoint rules: 3-point triangle rule (degree 2), 1-point edge rule.

        Cheaper and less accurate than :meth:`default`; useful to mimic
        measurements that evaluate integrals at edge midpoints only.
        """
        return cls(edge_midpoint_rule(), edge_rule(1))

    @classmethod
    def of_degree(cls, triangle_degree: int, edge_degree: int | None = None):
        if edge_degree is None:
            edge_degree = max(triangle_degree, 7)
        return cls(triangle_rule(triangle_degree), edge_rule(edge_degree))


def _radon7():
    r = np.sqrt(15.0)
    b1 = (6.0 + r) / 21.0
    b2 = (6.0 - r) / 21.0
    w1 = (155.0 + r) / 1200.0
    w2 = (155.0 - r) / 1200.0

    def orbit(b):
        a = 1.0 - 2.0 * b
        return [(a, b, b), (b, a, b), (b, b, a)]

    bary = [(1 / 3, 1 / 3, 1 / 3)] + orbit(b1) + orbit(b2)
    weights = [9.0 / 40.0] + [w1] * 3 + [w2] * 3
    return np.array(bary), np.array(weights)


def _collapsed(degree):
    """Conical product rule (Gauss-Jacobi x Gauss-Legendre), exact to ``degree``."""
    m = degree // 2 + 1
    s, ws = roots_jacobi(m, 1.0, 0.0)  # weight (1 - s) on [-1, 1]
    t, wt = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (s + 1.0)
    t = 0.5 * (t + 1.0)
    ws = ws / ws.sum()
    wt = wt / wt.sum()
    # x = s, y = (1 - s) t maps the unit square onto the reference triangle
    S, Tt = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    x = S.ravel()
    y = ((1.0 - S) * Tt).ravel()
    bary = np.stack([1.0 - x - y, x, y], axis=1)
    return bary, W.ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 5) -> TriangleRule:
    """Rule exact for polynomials of total degree ``degree``.

    Degrees up to 5 use the symmetric 7-point Radon rule (degree 1 uses the
    centroid); higher degrees use a collapsed Gauss product rule.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree <= 1:
        bary, w = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
        return TriangleRule(bary, w, 1)
    if degree <= 5:
        bary, w = _radon7()
        return TriangleRule(bary, w, 5)
    bary, w = _collapsed(degree)
    return TriangleRule(bary, w, degree)


@lru_cache(maxsize=None)
def edge_midpoint_rule() -> TriangleRule:
    """Three points at the edge midpoints with equal weights, exact to degree 2."""
    return TriangleRule(0.5 * (1.0 - np.eye(3)), np.full(3, 1.0 / 3.0), 2)


@lru_cache(maxsize=None)
def edge_rule(degree: int = 7) -> EdgeRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    m = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(m)
    return EdgeRule(0.5 * (x + 1.0), 0.5 * w, 2 * m - 1)
