"""Triangular meshes of planar polygonal domains.

A :class:`Mesh` stores vertices and counterclockwise triangles and derives a
globally oriented edge list from them. Local numbering follows the usual
convention: local edge ``k`` of a triangle is the edge opposite its local
vertex ``k``, running from vertex ``k+1`` to vertex ``k+2`` (indices mod 3).

Every edge ``(i, j)`` is stored with ``i < j``. Its global tangent points from
``i`` to ``j`` and its global normal is that tangent rotated by -pi/2. The
incidence sign of a triangle on one of its edges is +1 when the triangle's
outward normal equals the global normal.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path

import numpy as np

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Conforming triangulation with edge adjacency.

    Parameters
    ----------
    vertices : array_like, shape (V, 2)
    triangles : array_like of int, shape (T, 3)
        Vertex indices, counterclockwise.

    Raises
    ------
    ValueError
        If a triangle has non-positive signed area or an edge is shared by
        more than two triangles.
    """

    def __init__(self, vertices, triangles):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (V, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (T, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle refers to a missing vertex")

        a = vertices[triangles]
        d1 = a[:, 1] - a[:, 0]
        d2 = a[:, 2] - a[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        bad = np.flatnonzero(signed <= 0.0)
        if bad.size:
            raise ValueError(
                f"{bad.size} triangle(s) not counterclockwise, first is {bad[0]} "
                f"with signed area {signed[bad[0]]:.3e}"
            )

        # local edge k joins local vertices k+1 and k+2
        loc = triangles[:, [[1, 2], [2, 0], [0, 1]]]  # (T, 3, 2)
        lo = loc.min(axis=2)
        hi = loc.max(axis=2)
        keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
        edges, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: an edge is shared by 3+ triangles")

        tri_edges = inverse.reshape(-1, 3)
        tri_signs = np.where(loc[:, :, 0] < loc[:, :, 1], 1, -1)

        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        tri_of = order // 3
        edge_tris[inverse[order][first], 0] = tri_of[first]
        edge_tris[inverse[order][~first], 1] = tri_of[~first]

        self.vertices = _readonly(vertices)
        self.triangles = _readonly(triangles)
        self.edges = _readonly(edges.astype(np.int64))
        self.tri_edges = _readonly(tri_edges)
        self.tri_signs = _readonly(tri_signs)
        self.edge_tris = _readonly(edge_tris)
        self._signed_area = signed

    def __repr__(self):
        return f"Mesh(V={self.n_vertices}, E={self.n_edges}, T={self.n_triangles})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return _readonly(np.flatnonzero(self.edge_tris[:, 1] < 0))

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return _readonly(np.flatnonzero(self.edge_tris[:, 1] >= 0))

    @cached_property
    def is_boundary_edge(self) -> np.ndarray:
        return _readonly(self.edge_tris[:, 1] < 0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return _readonly(np.unique(self.edges[self.boundary_edges]))

    @cached_property
    def areas(self) -> np.ndarray:
        return _readonly(self._signed_area)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Length of every global edge, shape (E,)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return _readonly(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return _readonly(0.5 * self.vertices[self.edges].sum(axis=1))

    @cached_property
    def edge_tangents(self) -> np.ndarray:
        """Unit global tangents (from lower to higher vertex index)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return _readonly(d / self.edge_lengths[:, None])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit global normals: the tangent rotated by -pi/2."""
        t = self.edge_tangents
        return _readonly(np.stack([t[:, 1], -t[:, 0]], axis=1))

    @cached_property
    def barycenters(self) -> np.ndarray:
        return _readonly(self.vertices[self.triangles].mean(axis=1))

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge of every triangle."""
        return _readonly(self.edge_lengths[self.tri_edges].max(axis=1))

    @property
    def h(self) -> float:
        """Mesh size, the largest triangle diameter."""
        return float(self.diameters.max())

    @cached_property
    def geometry(self) -> "TriangleGeometry":
        """Per-triangle geometry for all triangles at once (leading axis T)."""
        return TriangleGeometry.from_vertices(self.vertices[self.triangles])

    def edge_local_index(self, tri: int, edge: int) -> int:
        k = np.flatnonzero(self.tri_edges[tri] == edge)
        if k.size != 1:
            raise ValueError(f"edge {edge} is not an edge of triangle {tri}")
        return int(k[0])

    def permuted(self, perm) -> "Mesh":
        """Same triangulation with vertex ``i`` renamed ``perm[i]``."""
        perm = np.asarray(perm)
        vertices = np.empty_like(self.vertices)
        vertices[perm] = self.vertices
        return Mesh(vertices, perm[self.triangles])


@dataclass(frozen=True, eq=False)
class TriangleGeometry:
    """Geometric quantities of one triangle or a stack of triangles.

    Arrays carry an optional leading triangle axis. Index ``k`` refers to the
    edge opposite vertex ``k``.
    """

    vertices: np.ndarray  # (..., 3, 2)
    area: np.ndarray  # (...)
    lengths: np.ndarray  # (..., 3)
    angles: np.ndarray  # (..., 3), angle at vertex k
    heights: np.ndarray  # (..., 3), distance from vertex k to edge k
    tangents: np.ndarray  # (..., 3, 2), counterclockwise
    normals: np.ndarray  # (..., 3, 2), outward
    barycenter: np.ndarray  # (..., 2)
    grad_lambda: np.ndarray  # (..., 3, 2)

    @classmethod
    def from_vertices(cls, a) -> "TriangleGeometry":
        a = np.asarray(a, dtype=float)
        nxt = a[..., [1, 2, 0], :]
        prv = a[..., [2, 0, 1], :]
        edge = prv - nxt  # edge k runs from a_{k+1} to a_{k+2}
        lengths = np.linalg.norm(edge, axis=-1)
        tangents = edge / lengths[..., None]
        normals = np.stack([tangents[..., 1], -tangents[..., 0]], axis=-1)
        d1 = a[..., 1, :] - a[..., 0, :]
        d2 = a[..., 2, :] - a[..., 0, :]
        area = 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
        heights = 2.0 * area[..., None] / lengths
        u = nxt - a
        w = prv - a
        cosang = np.sum(u * w, axis=-1) / (
            np.linalg.norm(u, axis=-1) * np.linalg.norm(w, axis=-1)
        )
        angles = np.arccos(np.clip(cosang, -1.0, 1.0))
        grad_lambda = -normals / heights[..., None]
        return cls(
            vertices=a,
            area=area,
            lengths=lengths,
            angles=angles,
            heights=heights,
            tangents=tangents,
            normals=normals,
            barycenter=a.mean(axis=-2),
            grad_lambda=grad_lambda,
        )

    def to_physical(self, bary):
        """Map barycentric coordinates ``(..., nq, 3)`` to points ``(..., nq, 2)``."""
        return np.einsum("...qk,...kd->...qd", bary, self.vertices)

    def barycentric(self, x):
        """Barycentric coordinates of points ``x`` of shape (..., nq, 2)."""
        rel = np.asarray(x, dtype=float) - self.vertices[..., None, 0, :]
        lam12 = np.einsum("...qd,...kd->...qk", rel, self.grad_lambda[..., 1:, :])
        return np.concatenate([1.0 - lam12.sum(axis=-1, keepdims=True), lam12], axis=-1)

    def take(self, idx) -> "TriangleGeometry":
        """Sub-stack of triangles ``idx``."""
        return TriangleGeometry(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def triangle_geometry(mesh: Mesh, index: int) -> TriangleGeometry:
    """Geometry of triangle ``index`` of ``mesh``."""
    if not 0 <= index < mesh.n_triangles:
        raise IndexError(f"triangle index {index} out of range")
    return TriangleGeometry.from_vertices(mesh.vertices[mesh.triangles[index]])


# ---------------------------------------------------------------------------
# generators


def _square_grid_vertices(n):
    s = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(s, s)
    return np.stack([x.ravel(), y.ravel()], axis=1)


def _split_square(i, j, n, anti):
    """Two CCW triangles of cell (i, j); ``anti`` selects the \\ diagonal."""
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    if anti:
        return [(v00, v10, v01), (v10, v11, v01)]
    return [(v00, v10, v11), (v00, v11, v01)]


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError(f"number of subdivisions must be a positive integer, got {n}")
    return int(n)


def generate_uniform(n: int) -> Mesh:
    """Unit square cut into n x n squares, each split along the / diagonal."""
    n = _check_n(n)
    tris = [t for j in range(n) for i in range(n) for t in _split_square(i, j, n, False)]
    return Mesh(_square_grid_vertices(n), tris)


def generate_piecewise_uniform(n: int) -> Mesh:
    """Four uniform quadrant blocks with alternating diagonal direction.

    The lower-left and upper-right quadrants use the / diagonal, the other two
    the \\ diagonal, so every edge on the quadrant interfaces separates two
    triangles that do not form a parallelogram.
    """
    n = _check_n(n)
    if n % 2:
        raise ValueError(f"piecewise-uniform grid needs an even n, got {n}")
    half = n // 2
    tris = []
    for j in range(n):
        for i in range(n):
            anti = (i < half) != (j < half)
            tris.extend(_split_square(i, j, n, anti))
    return Mesh(_square_grid_vertices(n), tris)


def generate_perturbed(
    n: int, alpha: float, amplitude: float, seed: int = 0
) -> Mesh:
    """Uniform grid with randomly displaced interior vertices.

    Each interior vertex moves by a vector drawn uniformly from the disk of
    radius ``amplitude * (1/n)**(1 + alpha)``. Boundary vertices stay put. An
    infinite ``alpha`` or zero ``amplitude`` gives :func:`generate_uniform`.

    Raises
    ------
    ValueError
        If the displacement inverts a triangle.
    """
    base = generate_uniform(n)
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    radius = 0.0 if np.isinf(alpha) else amplitude * (1.0 / n) ** (1.0 + alpha)
    rng = np.random.default_rng(seed)
    nv = base.n_vertices
    r = radius * np.sqrt(rng.random(nv))
    phi = 2.0 * np.pi * rng.random(nv)
    shift = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    shift[base.boundary_vertices] = 0.0
    try:
        return Mesh(base.vertices + shift, base.triangles)
    except ValueError as exc:
        raise ValueError(
            f"perturbation amplitude {amplitude} with alpha={alpha} inverts "
            f"triangles on the {n}x{n} grid: {exc}"
        ) from None


def refine_regular(mesh: Mesh) -> Mesh:
    """Red refinement: split each triangle into four through its edge midpoints."""
    V = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    a = mesh.triangles
    m = V + mesh.tri_edges  # m[:, k] is the midpoint of edge k (opposite a_k)
    children = np.stack(
        [
            np.stack([a[:, 0], m[:, 2], m[:, 1]], axis=1),
            np.stack([a[:, 1], m[:, 0], m[:, 2]], axis=1),
            np.stack([a[:, 2], m[:, 1], m[:, 0]], axis=1),
            m,
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh(vertices, children)


# ---------------------------------------------------------------------------
# plain-text mesh files: "V E T", V lines "x y", T lines "i j k"


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_edges} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Parse a mesh file; the edge count in the header is validated."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise ValueError(f"{path}: header must be 'V E T'")
    nv, ne, nt = (int(v) for v in rows[0])
    if len(rows) != 1 + nv + nt:
        raise ValueError(f"{path}: expected {1 + nv + nt} lines, found {len(rows)}")
    vertices = np.array(rows[1 : 1 + nv], dtype=float)
    triangles = np.array(rows[1 + nv :], dtype=np.int64).reshape(nt, 3)
    mesh = Mesh(vertices, triangles)
    if mesh.n_edges != ne:
        raise ValueError(f"{path}: header says {ne} edges, triangles give {mesh.n_edges}")
    return mesh
