"""Classify how close a triangulation is to a parallelogram mesh.

For an interior edge shared by two triangles, the deviation is the largest
length difference between opposite sides of the quadrilateral they form. For
a boundary vertex with boundary edges ``e`` and ``e'`` (triangles ``tau`` and
``tau'``), corresponding edges are compared walking counterclockwise around
each triangle from ``e`` and ``e'``, together with the tangent jump ``|t - t'|``.

Edges and vertices within ``C h^(1+alpha)`` (and ``C h^alpha`` for the tangent)
are regular (E1 / P1); the rest are exceptional (E2 / P2). Across a sequence
of meshes the measure of the E2 region and the root-mean-square regular
deviation (away from the boundary) are fitted against the nominal mesh size
``sqrt(2 * mean area)`` to estimate ``sigma`` and ``alpha``. The maximum
diameter is not used for the fit because the perturbation itself inflates it
on coarse meshes, which biases the slopes low.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh

log = logging.getLogger(__name__)

# deviations below this multiple of h are treated as round-off
ROUNDOFF = 1e-12


def _quads(mesh: Mesh):
    """Vertices (v1, v2, w, z) of the quadrilateral around each interior edge."""
    ie = mesh.interior_edges
    v1, v2 = mesh.edges[ie, 0], mesh.edges[ie, 1]
    w = _third_vertex(mesh, mesh.edge_tris[ie, 0], v1, v2)
    z = _third_vertex(mesh, mesh.edge_tris[ie, 1], v1, v2)
    return v1, v2, w, z


def interior_deviation(mesh: Mesh) -> np.ndarray:
    """Parallelogram deviation of each interior edge, aligned with ``mesh.interior_edges``."""
    v1, v2, w, z = _quads(mesh)
    X = mesh.vertices

    def dist(a, b):
        return np.linalg.norm(X[a] - X[b], axis=1)

    # quadrilateral w-v1-z-v2: (w v1, z v2) and (v1 z, v2 w) are opposite sides
    d1 = np.abs(dist(w, v1) - dist(z, v2))
    d2 = np.abs(dist(v1, z) - dist(v2, w))
    return np.maximum(d1, d2)


def _third_vertex(mesh: Mesh, tris, v1, v2):
    t = mesh.triangles[tris]
    mask = (t != v1[:, None]) & (t != v2[:, None])
    return t[mask]


def boundary_deviation(mesh: Mesh):
    """Deviations at boundary vertices.

    Returns
    -------
    vertices : ndarray (P,)
    lengths : ndarray (P,)
        Largest length difference over the three pairs of corresponding edges.
    tangents : ndarray (P,)
        ``|t - t'|`` for the unit counterclockwise tangents of the two boundary edges.
    """
    out_edge = {}  # vertex -> (triangle, local edge) of the boundary edge leaving it
    in_edge = {}
    for e in mesh.boundary_edges:
        tau = mesh.edge_tris[e, 0]
        k = mesh.edge_local_index(tau, e)
        tri = mesh.triangles[tau]
        start, end = tri[(k + 1) % 3], tri[(k + 2) % 3]
        for d, v in ((out_edge, start), (in_edge, end)):
            if v in d:
                d[v] = None  # more than two boundary edges meet here
            else:
                d[v] = (tau, k)

    lengths = mesh.geometry.lengths
    verts = mesh.boundary_vertices
    dev_len = np.full(len(verts), np.inf)
    dev_tan = np.full(len(verts), np.inf)
    for i, x in enumerate(verts):
        a, b = in_edge.get(x), out_edge.get(x)
        if a is None or b is None:
            log.warning("boundary vertex %d is not a simple boundary point", x)
            continue
        (ta, ka), (tb, kb) = a, b
        la = lengths[ta, (ka + np.arange(3)) % 3]
        lb = lengths[tb, (kb + np.arange(3)) % 3]
        dev_len[i] = np.max(np.abs(la - lb))
        dev_tan[i] = np.linalg.norm(mesh.geometry.tangents[ta, ka] - mesh.geometry.tangents[tb, kb])
    return verts, dev_len, dev_tan


@dataclass
class LevelStructure:
    """Classification of a single mesh."""

    h: float
    interior_edges: np.ndarray
    deviation: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    boundary_vertices: np.ndarray
    boundary_length_deviation: np.ndarray
    boundary_tangent_deviation: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    E2_measure: float
    rms_regular_deviation: float = 0.0
    h_nominal: float = 0.0

    @property
    def kappa(self) -> int:
        return len(self.P2)

    @property
    def max_regular_deviation(self) -> float:
        d = self.deviation[np.isin(self.interior_edges, self.E1)]
        return float(d.max()) if len(d) else 0.0


@dataclass
class MeshStructureReport:
    """Per-level classification plus fitted exponents.

    ``alpha_hat`` and ``sigma_hat`` are None for a single mesh and ``inf``
    when the corresponding quantity vanishes (up to round-off) on every level.
    ``rho`` uses the hypothesised alpha, ``rho_hat`` the fitted one.
    """

    alpha: float
    C: float
    levels: list = field(default_factory=list)
    alpha_hat: float | None = None
    sigma_hat: float | None = None
    alpha_steps: list = field(default_factory=list)
    sigma_steps: list = field(default_factory=list)

    @property
    def rho(self) -> float:
        sigma = self.sigma_hat
        if sigma is None:
            sigma = np.inf if all(len(lv.E2) == 0 for lv in self.levels) else 2.0
        return float(min(1.0, self.alpha, sigma / 2.0))

    @property
    def rho_hat(self) -> float | None:
        if self.alpha_hat is None or self.sigma_hat is None:
            return None
        return float(min(1.0, self.alpha_hat, self.sigma_hat / 2.0))

    def rows(self):
        """One dict per level with the CSV columns."""
        out = []
        for i, lv in enumerate(self.levels):
            out.append({
                "level": i,
                "h": lv.h,
                "|E1|": len(lv.E1),
                "|E2|": len(lv.E2),
                "E2_measure": lv.E2_measure,
                "kappa": lv.kappa,
                "alphahat": self.alpha_steps[i] if i < len(self.alpha_steps) else np.nan,
                "sigmahat": self.sigma_steps[i] if i < len(self.sigma_steps) else np.nan,
                "rho": self.rho,
            })
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        cols = ["level", "h", "|E1|", "|E2|", "E2_measure", "kappa", "alphahat", "sigmahat", "rho"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def classify(mesh: Mesh, alpha: float, C: float = 1.0) -> LevelStructure:
    """E1/E2 and P1/P2 classification of one mesh."""
    if C <= 0:
        raise ValueError("threshold constant C must be positive")
    h = mesh.h
    floor = ROUNDOFF * h
    tol_len = max(C * h ** (1.0 + alpha), floor)
    tol_tan = max(C * h**alpha, floor)

    ie = mesh.interior_edges
    dev = interior_deviation(mesh)
    regular = dev <= tol_len
    E2 = ie[~regular]
    # rate statistic: quads touching the boundary are excluded since boundary
    # vertices are often held fixed, which would bias a fit across levels
    on_bnd = np.zeros(mesh.n_vertices, dtype=bool)
    on_bnd[mesh.boundary_vertices] = True
    away = ~np.any(on_bnd[np.stack(_quads(mesh))], axis=0) & regular
    sample = dev[away] if away.any() else dev[regular]
    rms = float(np.sqrt(np.mean(sample**2))) if len(sample) else 0.0
    t = mesh.edge_tris[E2]
    measure = float(np.sum(mesh.areas[t[:, 0]] + mesh.areas[t[:, 1]])) if len(E2) else 0.0

    bv, blen, btan = boundary_deviation(mesh)
    p_ok = (blen <= tol_len) & (btan <= tol_tan)
    return LevelStructure(
        h=h,
        interior_edges=ie,
        deviation=dev,
        E1=ie[regular],
        E2=E2,
        boundary_vertices=bv,
        boundary_length_deviation=blen,
        boundary_tangent_deviation=btan,
        P1=bv[p_ok],
        P2=bv[~p_ok],
        E2_measure=measure,
        rms_regular_deviation=rms,
        h_nominal=float(np.sqrt(2.0 * mesh.areas.mean())),
    )


def _slopes(h, y, floor):
    """Pairwise and least-squares log-log slopes; inf when y vanishes everywhere."""
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    pos = y > floor
    steps = [np.nan]
    for i in range(1, len(y)):
        if pos[i] and pos[i - 1]:
            steps.append(float(np.log(y[i - 1] / y[i]) / np.log(h[i - 1] / h[i])))
        elif not pos[i] and not pos[i - 1]:
            steps.append(np.inf)
        else:
            steps.append(np.nan)
    if not pos.any():
        return np.inf, steps
    if pos.sum() < 2:
        return np.nan, steps
    slope = np.polyfit(np.log(h[pos]), np.log(y[pos]), 1)[0]
    return float(slope), steps


def analyze_structure(meshes, alpha: float = np.inf, C: float = 1.0) -> MeshStructureReport:
    """Classify one mesh or a refinement sequence and fit (alpha, sigma).

    Parameters
    ----------
    meshes : Mesh or sequence of Mesh
        A sequence should be ordered coarse to fine.
    alpha : float
        Hypothesised exponent used for the thresholds (``inf`` allowed).
    C : float
        Threshold constant.
    """
    if isinstance(meshes, Mesh):
        meshes = [meshes]
    meshes = list(meshes)
    if not meshes:
        raise ValueError("no mesh given")
    report = MeshStructureReport(alpha=float(alpha), C=float(C))
    report.levels = [classify(m, alpha, C) for m in meshes]
    if len(meshes) < 2:
        return report

    h = [lv.h_nominal for lv in report.levels]
    dev = [lv.rms_regular_deviation for lv in report.levels]
    floor = ROUNDOFF * max(h)
    a, a_steps = _slopes(h, dev, floor)
    report.alpha_hat = a - 1.0
    report.alpha_steps = [s - 1.0 for s in a_steps]
    s, s_steps = _slopes(h, [lv.E2_measure for lv in report.levels], 0.0)
    report.sigma_hat = s
    report.sigma_steps = s_steps
    return report
