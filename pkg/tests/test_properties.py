"""Randomized invariants checked with hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rtsuperconv.identities import HIGH_ORDER, commuting_diagram_check, random_polynomial_field
from rtsuperconv.mesh import generate_perturbed
from rtsuperconv.recovery import apply_gh, estimator
from rtsuperconv.spaces import RTField, interpolate_rt
from rtsuperconv.structure import classify
from rtsuperconv.study import error_norm

SETTINGS = settings(max_examples=25, deadline=None)

meshes = st.builds(
    generate_perturbed,
    n=st.integers(2, 6),
    alpha=st.sampled_from([0.0, 0.5, 1.0]),
    amplitude=st.floats(0.0, 0.3),
    seed=st.integers(0, 2**31 - 1),
)


def _field(x):
    return np.stack([np.sin(2 * x[..., 0]) + x[..., 1], np.cos(x[..., 0] * x[..., 1])], axis=-1)


def _relabel(mesh, seed):
    perm = np.random.default_rng(seed).permutation(mesh.n_vertices)
    return mesh.permuted(perm)


@SETTINGS
@given(meshes)
def test_euler_relation(mesh):
    assert mesh.n_vertices - mesh.n_edges + mesh.n_triangles == 1
    assert 3 * mesh.n_triangles == 2 * mesh.n_edges - len(mesh.boundary_edges)
    assert np.isclose(mesh.areas.sum(), 1.0)


@SETTINGS
@given(meshes, st.integers(0, 1000))
def test_norms_invariant_under_relabelling(mesh, seed):
    other = _relabel(mesh, seed)
    a = error_norm(interpolate_rt(_field, mesh), _field)
    b = error_norm(interpolate_rt(_field, other), _field)
    assert np.isclose(a, b, rtol=1e-12, atol=1e-15)


@SETTINGS
@given(meshes, st.integers(0, 1000))
def test_indicators_interior_invariant_under_relabelling(mesh, seed):
    # triangles away from the boundary do not see the boundary extrapolation
    other = _relabel(mesh, seed)
    _, ea = estimator(interpolate_rt(_field, mesh))
    _, eb = estimator(interpolate_rt(_field, other))
    inner = ~np.any(mesh.is_boundary_edge[mesh.tri_edges], axis=1)
    for t in np.flatnonzero(inner):
        nb = mesh.edge_tris[mesh.tri_edges[t]].ravel()
        if np.any(mesh.is_boundary_edge[mesh.tri_edges[nb]]):
            continue
        assert np.isclose(ea[t], eb[t], rtol=1e-10, atol=1e-14)


@SETTINGS
@given(meshes, st.integers(0, 1000))
def test_structure_counts_invariant_under_relabelling(mesh, seed):
    a = classify(mesh, 0.5)
    b = classify(_relabel(mesh, seed), 0.5)
    assert (len(a.E1), len(a.E2), a.kappa) == (len(b.E1), len(b.E2), b.kappa)


@SETTINGS
@given(meshes, st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_recovery_linear(mesh, seed, s, t):
    rng = np.random.default_rng(seed)
    a = RTField(mesh, rng.standard_normal(mesh.n_edges))
    b = RTField(mesh, rng.standard_normal(mesh.n_edges))
    lhs = apply_gh(s * a + t * b).values
    rhs = s * apply_gh(a).values + t * apply_gh(b).values
    assert np.allclose(lhs, rhs, atol=1e-12)


@SETTINGS
@given(meshes, st.integers(0, 2**31 - 1), st.integers(0, 4))
def test_commuting_diagram(mesh, seed, degree):
    q, div = random_polynomial_field(np.random.default_rng(seed), degree)
    assert commuting_diagram_check(q, div, mesh, HIGH_ORDER) < 1e-11


@SETTINGS
@given(meshes, st.integers(0, 2**31 - 1))
def test_divergence_theorem(mesh, seed):
    q = RTField(mesh, np.random.default_rng(seed).standard_normal(mesh.n_edges))
    be = mesh.boundary_edges
    outward = mesh.tri_signs[mesh.edge_tris[be, 0], [mesh.edge_local_index(t, e) for t, e in zip(mesh.edge_tris[be, 0], be)]]
    assert np.isclose(np.sum(mesh.areas * q.divergence()), np.sum(outward * q.dofs[be]), atol=1e-11)
