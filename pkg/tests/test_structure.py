import numpy as np
import pytest

from rtsuperconv.mesh import (
    Mesh,
    generate_perturbed,
    generate_piecewise_uniform,
    generate_uniform,
    refine_regular,
)
from rtsuperconv.structure import analyze_structure, boundary_deviation, classify, interior_deviation


def _family(make, n0=8, levels=4):
    return [make(n0 * 2**k) for k in range(levels)]


def test_uniform_all_regular():
    meshes = _family(generate_uniform)
    rep = analyze_structure(meshes)
    for lv in rep.levels:
        assert len(lv.E2) == 0
        assert lv.kappa == 4  # the corners
        assert lv.E2_measure == 0.0
    assert rep.sigma_hat == np.inf
    assert rep.alpha_hat == np.inf
    assert rep.rho == 1.0


def test_uniform_interior_deviation_zero(uniform8):
    assert np.max(interior_deviation(uniform8)) < 1e-15


def test_corner_deviation():
    m = generate_uniform(4)
    verts, dlen, dtan = boundary_deviation(m)
    corners = np.all(np.isin(m.vertices[verts], [0.0, 1.0]), axis=1)
    np.testing.assert_allclose(dtan[corners], np.sqrt(2))
    np.testing.assert_allclose(dtan[~corners], 0.0, atol=1e-15)
    np.testing.assert_allclose(dlen[~corners], 0.0, atol=1e-15)


def test_piecewise_interfaces_exceptional():
    m = generate_piecewise_uniform(8)
    st = classify(m, np.inf)
    mid = m.edge_midpoints[st.E2]
    # every exceptional edge touches one of the interface lines x = 1/2, y = 1/2
    ends = m.vertices[m.edges[st.E2]]
    on_line = np.any(np.isclose(ends, 0.5), axis=(1, 2))
    assert len(st.E2) > 0 and np.all(on_line)
    assert np.all(np.abs(mid - 0.5).min(axis=1) < 1.0 / 8)
    assert st.kappa == 8


def test_piecewise_sigma_one():
    rep = analyze_structure(_family(generate_piecewise_uniform))
    assert rep.sigma_hat == pytest.approx(1.0, abs=0.05)
    assert rep.rho == pytest.approx(0.5)
    assert rep.rho_hat == pytest.approx(0.5, abs=0.03)
    for lv in rep.levels:
        assert lv.kappa == 8


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_perturbed_alpha_recovered(alpha):
    meshes = [generate_perturbed(8 * 2**k, alpha, 1.0, seed=k) for k in range(4)]
    rep = analyze_structure(meshes, alpha=alpha, C=10.0)
    assert rep.alpha_hat == pytest.approx(alpha, abs=0.1)
    for lv in rep.levels:
        assert len(lv.E2) == 0
    # with C = 1 the tangent threshold separates the four corners
    assert classify(meshes[-1], alpha, 1.0).kappa == 4


def test_smooth_perturbation_all_regular():
    m = generate_perturbed(16, 1.0, 0.25, seed=0)
    st = classify(m, 1.0, C=1.0)
    assert len(st.E2) == 0
    assert st.max_regular_deviation <= (1 / 16) ** 2


def test_single_mesh_report():
    rep = analyze_structure(generate_piecewise_uniform(8), alpha=1.0)
    assert rep.alpha_hat is None and rep.sigma_hat is None
    assert rep.rho == pytest.approx(1.0)
    assert rep.rho_hat is None
    assert analyze_structure(generate_uniform(8), alpha=0.5).rho == 0.5


def test_refined_perturbation_keeps_quads_regular():
    # refinement of any mesh gives parallelogram children around interior child edges
    m = refine_regular(generate_perturbed(4, 0.0, 0.4, seed=1))
    st = classify(m, np.inf)
    assert len(st.E1) > 0


def test_input_checks():
    with pytest.raises(ValueError):
        analyze_structure([])
    with pytest.raises(ValueError):
        classify(generate_uniform(2), 1.0, C=0.0)


def test_vertex_relabelling_invariant():
    m = generate_perturbed(8, 0.5, 1.0, seed=3)
    p = m.permuted(np.random.default_rng(0).permutation(m.n_vertices))
    a, b = classify(m, 0.5), classify(p, 0.5)
    assert (len(a.E1), len(a.E2), a.kappa) == (len(b.E1), len(b.E2), b.kappa)
    np.testing.assert_allclose(np.sort(a.deviation), np.sort(b.deviation), atol=1e-15)
    assert a.E2_measure == pytest.approx(b.E2_measure)


def test_nonsimple_boundary_vertex(caplog):
    # two triangles touching at a single vertex
    m = Mesh([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]], [[0, 1, 2], [0, 3, 4]])
    verts, dlen, _ = boundary_deviation(m)
    assert np.isinf(dlen[list(verts).index(0)])
    assert "not a simple boundary point" in caplog.text


def test_csv(tmp_path):
    rep = analyze_structure(_family(generate_piecewise_uniform, levels=3))
    path = tmp_path / "s.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "level,h,|E1|,|E2|,E2_measure,kappa,alphahat,sigmahat,rho"
    assert len(lines) == 4
    assert lines[1].split(",")[6] == "nan"
    assert float(lines[3].split(",")[7]) == pytest.approx(1.0, abs=0.05)


def test_spec_perturbed_example_alpha_hat():
    meshes = [generate_perturbed(16 * 2**k, 0.5, 0.25, seed=1 + k) for k in range(4)]
    rep = analyze_structure(meshes, alpha=0.5)
    assert rep.alpha_hat == pytest.approx(0.5, abs=0.1)
    assert rep.rho == 0.5


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_max_deviation_slope(alpha):
    """The largest parallelogram deviation decays like h^(1 + alpha)."""
    ns = np.array([16, 32, 64, 128])
    dev = [interior_deviation(generate_perturbed(n, alpha, 0.25, seed=1 + k)).max() for k, n in enumerate(ns)]
    slope = np.polyfit(np.log(1.0 / ns), np.log(dev), 1)[0]
    assert slope == pytest.approx(1.0 + alpha, abs=0.1)
    assert np.max(np.array(dev) / (1.0 / ns) ** (1 + alpha)) <= 0.25 * 4
