import math

import numpy as np
import pytest
from scipy import integrate

from rtsuperconv.mesh import generate_uniform
from rtsuperconv.quadrature import QuadratureRule
from rtsuperconv.solver import SolverError
from rtsuperconv.spaces import CRField, P0Field, interpolate_rt
from rtsuperconv.study import (
    ExperimentAborted,
    ExperimentConfig,
    error_norm,
    fit_order,
    mesh_family,
    run_experiment,
    run_level,
)


def test_fit_order_examples():
    f = fit_order([7.281e-1, 3.683e-1], [1 / 8, 1 / 16])
    assert f.steps[0] == pytest.approx(math.log2(7.281e-1 / 3.683e-1))
    assert fit_order([1.0, 0.5, 0.25], [1.0, 0.5, 0.25]).slope == pytest.approx(1.0)
    assert fit_order([1.0, 1.0], [0.5, 0.25]).last == pytest.approx(0.0)
    assert fit_order([4.0, 1.0, 0.25], [1.0, 0.5, 0.25]).steps == pytest.approx([2.0, 2.0])


def test_fit_order_zero_error():
    f = fit_order([1.0, 0.0, 0.0], [1.0, 0.5, 0.25])
    assert all(math.isnan(s) for s in f.steps)
    assert math.isnan(f.slope)
    with pytest.raises(ValueError):
        fit_order([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_order([1.0, 2.0], [1.0])


def test_error_norm_identical_fields(solution8):
    assert error_norm(solution8.p_h, solution8.p_h) == 0.0
    assert error_norm(solution8.p_h, solution8.p_h, which="div") == 0.0


def test_error_norm_against_adaptive_quadrature(problem):
    """||p - Pi_h p|| on a 2x2 grid checked against scipy's adaptive cubature."""
    m = generate_uniform(2)
    q = interpolate_rt(problem.exact_p, m)
    ours = error_norm(q, problem.exact_p, QuadratureRule.of_degree(12))
    total = 0.0
    for t in range(m.n_triangles):
        a, b, c = m.vertices[m.triangles[t]]

        def integrand(s, r, a=a, b=b, c=c, t=t):
            x = a + r * (b - a) + s * (c - a)
            lam = m.geometry.take([t]).barycentric(x.reshape(1, 1, 2))
            d = q.evaluate_in(np.array([t]), lam)[0, 0] - problem.exact_p(x)
            return d @ d

        jac = abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
        val, _ = integrate.dblquad(integrand, 0, 1, 0, lambda r: 1 - r, epsabs=1e-12, epsrel=1e-10)
        total += jac * val
    assert ours == pytest.approx(math.sqrt(total), rel=1e-6)


def test_error_norm_analytic_and_checks(uniform8):
    one = P0Field(uniform8, np.ones((uniform8.n_triangles, 2)))
    assert error_norm(one) == pytest.approx(math.sqrt(2.0))
    assert error_norm(one, lambda x: np.zeros_like(x)) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(ValueError):
        error_norm(one, P0Field(generate_uniform(2), np.ones((8, 2))))
    with pytest.raises(TypeError):
        error_norm(one, which="div")
    with pytest.raises(ValueError):
        error_norm(one, which="H1")


def test_triangle_inequality(solution8, problem):
    m = solution8.p_h.mesh
    pi = interpolate_rt(problem.exact_p, m)
    lhs = error_norm(solution8.p_h, problem.exact_p)
    rhs = error_norm(pi, problem.exact_p) + error_norm(pi, solution8.p_h)
    assert lhs <= rhs + 1e-14


def test_cr_norm(uniform8):
    v = CRField(uniform8, np.ones(uniform8.n_edges))
    assert error_norm(v) == pytest.approx(1.0)


def test_config_validation():
    for bad in (
        dict(family="hex"),
        dict(problem="stokes"),
        dict(measure="simpson"),
        dict(levels=1),
        dict(n0=0),
        dict(family="piecewise", n0=5),
        dict(amplitude=-1.0),
        dict(b=(1.0,)),
        dict(tol=0.0),
    ):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad).validate()
    assert "family = uniform" in ExperimentConfig().describe()


def test_mesh_family_sizes():
    assert [m.n_triangles for m in mesh_family(ExperimentConfig(n0=2, levels=3))] == [8, 32, 128]
    pert = list(mesh_family(ExperimentConfig(family="perturbed", n0=4, levels=2)))
    assert [m.n_triangles for m in pert] == [32, 128]


def test_run_experiment_outputs(tmp_path):
    cfg = ExperimentConfig(n0=4, levels=3, out=str(tmp_path / "e.csv"), dat=str(tmp_path / "e.dat"))
    seen = []
    rep = run_experiment(cfg, on_level=seen.append)
    assert len(seen) == 3
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == (
        "nu,h,err_p,ord_p,err_superclose,ord_superclose,err_div,ord_div,err_u,ord_u,"
        "err_recovery,ord_recovery,effectivity"
    )
    assert len(lines) == 4
    assert lines[1].split(",")[3] == "nan"
    dat = np.loadtxt(tmp_path / "e.dat")
    np.testing.assert_allclose(dat[:, 0], np.log10(rep.column("h")), atol=1e-6)
    np.testing.assert_allclose(dat[:, 1], np.log10(rep.column("err_p")), atol=1e-6)
    assert "err_superclose" in rep.table()


def test_optional_columns():
    rep = run_experiment(ExperimentConfig(n0=4, levels=2, helmholtz=True))
    assert "err_grad" in rep.rows()[0]
    rep = run_experiment(ExperimentConfig(n0=4, levels=2, problem="cr"))
    assert "err_cr" in rep.rows()[0]
    assert np.all(np.isfinite(rep.column("err_cr")))


def test_effectivity_improves():
    rep = run_experiment(ExperimentConfig(n0=4, levels=4))
    eff = rep.column("effectivity")
    assert np.all(np.diff(np.abs(eff - 1.0)) < 0)


def test_measures_agree_on_flux_error(uniform8):
    a = run_level(uniform8, ExperimentConfig())
    b = run_level(uniform8, ExperimentConfig(measure="midpoint"))
    assert b.err_p == pytest.approx(a.err_p, rel=0.02)
    assert b.err_div == pytest.approx(a.err_div, rel=1e-12)


def test_aborted_experiment_keeps_partial_report(tmp_path):
    cfg = ExperimentConfig(n0=2, levels=2, tol=1e-40, out=str(tmp_path / "a.csv"))
    with pytest.raises(ExperimentAborted) as info:
        run_experiment(cfg)
    assert isinstance(info.value, SolverError)
    assert info.value.report.records == []
