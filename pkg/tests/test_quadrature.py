from math import factorial

import numpy as np
import pytest

from rtsuperconv.quadrature import QuadratureRule, edge_midpoint_rule, edge_rule, triangle_rule


def _reference_moment(i, j):
    """Integral of x^i y^j over the reference triangle divided by its area 1/2."""
    return 2.0 * factorial(i) * factorial(j) / factorial(i + j + 2)


def _triangle_monomials(rule, degree):
    x, y = rule.bary[:, 1], rule.bary[:, 2]
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            yield i, j, rule.weights @ (x**i * y**j)


@pytest.mark.parametrize("degree", [1, 2, 5, 7, 10, 20])
def test_triangle_rule_exactness(degree):
    rule = triangle_rule(degree)
    assert rule.degree >= degree
    assert rule.weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(rule.bary.sum(axis=1), 1.0)
    for i, j, val in _triangle_monomials(rule, rule.degree):
        assert val == pytest.approx(_reference_moment(i, j), rel=1e-12, abs=1e-15)


def test_default_rule_not_exact_beyond_degree():
    rule = triangle_rule(5)
    errs = [abs(val - _reference_moment(i, j)) for i, j, val in _triangle_monomials(rule, 6)]
    assert max(errs) > 1e-8


def test_edge_midpoint_rule_degree_two():
    rule = edge_midpoint_rule()
    for i, j, val in _triangle_monomials(rule, 2):
        assert val == pytest.approx(_reference_moment(i, j), abs=1e-15)
    x, y = rule.bary[:, 1], rule.bary[:, 2]
    assert rule.weights @ x**3 != pytest.approx(_reference_moment(3, 0))


@pytest.mark.parametrize("degree", [1, 3, 7, 21])
def test_edge_rule_exactness(degree):
    rule = edge_rule(degree)
    assert rule.degree >= degree
    for p in range(rule.degree + 1):
        assert rule.weights @ rule.points**p == pytest.approx(1.0 / (p + 1), rel=1e-13)


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        triangle_rule(-1)


def test_quadrature_pairs():
    q = QuadratureRule.default()
    assert (q.triangle.degree, q.edge.degree) == (5, 7)
    m = QuadratureRule.midpoint()
    assert (m.triangle.degree, m.edge.degree, len(m.edge.points)) == (2, 1, 1)
    assert m.edge.points[0] == 0.5
