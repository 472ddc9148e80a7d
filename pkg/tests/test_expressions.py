import math

import numpy as np
import pytest

import ctxapprox as ca


class TestParseTarget:
    def test_acceptance_target(self):
        f = ca.parse_target("sin(2*pi*x) + 0.5*cos(pi*x)")
        pts = np.linspace(0, 1, 50)[:, None]
        expected = np.sin(2 * np.pi * pts[:, 0]) + 0.5 * np.cos(np.pi * pts[:, 0])
        np.testing.assert_allclose(f(pts), expected, atol=1e-15)

    def test_components_and_operators(self):
        f = ca.parse_target("x1*x2 - x2/2 + relu(x1 - 0.5)")
        pts = np.array([[0.2, 1.0], [0.8, -2.0]])
        expected = (pts[:, 0] * pts[:, 1] - pts[:, 1] / 2
                    + np.maximum(pts[:, 0] - 0.5, 0.0))
        np.testing.assert_allclose(f(pts), expected)

    def test_unary_minus_and_nesting(self):
        f = ca.parse_target("-exp(-(x + 1))")
        pts = np.array([[0.5]])
        assert f(pts)[0] == pytest.approx(-math.exp(-1.5))

    def test_x_is_alias_for_x1(self):
        f = ca.parse_target("x")
        pts = np.array([[3.0, 4.0]])
        assert f(pts)[0] == 3.0

    def test_errors_name_field(self):
        for bad in ("sin(", "x0", "2 ** 3", "foo(3)", "1 + ", "x9"):
            with pytest.raises(ca.ConfigError) as exc:
                f = ca.parse_target(bad)
                f(np.zeros((1, 2)))
            assert exc.value.field == "target.expr"

    def test_scientific_literals(self):
        f = ca.parse_target("1.5e-3 + 2.0e2 * x")
        assert f(np.array([[1.0]]))[0] == pytest.approx(200.0015)
