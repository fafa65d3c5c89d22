import math

import numpy as np
import pytest

from modfield.jets import (
    Jet,
    TaylorJet,
    dd_components,
    directional_derivative,
    lift,
)
from modfield.systems import get_system


def test_jet_requires_constant_term():
    with pytest.raises(ValueError):
        Jet([])


def test_jet_product():
    # (1 + t)(2 + 3t) = 2 + 5t + 3t^2, truncated at the smaller order
    a = Jet([1.0, 1.0, 0.0])
    b = Jet([2.0, 3.0, 0.0])
    assert (a * b).coeffs == [2.0, 5.0, 3.0]
    short = Jet([2.0, 3.0])
    assert (a * short).coeffs == [2.0, 5.0]


def test_jet_scalar_mix():
    a = Jet([1.0, 2.0])
    assert (a + 1.0).coeffs == [2.0, 2.0]
    assert (3.0 * a).coeffs == [3.0, 6.0]
    assert (1.0 - a).coeffs == [0.0, -2.0]


def test_jet_division_by_scalar_only():
    a = Jet([1.0, 2.0, -1.0])
    q = a / 4.0
    back = q * 4.0
    assert np.allclose(back.coeffs, a.coeffs)
    with pytest.raises(TypeError, match="scalars"):
        a / Jet([2.0, 1.0, 0.5])
    with pytest.raises(ZeroDivisionError):
        a / 0.0


def test_sin_cos_taylor_coefficients():
    # jet of t -> sin(x + t): coefficients are derivatives / k!
    x = 0.7
    j = Jet([x, 1.0, 0.0, 0.0, 0.0]).sin()
    expect = [math.sin(x), math.cos(x), -math.sin(x) / 2,
              -math.cos(x) / 6, math.sin(x) / 24]
    assert np.allclose(j.coeffs, expect, atol=1e-15)
    j = Jet([x, 1.0, 0.0, 0.0]).cos()
    expect = [math.cos(x), -math.sin(x), -math.cos(x) / 2, math.sin(x) / 6]
    assert np.allclose(j.coeffs, expect, atol=1e-15)


def test_sin_chain_rule():
    # t -> sin(x + 2t + t^2); coefficient 2 is (4 sin' ... ) check via series
    x, b, c = 0.3, 2.0, 1.0
    j = Jet([x, b, c]).sin()
    # d/dt sin(u(t)) = cos(u) u', second coefficient from the product rule
    expect2 = (-math.sin(x) * b * b / 2) + math.cos(x) * c
    assert j.coeffs[1] == pytest.approx(math.cos(x) * b, abs=1e-15)
    assert j.coeffs[2] == pytest.approx(expect2, abs=1e-15)


def test_tanh_taylor_coefficients():
    x = 0.3
    t0 = math.tanh(x)
    j = Jet([x, 1.0, 0.0, 0.0]).tanh()
    d1 = 1 - t0 * t0
    d2 = -2 * t0 * d1
    d3 = -2 * d1 * d1 - 2 * t0 * d2
    assert np.allclose(j.coeffs, [t0, d1, d2 / 2, d3 / 6], atol=1e-14)


def test_array_valued_jets():
    x = np.array([0.1, 0.5, 2.0])
    j = Jet([x, np.ones_like(x)]).sin()
    assert np.allclose(j.coeff(0), np.sin(x))
    assert np.allclose(j.coeff(1), np.cos(x))


def test_taylor_jet_validation():
    with pytest.raises(ValueError):
        TaylorJet(np.zeros(3))
    tj = TaylorJet(np.zeros((3, 2)))
    assert tj.order == 2 and tj.dim == 2


def test_directional_derivative_matches_fd(rng):
    for name in ("pendulum", "rigid_body"):
        field = get_system(name)
        y = rng.uniform(-2, 2, size=(30, field.dim))
        v = rng.standard_normal((30, field.dim))
        dd = directional_derivative(field, y, v)
        eps = 1e-5 * (1.0 + np.abs(y).max())
        fd = (field(y + eps * v) - field(y - eps * v)) / (2 * eps)
        denom = 1.0 + np.abs(fd)
        assert np.max(np.abs(dd - fd) / denom) < 1e-7


def test_directional_derivative_shape_mismatch(pendulum):
    with pytest.raises(ValueError):
        directional_derivative(pendulum, np.zeros(2), np.zeros((2, 2)))


def test_nested_directional_derivative(pendulum):
    """Depth-2 nesting against a hand-derived formula.

    For f = (-sin y2, y1), g := df.f has Jacobian rows
    (-cos y2, y1 sin y2) and (0, -cos y2), so dg.f is
    (sin y2 cos y2 + y1^2 sin y2, -y1 cos y2).
    """
    y = np.array([1.0, 0.7])

    def g(comps):
        return dd_components(pendulum, comps, pendulum.components(comps))

    got = directional_derivative(g, y[None, :], pendulum(y)[None, :])[0]
    y1, y2 = y
    expect = np.array([
        math.sin(y2) * math.cos(y2) + y1 * y1 * math.sin(y2),
        -y1 * math.cos(y2),
    ])
    assert np.max(np.abs(got - expect)) < 1e-13


def test_lift_first_coefficient(pendulum):
    # curve c(t) = y + t f(y); lifted jet must open with (f(y), df.f)
    y = np.array([0.4, -1.1])
    f0 = pendulum(y)
    jet = TaylorJet(np.stack([y, f0]))
    lifted = lift(pendulum, jet)
    assert np.allclose(lifted.coeffs[0], f0)
    dff = directional_derivative(pendulum, y[None, :], f0[None, :])[0]
    assert np.allclose(lifted.coeffs[1], dff)
