import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nodal_bubbles import green_mass as gm


def test_mass_vanishes_at_three_quarters():
    assert gm.mass_closed_form(0.75).mass == 0.0
    assert abs(gm.mass_ode(0.75).mass) < 1e-6


def test_mass_at_one_half():
    # mpmath value; the commonly quoted 0.042849 is off in the fifth digit
    ref = oracles.green_mass(0.5)
    assert ref == pytest.approx(0.0428338, abs=1e-7)
    assert gm.mass_closed_form(0.5).mass == pytest.approx(ref, rel=1e-13)
    assert gm.mass_ode(0.5).mass == pytest.approx(ref, abs=1e-8)


def test_mass_at_one_is_degenerate_branch():
    m = gm.mass_closed_form(1.0)
    assert m.mass == pytest.approx(-1 / (4 * math.pi ** 2), rel=1e-15)
    assert m.meta["branch"] == "degenerate"
    assert gm.mass_ode(1.0).mass == pytest.approx(m.mass, abs=1e-8)


@pytest.mark.parametrize("h0", [0.1, 0.3, 0.9, 1.5, 2.5, 4.0])
def test_closed_form_against_limit_oracle(h0):
    assert gm.mass_closed_form(h0).mass == pytest.approx(oracles.green_mass_by_limit(h0), rel=1e-10)


@pytest.mark.parametrize("h0", [0.2, 0.6, 1.2, 2.0])
def test_ode_route_agrees(h0):
    res = gm.mass_ode(h0)
    assert res.converged
    assert res.mass == pytest.approx(gm.mass_closed_form(h0).mass, abs=1e-8)


def test_green_function_expansion():
    th = np.array([1e-4, 1e-3])
    sing, reg = gm.green_eval(0.5, th, split=True)
    # G - 1/(4 pi theta) = m + O(theta)
    assert np.all(np.abs(reg - gm.mass_closed_form(0.5).mass) < 1e-2 * th)


def test_green_function_solves_radial_equation():
    h0 = 0.4
    th = np.linspace(0.3, 2.8, 11)
    e = 1e-4
    G = lambda t: gm.green_eval(h0, t)
    d1 = (G(th + e) - G(th - e)) / (2 * e)
    d2 = (G(th + e) - 2 * G(th) + G(th - e)) / e ** 2
    assert np.max(np.abs(-d2 - 2 / np.tan(th) * d1 + h0 * G(th))) < 1e-6


def test_noncoercive_rejected():
    for h0 in (0.0, -0.5):
        with pytest.raises(gm.NonCoercive):
            gm.mass_closed_form(h0)
        with pytest.raises(gm.NonCoercive):
            gm.mass_ode(h0)


def test_sweep_brackets_sign_change():
    rows = gm.mass_sweep(np.linspace(0.1, 2.0, 20))
    signs = [(a, b) for (a, ma), (b, mb) in zip(rows, rows[1:]) if ma * mb < 0]
    assert len(signs) == 1 and signs[0][0] < 0.75 < signs[0][1]


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 2.99), st.floats(0.01, 2.99))
def test_mass_strictly_decreasing(a, b):
    if abs(a - b) < 1e-6:
        return
    lo, hi = min(a, b), max(a, b)
    assert gm.mass_closed_form(lo).mass > gm.mass_closed_form(hi).mass


def test_both_methods():
    out = gm.mass(0.5, "both")
    assert set(out) == {"closed_form", "ode"}
    with pytest.raises(ValueError):
        gm.mass(0.5, "magic")
