import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nodal_bubbles import profiles as pr
from nodal_bubbles.invariants import fd_derivative_errors, sample_points


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_standard_bubble_matches_closed_form(n):
    v = pr.standard_bubble(n)
    r = np.linspace(0.0, 10.0, 50)
    x = np.zeros((50, n))
    x[:, 0] = r
    assert np.allclose(v.value(x), oracles.bubble_value(n, r), rtol=1e-14)


@pytest.mark.parametrize("n", [3, 5])
def test_standard_bubble_solves_flat_equation(n):
    assert pr.flat_residual(pr.standard_bubble(n)) < 1e-12


def test_critical_exponent_and_bad_dimension():
    assert pr.critical_exponent(3) == 6.0
    assert pr.critical_exponent(6) == 3.0
    with pytest.raises(pr.ProfileError):
        pr.critical_exponent(2)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_lambda_matches_exact(n):
    res = pr.lambda_invariant(pr.standard_bubble(n), full_output=True)
    exact = oracles.bubble_lambda(n)
    assert res.value == pytest.approx(exact, rel=1e-10)
    assert res.kelvin == pytest.approx(exact, rel=1e-8)


def test_lambda_n3_is_sqrt3():
    assert pr.lambda_invariant(pr.standard_bubble(3)) == pytest.approx(math.sqrt(3), rel=1e-12)


@pytest.mark.parametrize("n", [3, 5, 6])
def test_functionals_against_beta_function(n):
    which = ("int_V_2star", "int_grad_sq", "int_signed") + (("int_V2",) if n >= 5 else ())
    f = pr.functionals(pr.standard_bubble(n), which=which)
    ps = 2 * n / (n - 2)
    assert f["int_V_2star"]["value"] == pytest.approx(oracles.bubble_power_integral(n, ps), rel=1e-10)
    assert f["int_grad_sq"]["value"] == pytest.approx(f["int_V_2star"]["value"], rel=1e-10)
    assert f["int_signed"]["value"] == pytest.approx(oracles.bubble_signed_integral(n), rel=1e-10)
    if n >= 5:
        assert f["int_V2"]["value"] == pytest.approx(oracles.bubble_power_integral(n, 2), rel=1e-9)


@pytest.mark.parametrize("n", [3, 4])
def test_int_v2_diverges_for_low_dimensions(n):
    from nodal_bubbles import numerics as nm
    with pytest.raises(nm.NonIntegrable):
        pr.functionals(pr.standard_bubble(n), which=("int_V2",))


@pytest.mark.parametrize("n", [3, 5])
def test_kelvin_of_bubble_is_scaled_bubble(n):
    kv = pr.kelvin(pr.standard_bubble(n))
    pts = sample_points(n, 40, seed=1, r_range=(0.02, 30.0))
    ref = pr.StandardBubble(n, 1.0 / (n * (n - 2)))
    assert np.max(np.abs(kv.value(pts) - ref.value(pts))) < 1e-10


def test_kelvin_origin_value_is_lambda():
    v = pr.standard_bubble(5)
    val, err = pr.kelvin_origin_value(v)
    assert val == pytest.approx(oracles.bubble_lambda(5), rel=1e-9)


def test_sign_flip_negates_lambda_and_alpha():
    v = pr.StandardBubble(5, 0.8)
    lam = pr.lambda_invariant(v)
    assert pr.lambda_invariant(-v) == pytest.approx(-lam, rel=1e-12)
    a = pr.alpha_invariant(v).alpha
    b = pr.alpha_invariant(-v).alpha
    assert np.allclose(a, -b, atol=1e-12)


def test_alpha_of_radial_bubble_vanishes():
    res = pr.alpha_invariant(pr.standard_bubble(5))
    assert np.max(np.abs(res.alpha)) < 1e-8


def test_decay_constant_of_unit_bubble_n3():
    c = pr.decay_check(pr.standard_bubble(3))
    # (1+r) B0(r) = (1+r)/sqrt(1+r^2/3) peaks at r = 3 with value 2
    assert c["C_value"] == pytest.approx(2.0, rel=1e-6)


def test_sampled_radial_profile_agrees_with_bubble():
    v = pr.radial_profile_from_ode(3)
    ref = pr.standard_bubble(3)
    r = np.geomspace(1e-2, 100.0, 80)
    x = np.zeros((80, 3))
    x[:, 0] = r
    assert np.max(np.abs(v.value(x) - ref.value(x))) < 1e-8


def test_sampled_profile_roundtrip_is_bitwise():
    v = pr.radial_profile_from_ode(3)
    doc = json.loads(json.dumps(v.to_document()))
    w = pr.profile_from_document(doc)
    assert np.array_equal(w.r, v.r) and np.array_equal(w.v, v.v)
    x = sample_points(3, 20, seed=2)
    assert np.array_equal(w.value(x), v.value(x))


def test_transform_chain_roundtrip():
    v = pr.kelvin(-pr.StandardBubble(5, 0.3).scaled(2.0))
    w = pr.profile_from_document(json.loads(json.dumps(v.to_document())))
    x = sample_points(5, 20, seed=4)
    assert np.array_equal(w.value(x), v.value(x))


def test_unknown_document_kind_rejected():
    with pytest.raises(pr.ProfileError):
        pr.profile_from_document({"kind": "mystery", "n": 3})


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 7), mu=st.floats(0.2, 5.0))
def test_fd_derivatives_of_scaled_bubbles(n, mu):
    v = pr.StandardBubble(n, mu)
    err = fd_derivative_errors(v, sample_points(n, 20, seed=n))
    assert err["gradient"] < 1e-6 and err["hessian"] < 1e-6


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 7), mu=st.floats(0.1, 10.0))
def test_kelvin_involution(n, mu):
    v = pr.StandardBubble(n, mu)
    x = sample_points(n, 10, seed=7, r_range=(0.05, 20.0))
    assert np.max(np.abs(pr.kelvin(pr.kelvin(v)).value(x) - v.value(x))) <= 1e-10 * np.max(np.abs(v.value(x)))


@settings(max_examples=20, deadline=None)
@given(mu=st.floats(0.2, 5.0))
def test_scaling_preserves_critical_norm(mu):
    base = pr.functionals(pr.standard_bubble(5), which=("int_V_2star",))["int_V_2star"]["value"]
    val = pr.functionals(pr.standard_bubble(5).scaled(mu), which=("int_V_2star",))["int_V_2star"]["value"]
    assert val == pytest.approx(base, rel=1e-8)


def test_ding_profile_is_a_solution(ding_profile):
    assert ding_profile.biradial_split() == (2, 3)
    assert ding_profile.metadata["flat_residual"] < 1e-6
    assert np.max(np.abs(pr.alpha_invariant(ding_profile).alpha)) < 1e-6


def test_ding_profile_kelvin_invariant(ding_profile):
    x = sample_points(5, 30, seed=9, split=(2, 3), r_range=(0.2, 5.0))
    kv = pr.kelvin(ding_profile)
    assert np.max(np.abs(kv.value(x) - ding_profile.value(x))) < 1e-8 * np.max(np.abs(ding_profile.value(x)))


def test_ding_fd_derivatives(ding_profile):
    err = fd_derivative_errors(ding_profile, sample_points(5, 100, seed=0, split=(2, 3)))
    assert max(err.values()) < 1e-6


def test_ding_lambda_routes_agree(ding_profile, ding_23_one_node):
    from nodal_bubbles.ding import pullback_lambda
    res = pr.lambda_invariant(ding_profile, full_output=True)
    assert res.value == pytest.approx(pullback_lambda(ding_23_one_node), rel=1e-7)
