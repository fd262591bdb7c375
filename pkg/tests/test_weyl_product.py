import numpy as np
import pytest

import oracles
from nodal_bubbles import curvature as cv
from nodal_bubbles import numerics as nm
from nodal_bubbles import profiles as pr
from nodal_bubbles import weyl_product as wp


@pytest.mark.parametrize("n", [5, 6, 7])
def test_radial_bubble_gives_zero(n):
    v = pr.standard_bubble(n)
    for p in range(2, n - 1):
        W = cv.ProductSphereWeyl(p, n - p)
        res = wp.weyl_otimes_b(W, v)
        for val in (res.value_hessian_form, res.value_gradient_form, res.value_reduced):
            assert abs(val) < 1e-8


def test_radial_bubble_zero_for_random_weyl():
    W = cv.random_weyl(6, 5)
    v = pr.StandardBubble(6, 1.3)
    assert abs(wp.weyl_otimes_b_gradient(W, v).value) < 1e-8
    assert abs(wp.weyl_otimes_b_hessian(W, v).value) < 1e-8


def test_zero_tensor_gives_zero(ding_profile):
    Z = np.zeros((5,) * 4)
    assert wp.weyl_otimes_b_gradient(Z, ding_profile).value == 0.0
    assert wp.weyl_otimes_b_hessian(Z, ding_profile).value == 0.0


def test_low_dimension_rejected():
    with pytest.raises(wp.WeylProductError):
        wp.weyl_otimes_b_gradient(np.zeros((4,) * 4), pr.standard_bubble(4))


def test_dimension_mismatch_rejected():
    with pytest.raises(wp.WeylProductError):
        wp.weyl_otimes_b_gradient(cv.ProductSphereWeyl(3, 3), pr.standard_bubble(5))


def test_non_antisymmetric_input_is_caught(ding_profile):
    A = np.random.default_rng(0).standard_normal((5,) * 4)
    with pytest.raises(wp.WeylProductError):
        wp.weyl_otimes_b_gradient(A, ding_profile)


def test_pure_groups_vanish_for_any_curvature_tensor():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 5, 5))
    K = wp.contraction_constants(cv.kulkarni_nomizu(a + a.T, b + b.T), 2, 3)
    assert K.pure_factor_groups < 1e-12


def test_pure_factor_groups_vanish_for_weyl_tensors():
    for seed in range(5):
        K = wp.contraction_constants(cv.random_weyl(5, seed), 2, 3)
        assert K.pure_factor_groups < 1e-12


def test_moment_tensors_match_sampling():
    A1, A2, B11, B12, B22 = wp.moment_tensors(2, 3)
    rng = np.random.default_rng(0)
    r1, r2 = 0.7, 1.3
    a = rng.standard_normal((200000, 2))
    b = rng.standard_normal((200000, 3))
    x = np.concatenate([r1 * a / np.linalg.norm(a, axis=1, keepdims=True),
                        r2 * b / np.linalg.norm(b, axis=1, keepdims=True)], axis=1)
    second = np.einsum("ni,nj->ij", x, x) / len(x)
    assert np.allclose(second, r1 ** 2 * A1 + r2 ** 2 * A2, atol=1e-2)
    fourth = np.einsum("ni,nj,nk,nl->ijkl", x, x, x, x) / len(x)
    assert np.allclose(fourth, r1 ** 4 * B11 + r1 ** 2 * r2 ** 2 * B12 + r2 ** 4 * B22, atol=2e-2)


def test_ding_negative_and_routes_agree(ding_profile):
    res = wp.weyl_otimes_b(cv.ProductSphereWeyl(2, 3), ding_profile)
    assert res.value_reduced < 0
    vals = [res.value_hessian_form, res.value_gradient_form, res.value_reduced]
    for a in vals:
        for b in vals:
            assert abs(a - b) <= 1e-3 * abs(b)
    assert res.agreement_report["all_ok"]


@pytest.mark.parametrize("tensor", ["product", "random"])
def test_against_orbit_design_oracle(ding_profile, ding_23_one_node, tensor):
    W = cv.ProductSphereWeyl(2, 3).materialize() if tensor == "product" else cv.random_weyl(5, 1)
    ref = oracles.weyl_gradient_form_orbit_design(W.components, ding_profile, ding_23_one_node.energy)
    assert wp.weyl_otimes_b_gradient(W, ding_profile).value == pytest.approx(ref, rel=1e-6)
    assert wp.weyl_otimes_b_hessian(W, ding_profile).value == pytest.approx(ref, rel=1e-6)


def test_reduced_form_against_scipy(ding_profile, ding_23_one_node):
    W = cv.ProductSphereWeyl(2, 3)
    integral = oracles.reduced_weyl_form_scipy(ding_profile, 2, 3)
    C = 4 * 5 / (3 * 9) / ding_23_one_node.energy
    assert wp.weyl_otimes_b_reduced(W, ding_profile).value == pytest.approx(-C * W.C3 * integral, rel=1e-6)


@pytest.mark.parametrize("mu", [0.5, 2.0])
def test_scaling_covariance(ding_profile, mu):
    W = cv.ProductSphereWeyl(2, 3)
    base = wp.weyl_otimes_b_gradient(W, ding_profile).value
    scaled = wp.weyl_otimes_b_gradient(W, ding_profile.scaled(mu)).value
    assert scaled == pytest.approx(mu ** 2 * base, rel=1e-5)


def test_sign_and_swap_invariance(ding_profile):
    base = wp.weyl_otimes_b_gradient(cv.ProductSphereWeyl(2, 3), ding_profile).value
    assert wp.weyl_otimes_b_gradient(cv.ProductSphereWeyl(2, 3), -ding_profile).value == pytest.approx(base, rel=1e-12)
    swapped = pr.FactorSwap(ding_profile)
    assert wp.weyl_otimes_b_gradient(cv.ProductSphereWeyl(3, 2), swapped).value == pytest.approx(base, rel=1e-8)


def test_reduced_requires_matching_split(ding_profile):
    with pytest.raises(wp.WeylProductError):
        wp.weyl_otimes_b_reduced(cv.ProductSphereWeyl(3, 2), ding_profile)


def test_montecarlo_reproducible_and_guarded():
    spec = nm.DEFAULT_MC.with_(seed=1, rel_tol=5e-2, max_evals=400_000)
    v = pr.standard_bubble(5)
    a = wp.weyl_otimes_b_montecarlo(cv.ProductSphereWeyl(2, 3), v, spec)
    b = wp.weyl_otimes_b_montecarlo(cv.ProductSphereWeyl(2, 3), v, spec)
    assert a.value == b.value
    with pytest.raises(wp.WeylProductError):
        wp.weyl_otimes_b_montecarlo(cv.ProductSphereWeyl(3, 4), pr.standard_bubble(7), spec)
