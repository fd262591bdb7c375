"""The scalar Weyl(x0) (x) B contracting a Weyl tensor with moments of a bubble profile.

    hessian form:   C_{n,V} W_{abcd} int x^b x^d d_ac V ((n-2)/2 V + x.grad V) dx
    gradient form:  C_{n,V} W_{abcd} int x^b x^d d_a V d_c V dx
    C_{n,V} = 4n / (3 (n-2)^2) / int |V|^{2*}

For an O(p)xO(q)-invariant V the integrand is averaged over the orbits at fixed
(|x'|, |x''|).  Derivatives of V are then polynomial in x with coefficients
depending on (r1, r2) only, so the orbit average is a contraction of W with the
second and fourth moment tensors of the product of spheres.  This works for
any algebraic Weyl tensor, not only block-invariant ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm
from .curvature import AlgebraicCurvatureTensor, ProductSphereWeyl
from .profiles import Profile, ProfileError, critical_exponent, profile_integral

VANISHING_TOL = 1e-10


class WeylProductError(ValueError):
    pass


def _components(W):
    if isinstance(W, ProductSphereWeyl):
        W = W.materialize()
    if isinstance(W, AlgebraicCurvatureTensor):
        return W.components
    return np.asarray(W, float)


def _check(W, v: Profile):
    A = _components(W)
    n = v.n
    if n <= 4:
        raise WeylProductError(f"Weyl (x) B is only defined for n >= 5 (got n = {n})")
    if A.shape != (n,) * 4:
        raise WeylProductError(f"tensor dimension {A.shape[0]} does not match profile dimension {n}")
    return A


def prefactor(v: Profile, spec: Optional[nm.QuadratureSpec] = None):
    """(C_{n,V}, int |V|^{2*}, error of the integral)."""
    n = v.n
    ps = critical_exponent(n)
    res = profile_integral(v, lambda P: np.abs(P.v) ** ps, spec, full_output=True)
    return 4.0 * n / (3.0 * (n - 2) ** 2) / res.value, res.value, res.error


def _split_for(v: Profile):
    split = v.biradial_split()
    if split is not None:
        return split
    if v.is_radial():
        return 2, v.n - 2
    return None


def moment_tensors(p: int, q: int):
    """Orbit moments of x over S^{p-1}(r1) x S^{q-1}(r2).

    E[x_i x_j] = r1^2 A1 + r2^2 A2 and
    E[x_i x_j x_k x_l] = r1^4 B11 + r1^2 r2^2 B12 + r2^4 B22.
    """
    n = p + q
    A1 = np.zeros((n, n))
    A2 = np.zeros((n, n))
    A1[:p, :p] = np.eye(p) / p
    A2[p:, p:] = np.eye(q) / q

    def iso(A, d):
        # (d_ij d_kl + d_ik d_jl + d_il d_jk) / (d (d+2)) restricted to one block
        D = A * d
        return (np.einsum("ij,kl->ijkl", D, D) + np.einsum("ik,jl->ijkl", D, D)
                + np.einsum("il,jk->ijkl", D, D)) / (d * (d + 2.0))

    B11 = iso(A1, p)
    B22 = iso(A2, q)
    B12 = np.zeros((n,) * 4)
    for X, Y in ((A1, A2), (A2, A1)):
        B12 += (np.einsum("ij,kl->ijkl", X, Y) + np.einsum("ik,jl->ijkl", X, Y)
                + np.einsum("il,jk->ijkl", X, Y))
    return A1, A2, B11, B12, B22


@dataclass
class ContractionConstants:
    """W contracted with orbit moments, grouped by the blocks of the index pair (a, c).

    grad[part][pair] multiplies G_a G_c with G = d1V/r1 on the first factor and
    d2V/r2 on the second; part is "11", "12" or "22" (the r-power r1^4, r1^2 r2^2,
    r2^4) and pair is "PP", "PQ" (both orders) or "QQ".  trace[part][block]
    are the contractions W_{abad} A_part_{bd} for a in block.
    """
    grad: dict
    trace: dict

    @property
    def pure_factor_groups(self) -> float:
        """Largest |constant| of the r1^4 and r2^4 groups.

        They vanish for any tensor antisymmetric in its first index pair, since the
        quartic moments of a single factor are fully symmetric.
        """
        return max(abs(c) for part in ("11", "22") for c in self.grad[part].values())


def contraction_constants(W, p: int, q: int) -> ContractionConstants:
    A = _components(W)
    n = p + q
    A1, A2, B11, B12, B22 = moment_tensors(p, q)
    inP = np.arange(n) < p
    masks = {"PP": np.outer(inP, inP), "PQ": np.outer(inP, ~inP) | np.outer(~inP, inP),
             "QQ": np.outer(~inP, ~inP)}
    grad = {}
    for part, B in (("11", B11), ("12", B12), ("22", B22)):
        # sum_{abcd} W_abcd B_abcd mask(a, c)
        WB = np.einsum("abcd,abcd->ac", A, B)
        grad[part] = {k: float(np.sum(WB[m])) for k, m in masks.items()}
    trace = {}
    for part, M in (("1", A1), ("2", A2)):
        Wt = np.einsum("abad,bd->a", A, M)
        trace[part] = {"P": float(np.sum(Wt[inP])), "Q": float(np.sum(Wt[~inP]))}
    return ContractionConstants(grad, trace)


def _integrate(v, p, q, integrand, spec, bound=None):
    """2-D quadrature of integrand(r1, r2, plane).

    ``bound`` dominates |integrand| pointwise; its integral sets the absolute target,
    so integrands that cancel to zero (radial profiles) stop at a scale-aware floor.
    """
    spec = spec or nm.DEFAULT_2D
    if bound is not None:
        loose = spec.with_(rel_tol=max(spec.rel_tol, 1e-4))
        scale = nm.integrate_biradial(lambda r1, r2: bound(r1, r2, v.plane(r1, r2, p, q)),
                                      p, q, loose)
        spec = spec.with_(abs_tol=max(spec.abs_tol, 1e-3 * spec.rel_tol * abs(scale)))
    return nm.integrate_biradial(lambda r1, r2: integrand(r1, r2, v.plane(r1, r2, p, q)),
                                 p, q, spec, full_output=True)


def _assert_vanishing(K: ContractionConstants, A):
    scale = max(1.0, float(np.max(np.abs(A))))
    if K.pure_factor_groups > VANISHING_TOL * scale:
        raise WeylProductError(
            f"pure-factor contraction groups do not vanish ({K.pure_factor_groups:.3e}); "
            "input lacks the curvature antisymmetries")


@dataclass
class FormValue:
    value: float
    error: float
    route: str
    meta: dict = field(default_factory=dict)


def weyl_otimes_b_gradient(W, v: Profile, spec=None, mc_spec=None) -> FormValue:
    """Gradient form; orbit-averaged 2-D quadrature, or Monte Carlo for profiles without symmetry."""
    A = _check(W, v)
    split = _split_for(v)
    if split is None:
        return weyl_otimes_b_montecarlo(W, v, mc_spec, form="gradient")
    p, q = split
    K = contraction_constants(A, p, q)
    _assert_vanishing(K, A)
    g11, g12, g22 = K.grad["11"], K.grad["12"], K.grad["22"]

    def integrand(r1, r2, P):
        a, b = P.v1r, P.v2r
        s1, s2 = r1 * r1, r2 * r2
        out = s1 * s2 * (g12["PP"] * a * a + g12["PQ"] * a * b + g12["QQ"] * b * b)
        out = out + s1 * s1 * (g11["PP"] * a * a + g11["PQ"] * a * b + g11["QQ"] * b * b)
        out = out + s2 * s2 * (g22["PP"] * a * a + g22["PQ"] * a * b + g22["QQ"] * b * b)
        return out

    wmax = float(np.max(np.abs(A)))

    def bound(r1, r2, P):
        return wmax * (r1 * r1 + r2 * r2) * (P.v1 ** 2 + P.v2 ** 2)

    C, I2s, I2s_err = prefactor(v, spec)
    res = _integrate(v, p, q, integrand, spec, bound)
    err = abs(C) * res.error + abs(C * res.value) * I2s_err / I2s
    return FormValue(C * res.value, err, "orbit-2d",
                     {"pure_factor_groups": K.pure_factor_groups, "evals": res.evals,
                      "prefactor": C, "int_V_2star": I2s})


def weyl_otimes_b_hessian(W, v: Profile, spec=None, mc_spec=None) -> FormValue:
    """Hessian form; orbit-averaged 2-D quadrature, or Monte Carlo without symmetry."""
    A = _check(W, v)
    split = _split_for(v)
    if split is None:
        return weyl_otimes_b_montecarlo(W, v, mc_spec, form="hessian")
    p, q = split
    K = contraction_constants(A, p, q)
    _assert_vanishing(K, A)
    g11, g12, g22 = K.grad["11"], K.grad["12"], K.grad["22"]
    t1, t2 = K.trace["1"], K.trace["2"]
    k = (v.n - 2) / 2.0

    def integrand(r1, r2, P):
        s1, s2 = r1 * r1, r2 * r2
        z = k * P.v + r1 * P.v1 + r2 * P.v2
        # delta_ac part of the Hessian against second moments
        tr = s1 * (t1["P"] * P.v1r + t1["Q"] * P.v2r) + s2 * (t2["P"] * P.v1r + t2["Q"] * P.v2r)
        # x_a x_c part against fourth moments, divisions by r1^2, r1 r2, r2^2 cancelled
        d1, d2 = P.v11 - P.v1r, P.v22 - P.v2r
        quart = (g11["PP"] * s1 * d1 + g12["PP"] * s2 * d1 + g12["PQ"] * r1 * r2 * P.v12
                 + g12["QQ"] * s1 * d2 + g22["QQ"] * s2 * d2)
        return (tr + quart) * z

    wmax = float(np.max(np.abs(A)))

    def bound(r1, r2, P):
        hess = np.abs(P.v11) + 2 * np.abs(P.v12) + np.abs(P.v22) + (v.n - 2) * (np.abs(P.v1r) + np.abs(P.v2r))
        z = np.abs(k * P.v) + r1 * np.abs(P.v1) + r2 * np.abs(P.v2)
        return wmax * (r1 * r1 + r2 * r2) * hess * z

    C, I2s, I2s_err = prefactor(v, spec)
    res = _integrate(v, p, q, integrand, spec, bound)
    err = abs(C) * res.error + abs(C * res.value) * I2s_err / I2s
    return FormValue(C * res.value, err, "orbit-2d",
                     {"pure_factor_groups": K.pure_factor_groups, "evals": res.evals,
                      "prefactor": C, "int_V_2star": I2s})


def weyl_otimes_b_reduced(psw: ProductSphereWeyl, v: Profile, spec=None) -> FormValue:
    """-C_{n,V} C3 int (r1 d2V - r2 d1V)^2 dx for the product-sphere Weyl tensor."""
    if not isinstance(psw, ProductSphereWeyl):
        raise WeylProductError("the reduced form needs a product-sphere Weyl tensor")
    if v.n <= 4:
        raise WeylProductError(f"Weyl (x) B is only defined for n >= 5 (got n = {v.n})")
    split = _split_for(v)
    if v.n != psw.n:
        raise WeylProductError("dimension mismatch between tensor and profile")
    if split is None or (not v.is_radial() and split != (psw.p, psw.q)):
        raise WeylProductError(
            f"profile symmetry {v.symmetry} does not match the split ({psw.p}, {psw.q})")
    p, q = psw.p, psw.q

    def integrand(r1, r2, P):
        return (r1 * P.v2 - r2 * P.v1) ** 2

    C, I2s, I2s_err = prefactor(v, spec)
    res = _integrate(v, p, q, integrand, spec)
    val = -C * psw.C3 * res.value
    err = abs(C * psw.C3) * res.error + abs(val) * I2s_err / I2s
    return FormValue(val, err, "reduced", {"C3": psw.C3, "prefactor": C, "int_V_2star": I2s})


def weyl_otimes_b_montecarlo(W, v: Profile, spec: Optional[nm.QuadratureSpec] = None,
                             form: str = "gradient", norm_spec=None) -> FormValue:
    """Plain Monte Carlo over R^n of the full Cartesian contraction (n <= 6)."""
    A = _check(W, v)
    n = v.n
    if n > 6:
        raise WeylProductError("Monte Carlo route is limited to n <= 6")
    spec = spec or nm.DEFAULT_MC
    k = (n - 2) / 2.0

    if form == "gradient":
        def f(x):
            g = v.gradient(x)
            return np.einsum("abcd,na,nb,nc,nd->n", A, g, x, g, x, optimize=True)
    elif form == "hessian":
        def f(x):
            g = v.gradient(x)
            H = v.hessian(x)
            z = k * v.value(x) + np.sum(x * g, axis=-1)
            return np.einsum("abcd,nb,nd,nac->n", A, x, x, H, optimize=True) * z
    else:
        raise WeylProductError(f"unknown form {form!r}")

    res = nm.montecarlo_rn(f, n, spec)
    if v.biradial_split() is not None or v.is_radial():
        C, I2s, _ = prefactor(v, norm_spec)
    else:
        ps = critical_exponent(n)
        nres = nm.montecarlo_rn(lambda x: np.abs(v.value(x)) ** ps, n, spec)
        I2s = nres.value
        C = 4.0 * n / (3.0 * (n - 2) ** 2) / I2s
    return FormValue(C * res.value, abs(C) * res.meta["stderr"], "montecarlo",
                     {"stderr": abs(C) * res.meta["stderr"], "evals": res.evals, "seed": spec.seed,
                      "converged": res.meta["converged"], "form": form})


@dataclass
class WeylProductResult:
    value_hessian_form: float
    value_gradient_form: float
    value_reduced: Optional[float]
    value_montecarlo: Optional[float]
    montecarlo_stderr: Optional[float]
    prefactor: float
    errors: dict
    agreement_report: dict

    @property
    def value(self) -> float:
        return self.value_gradient_form

    def to_document(self) -> dict:
        return {"schema_version": 1, "type": "weyl-product-result",
                "value_hessian_form": self.value_hessian_form,
                "value_gradient_form": self.value_gradient_form,
                "value_reduced": self.value_reduced,
                "value_montecarlo": self.value_montecarlo,
                "montecarlo_stderr": self.montecarlo_stderr,
                "prefactor": self.prefactor, "errors": self.errors,
                "agreement_report": self.agreement_report}


def _rel(a, b):
    s = max(abs(a), abs(b))
    return 0.0 if s == 0 else abs(a - b) / s


def weyl_otimes_b(W, v: Profile, methods=("hessian", "gradient", "reduced"), spec=None,
                  mc_spec=None, rel_agreement: float = 1e-3,
                  abs_floor: float = 1e-8) -> WeylProductResult:
    """Evaluate all requested routes and report their mutual agreement."""
    methods = tuple(methods)
    if "all" in methods:
        methods = ("hessian", "gradient", "reduced", "montecarlo")
    h = weyl_otimes_b_hessian(W, v, spec, mc_spec)
    g = weyl_otimes_b_gradient(W, v, spec, mc_spec)
    red = mc = None
    psw = W if isinstance(W, ProductSphereWeyl) else None
    if "reduced" in methods and psw is not None:
        red = weyl_otimes_b_reduced(psw, v, spec)
    if "montecarlo" in methods:
        mc = weyl_otimes_b_montecarlo(W, v, mc_spec)
    report = {}
    combined = h.error + g.error
    report["hessian_vs_gradient"] = {
        "abs_diff": abs(h.value - g.value), "rel_diff": _rel(h.value, g.value),
        "ok": bool(abs(h.value - g.value) <= max(10 * combined, rel_agreement * max(abs(h.value), abs(g.value)), abs_floor))}
    if red is not None:
        for name, other in (("reduced_vs_gradient", g), ("reduced_vs_hessian", h)):
            d = abs(red.value - other.value)
            report[name] = {"abs_diff": d, "rel_diff": _rel(red.value, other.value),
                            "ok": bool(d <= max(rel_agreement * max(abs(red.value), abs(other.value)), abs_floor))}
        report["reduced_nonpositive"] = bool(red.value <= abs_floor)
    if mc is not None:
        ref = red.value if red is not None else g.value
        d = abs(mc.value - ref)
        report["montecarlo_vs_quadrature"] = {"abs_diff": d, "stderr": mc.meta["stderr"],
                                              "ok": bool(d <= 3 * mc.meta["stderr"] + abs_floor)}
    report["all_ok"] = all(x["ok"] if isinstance(x, dict) else x for x in report.values())
    errors = {"hessian": h.error, "gradient": g.error}
    if red is not None:
        errors["reduced"] = red.error
    return WeylProductResult(h.value, g.value, None if red is None else red.value,
                             None if mc is None else mc.value,
                             None if mc is None else mc.meta["stderr"],
                             h.meta.get("prefactor", float("nan")), errors, report)
