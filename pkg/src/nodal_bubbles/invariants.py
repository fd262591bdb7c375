"""Property suite run by the `invariants` subcommand.

Every check returns a CheckResult; run_all collects them into a pass/fail table.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import curvature as cv
from . import numerics as nm
from . import profiles as pr

FD_POINTS = 100
FD_REL_TOL = 1e-6
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def row(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} {self.seconds:7.2f}s"


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# finite differences


def sample_points(n: int, count: int = FD_POINTS, seed: int = 0, split: Optional[tuple] = None,
                  r_range=(0.1, 3.0), axis_margin: float = 0.05) -> np.ndarray:
    """Random points with |x| in r_range; for a biradial split both block norms exceed axis_margin."""
    rng = nm.counter_rng(seed, n)
    out = []
    while len(out) < count:
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        x = d * rng.uniform(*r_range)
        if split is not None:
            p = split[0]
            if min(np.linalg.norm(x[:p]), np.linalg.norm(x[p:])) < axis_margin:
                continue
        out.append(x)
    return np.array(out)


def fd_derivative_errors(v: pr.Profile, points: np.ndarray, h: float = FD_STEP) -> dict:
    """Max relative mismatch of gradient vs central differences of value, and Hessian vs
    central differences of gradient, normalised by the largest analytic entry at each point."""
    n = v.n
    g = v.gradient(points)
    H = v.hessian(points)
    eye = np.eye(n) * h
    fd_g = np.empty_like(g)
    fd_H = np.empty_like(H)
    for i in range(n):
        fd_g[:, i] = (v.value(points + eye[i]) - v.value(points - eye[i])) / (2 * h)
        fd_H[:, :, i] = (v.gradient(points + eye[i]) - v.gradient(points - eye[i])) / (2 * h)
    vmag = np.abs(v.value(points))
    gscale = np.maximum(np.max(np.abs(g), axis=1), 1e-3 * vmag)
    hscale = np.maximum(np.max(np.abs(H), axis=(1, 2)), 1e-3 * vmag)
    eg = np.max(np.abs(fd_g - g), axis=1) / gscale
    eh = np.max(np.abs(fd_H - H), axis=(1, 2)) / hscale
    return {"gradient": float(np.max(eg)), "hessian": float(np.max(eh)),
            "hessian_symmetry": float(np.max(np.abs(H - np.swapaxes(H, 1, 2)) / hscale[:, None, None]))}


def check_fd(v: pr.Profile, seed: int = 0, rel_tol: float = FD_REL_TOL):
    pts = sample_points(v.n, FD_POINTS, seed, v.biradial_split())
    err = fd_derivative_errors(v, pts)
    return all(e <= rel_tol for e in err.values()), err


# ---------------------------------------------------------------------------
# quadrature consistency


def check_biradial_vs_radial(n: int, rel_tol: float = 1e-8):
    """A radial integrand integrated as O(p)xO(q)-invariant must match the 1-D radial integral."""
    v = pr.standard_bubble(n)
    ps = pr.critical_exponent(n)
    radial = nm.integrate_radial_rn(lambda r: np.abs(v.ray(r).v) ** ps, n)
    detail = {"radial": radial}
    ok = True
    for p in range(2, n - 1):
        q = n - p
        bi = nm.integrate_biradial(lambda a, b: np.abs(v.plane(a, b, p, q).v) ** ps, p, q)
        rel = abs(bi - radial) / abs(radial)
        detail[f"split_{p}x{q}"] = rel
        ok &= rel <= rel_tol
    return ok, detail


def check_sphere_energy_match(sol, rel_tol: float = 1e-7):
    """Conformal invariance: int_{R^n}|V|^{2*} of the pullback equals the sphere energy."""
    from .ding import pullback
    v = pullback(sol)
    flat = pr.functionals(v, which=("int_V_2star",))["int_V_2star"]["value"]
    rel = abs(flat - sol.energy) / sol.energy
    return rel <= rel_tol, {"flat": flat, "sphere": sol.energy, "rel": rel}


# ---------------------------------------------------------------------------
# determinism


def check_determinism():
    from .ding import shoot
    detail = {}
    spec = nm.DEFAULT_MC.with_(seed=7, rel_tol=1e-2)
    f = lambda x: np.exp(-np.sum(x * x, axis=-1))
    a = nm.montecarlo_rn(f, 3, spec)
    b = nm.montecarlo_rn(f, 3, spec)
    detail["montecarlo"] = bool(a.value == b.value and a.error == b.error)
    s1, s2 = shoot(2.0, 2, 3), shoot(2.0, 2, 3)
    detail["shooting"] = bool(s1.terminal_slope == s2.terminal_slope
                              and np.array_equal(s1.trajectory.y, s2.trajectory.y))
    v = pr.standard_bubble(5)
    detail["quadrature"] = pr.lambda_quadrature(v) == pr.lambda_quadrature(v)
    detail["random_weyl"] = bool(np.array_equal(cv.random_weyl(6, 3).components,
                                                cv.random_weyl(6, 3).components))
    return all(detail.values()), detail


# ---------------------------------------------------------------------------
# tensors


def check_tensor_sweeps(max_dim: int = cv.MAX_DENSE_DIM, tol: float = 1e-12):
    detail = {}
    ok = True
    for n in range(3, max_dim + 1):
        W = cv.random_weyl(n, seed=n)
        scale = max(1.0, float(np.max(np.abs(W.components))))
        worst = max(max(W.symmetry_defects().values()), W.trace_defect()) / scale
        detail[f"random_weyl_{n}"] = worst
        ok &= worst <= tol
        for p in range(2, n - 1):
            P = cv.ProductSphereWeyl(p, n - p).materialize()
            worst = max(max(P.symmetry_defects().values()), P.trace_defect())
            blk = cv.is_block_invariant(P, p, n - p)
            detail[f"product_{p}x{n - p}"] = worst
            ok &= worst <= tol and blk
            Rm, Ric, S = cv.product_sphere_curvature(p, n - p)
            W2 = cv.weyl_from_decomposition(Rm, Ric, S, n)
            diff = float(np.max(np.abs(W2.components - P.components)))
            detail[f"product_{p}x{n - p}_vs_decomposition"] = diff
            ok &= diff <= tol
        Rm, Ric, S = cv.round_sphere_curvature(n)
        round_w = float(np.max(np.abs(cv.weyl_from_decomposition(Rm, Ric, S, n).components)))
        detail[f"round_{n}"] = round_w
        ok &= round_w <= tol
    return ok, detail


# ---------------------------------------------------------------------------
# Kelvin and lambda


def check_kelvin(n: int, rel_tol: float = 1e-6, pointwise_tol: float = 1e-8):
    v = pr.standard_bubble(n)
    kv = pr.kelvin(v)
    f0 = pr.functionals(v, which=("int_V_2star", "int_grad_sq"))
    f1 = pr.functionals(kv, which=("int_V_2star", "int_grad_sq"))
    detail = {}
    for key in f0:
        detail[key] = abs(f0[key]["value"] - f1[key]["value"]) / abs(f0[key]["value"])
    pts = sample_points(n, 50, seed=11, r_range=(0.05, 20.0))
    twice = pr.kelvin(kv)
    detail["involution"] = float(np.max(np.abs(twice.value(pts) - v.value(pts))))
    mu = 1.0 / (n * (n - 2))
    detail["transform_of_bubble"] = float(np.max(np.abs(kv.value(pts) - pr.StandardBubble(n, mu).value(pts))))
    ok = (detail["int_V_2star"] <= rel_tol and detail["int_grad_sq"] <= rel_tol
          and detail["involution"] <= pointwise_tol and detail["transform_of_bubble"] <= 1e-10)
    return ok, detail


def check_lambda(ns=(3, 4, 5, 6, 7), rel_tol: float = 1e-6):
    detail = {}
    ok = True
    for n in ns:
        res = pr.lambda_invariant(pr.standard_bubble(n), full_output=True)
        exact = (n * (n - 2)) ** ((n - 2) / 2.0)
        rel = abs(res.value - exact) / exact
        routes = abs(res.quadrature - res.kelvin) / exact
        detail[str(n)] = {"rel_exact": rel, "rel_routes": routes}
        ok &= rel <= rel_tol and routes <= 1e-5
        neg = pr.lambda_quadrature(-pr.standard_bubble(n))
        ok &= abs(neg + res.value) <= 1e-9 * exact
    return ok, detail


def check_alpha_biradial(v: pr.Profile, tol: float = 1e-6):
    res = pr.alpha_invariant(v)
    mag = float(np.max(np.abs(res.alpha)))
    return mag <= tol, {"max_abs_alpha": mag}


# ---------------------------------------------------------------------------


def default_profiles(ding_solution=None) -> dict:
    """Profiles covering every kind, including transforms."""
    out = {
        "standard_n3": pr.standard_bubble(3),
        "standard_n5_scaled": pr.StandardBubble(5, 0.7),
        "sampled_radial_n3": pr.radial_profile_from_ode(3),
        "kelvin_standard_n5": pr.kelvin(pr.standard_bubble(5)),
        "negated_standard_n6": -pr.standard_bubble(6),
    }
    if ding_solution is not None:
        from .ding import pullback
        d = pullback(ding_solution)
        out["ding_biradial"] = d
        out["ding_scaled"] = d.scaled(2.0)
        out["ding_swapped"] = pr.FactorSwap(d)
    return out


def run_all(ding_solution=None, include_ding: bool = True) -> list:
    """Run the full suite; the Ding profile is built here unless one is supplied."""
    results = []
    if ding_solution is None and include_ding:
        from .ding import solution_with_nodes
        t0 = time.perf_counter()
        try:
            ding_solution = solution_with_nodes(2, 3, 1)
            results.append(CheckResult("ding 1-node solve (2,3)", True,
                                       {"a0": ding_solution.a0}, time.perf_counter() - t0))
        except Exception as exc:
            results.append(CheckResult("ding 1-node solve (2,3)", False, {"error": str(exc)},
                                       time.perf_counter() - t0))
    for name, v in default_profiles(ding_solution).items():
        results.append(_timed(f"fd derivatives: {name}", lambda v=v: check_fd(v)))
    for n in (5, 6, 7):
        results.append(_timed(f"biradial vs radial quadrature n={n}", lambda n=n: check_biradial_vs_radial(n)))
    if ding_solution is not None:
        results.append(_timed("flat vs sphere energy (ding)", lambda: check_sphere_energy_match(ding_solution)))
        from .ding import pullback
        results.append(_timed("alpha vanishes (ding)", lambda: check_alpha_biradial(pullback(ding_solution))))
    results.append(_timed("determinism", check_determinism))
    results.append(_timed("tensor symmetry sweeps n<=8", check_tensor_sweeps))
    for n in (3, 5):
        results.append(_timed(f"kelvin isometry/involution n={n}", lambda n=n: check_kelvin(n)))
    results.append(_timed("lambda consistency", check_lambda))
    return results


def format_table(results: list) -> str:
    lines = [r.row() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
