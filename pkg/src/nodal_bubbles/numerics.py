"""Shared numeric kernel: adaptive quadrature, ODE integration, root finding, Monte Carlo.

All routines are pure functions of their inputs.  Integrands are expected to be
vectorised: they receive numpy arrays and return arrays of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sp_integrate
from scipy import optimize as _sp_optimize
from scipy.special import gammaln


class NumericsError(RuntimeError):
    """Base class for numerical failures (non-convergence, divergence, ...)."""


class BudgetExhausted(NumericsError):
    pass


class NonIntegrable(NumericsError):
    pass


class NoSignChange(NumericsError, ValueError):
    pass


# Gauss-Kronrod 7/15 (QUADPACK qk15), nodes on [-1, 1].
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG7 = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss weights padded with zeros at the pure Kronrod nodes.
_wg_half = np.zeros(8)
_wg_half[1::2] = _WG7
G_WEIGHTS = np.concatenate([_wg_half[:-1], _wg_half[::-1]])
#: exact polynomial degree of the 15-point Kronrod rule
KRONROD_DEGREE = 22


def sphere_area(k: int) -> float:
    """Area of the unit sphere S^k in R^{k+1}: 2 pi^{(k+1)/2} / Gamma((k+1)/2)."""
    if k < 0:
        raise ValueError("sphere dimension must be >= 0")
    m = (k + 1) / 2.0
    return float(2.0 * math.exp(m * math.log(math.pi) - gammaln(m)))


@dataclass(frozen=True)
class QuadratureSpec:
    rule: str = "adaptive-1d"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_evals: int = 4_000_000
    seed: int = 0

    def __post_init__(self):
        if self.rule not in ("adaptive-1d", "tensor-2d", "compactified-2d", "montecarlo"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")

    def with_(self, **kw) -> "QuadratureSpec":
        return replace(self, **kw)


DEFAULT_1D = QuadratureSpec()
DEFAULT_2D = QuadratureSpec(rule="compactified-2d", rel_tol=1e-8, abs_tol=1e-14)
DEFAULT_MC = QuadratureSpec(rule="montecarlo", rel_tol=1e-2, abs_tol=1e-14, max_evals=4_000_000)


@dataclass(frozen=True)
class OdeSpec:
    method: str = "RK45"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    endpoint_series_radius: float = 1e-2
    blowup_cap: float = 1e12
    max_step: float = np.inf

    def with_(self, **kw) -> "OdeSpec":
        return replace(self, **kw)


@dataclass
class QuadResult:
    value: float
    error: float
    evals: int
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _fsum(a: np.ndarray) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel().tolist())


# ---------------------------------------------------------------------------
# 1-D adaptive Gauss-Kronrod


def _gk_batch(f, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * GK_NODES[None, :]
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    if not np.all(np.isfinite(fx)):
        raise NumericsError("integrand returned non-finite values")
    k = half * (fx @ GK_WEIGHTS)
    g = half * (fx @ G_WEIGHTS)
    return k, np.abs(k - g)


def _adaptive_gk(f, a, b, spec, breakpoints=()):
    pts = sorted({a, b, *[p for p in breakpoints if a < p < b]})
    lo = np.array(pts[:-1], dtype=float)
    hi = np.array(pts[1:], dtype=float)
    vals, errs = _gk_batch(f, lo, hi)
    evals = 15 * lo.size
    width = b - a
    while True:
        total = _fsum(vals)
        err = float(np.sum(errs))
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if err <= tol:
            return total, err, evals
        if evals >= spec.max_evals:
            raise BudgetExhausted(
                f"quadrature budget exhausted: estimate {total!r}, error {err:.3e} > {tol:.3e}")
        local = tol * (hi - lo) / width
        split = errs > local
        if not np.any(split):
            split = errs >= np.max(errs)
        # Intervals too small to split further are accepted as they are.
        tiny = (hi - lo) <= 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(lo))
        split &= ~tiny
        if not np.any(split):
            return total, err, evals
        m = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], m])
        new_hi = np.concatenate([m, hi[split]])
        nv, ne = _gk_batch(f, new_lo, new_hi)
        evals += 15 * new_lo.size
        keep = ~split
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        vals = np.concatenate([vals[keep], nv])
        errs = np.concatenate([errs[keep], ne])
        order = np.argsort(lo, kind="stable")
        lo, hi, vals, errs = lo[order], hi[order], vals[order], errs[order]


def tail_probe(g: Callable, r0: float = 1.0, decades=range(2, 11)) -> tuple[float, float]:
    """Probe r*|g(r)| on a geometric grid; return (decay slope, last magnitude).

    The slope is d log(r|g|) / d log r fitted over the last probes.  A slope
    near zero or positive means the tail integral of g diverges.
    """
    r = np.array([max(r0, 1.0) * 10.0 ** k for k in decades], dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        m = r * np.abs(np.asarray(g(r), dtype=float))
    m = np.where(np.isfinite(m), m, np.inf)
    last = float(m[-1])
    if last == 0.0:
        return -np.inf, 0.0
    if not np.isfinite(last):
        return np.inf, last
    good = m[-4:] > 0
    if good.sum() < 2:
        return -np.inf, last
    slope = np.polyfit(np.log(r[-4:][good]), np.log(m[-4:][good]), 1)[0]
    return float(slope), last


def _check_tail(g, a, spec, slope_bound=-0.25):
    slope, last = tail_probe(g, r0=abs(a) if np.isfinite(a) else 1.0)
    if slope > slope_bound and last > spec.abs_tol:
        raise NonIntegrable(
            f"integrand tail decays too slowly (r*|f| ~ r^{slope:.2f}); integral diverges")
    return slope, last


def integrate_1d(f: Callable, a: float, b: float, spec: QuadratureSpec = DEFAULT_1D,
                 breakpoints=(), full_output: bool = False):
    """Integrate f over [a, b]; b may be +inf (compactified by s = (r-a)/(1+r-a)).

    Error target: |err| <= max(abs_tol, rel_tol*|I|).
    """
    if not (np.isfinite(a)):
        raise ValueError("lower limit must be finite")
    if b < a:
        raise ValueError("require a <= b")
    if b == a:
        res = QuadResult(0.0, 0.0, 0)
        return res if full_output else 0.0
    meta = {}
    if np.isinf(b):
        slope, last = _check_tail(f, a, spec)
        meta["tail_slope"] = slope

        def g(s):
            one_m = 1.0 - s
            r = a + s / one_m
            return f(r) / (one_m * one_m)

        mapped_bp = [(p - a) / (1.0 + p - a) for p in breakpoints if p > a]
        val, err, ev = _adaptive_gk(g, 0.0, 1.0, spec, mapped_bp)
    else:
        val, err, ev = _adaptive_gk(f, float(a), float(b), spec, breakpoints)
    res = QuadResult(val, err, ev, meta)
    return res if full_output else val


def integrate_radial_rn(f: Callable, n: int, spec: QuadratureSpec = DEFAULT_1D,
                        breakpoints=(), full_output: bool = False):
    """Integral over R^n of x -> f(|x|), i.e. omega_{n-1} * int_0^inf f(r) r^{n-1} dr."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    w = sphere_area(n - 1)
    res = integrate_1d(lambda r: f(r) * r ** (n - 1), 0.0, np.inf, spec,
                       breakpoints=breakpoints, full_output=True)
    out = QuadResult(w * res.value, w * res.error, res.evals, res.meta)
    return out if full_output else out.value


# ---------------------------------------------------------------------------
# 2-D adaptive tensor Gauss-Kronrod on rectangles


def _gk2_batch(f, x0, x1, y0, y1):
    hx, mx = 0.5 * (x1 - x0), 0.5 * (x1 + x0)
    hy, my = 0.5 * (y1 - y0), 0.5 * (y1 + y0)
    X = mx[:, None, None] + hx[:, None, None] * GK_NODES[None, :, None]
    Y = my[:, None, None] + hy[:, None, None] * GK_NODES[None, None, :]
    X, Y = np.broadcast_arrays(X, Y)
    F = np.asarray(f(X, Y), dtype=float)
    if F.shape != X.shape:
        F = np.broadcast_to(F, X.shape)
    if not np.all(np.isfinite(F)):
        raise NumericsError("integrand returned non-finite values")
    jac = hx * hy
    Fy_k = F @ GK_WEIGHTS            # integrate along y
    Fy_g = F @ G_WEIGHTS
    kk = jac * (Fy_k @ GK_WEIGHTS)
    gg = jac * (Fy_g @ G_WEIGHTS)
    ex = np.abs(jac * (Fy_k @ (GK_WEIGHTS - G_WEIGHTS)))
    ey = np.abs(jac * ((Fy_k - Fy_g) @ GK_WEIGHTS))
    return kk, np.abs(kk - gg), ex >= ey


def integrate_rect(f: Callable, x0: float, x1: float, y0: float, y1: float,
                   spec: QuadratureSpec = DEFAULT_2D, xbreaks=(), ybreaks=(),
                   full_output: bool = False):
    """Adaptive tensor-product Gauss-Kronrod cubature of f(x, y) over a rectangle."""
    xs = sorted({x0, x1, *[p for p in xbreaks if x0 < p < x1]})
    ys = sorted({y0, y1, *[p for p in ybreaks if y0 < p < y1]})
    gx0, gy0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
    gx1, gy1 = np.meshgrid(xs[1:], ys[1:], indexing="ij")
    cx0, cx1, cy0, cy1 = (a.ravel().astype(float) for a in (gx0, gx1, gy0, gy1))
    vals, errs, splitx = _gk2_batch(f, cx0, cx1, cy0, cy1)
    evals = 225 * cx0.size
    area = (x1 - x0) * (y1 - y0)
    while True:
        total = _fsum(vals)
        err = float(np.sum(errs))
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if err <= tol:
            break
        if evals >= spec.max_evals:
            raise BudgetExhausted(
                f"cubature budget exhausted: estimate {total!r}, error {err:.3e} > {tol:.3e}")
        local = tol * (cx1 - cx0) * (cy1 - cy0) / area
        split = errs > local
        if not np.any(split):
            split = errs >= np.max(errs)
        sx = split & splitx
        sy = split & ~splitx
        mx = 0.5 * (cx0 + cx1)
        my = 0.5 * (cy0 + cy1)
        n0 = [cx0[sx], mx[sx], cx0[sy], cx0[sy]]
        n1 = [mx[sx], cx1[sx], cx1[sy], cx1[sy]]
        m0 = [cy0[sx], cy0[sx], cy0[sy], my[sy]]
        m1 = [cy1[sx], cy1[sx], my[sy], cy1[sy]]
        nx0, nx1 = np.concatenate(n0), np.concatenate(n1)
        ny0, ny1 = np.concatenate(m0), np.concatenate(m1)
        nv, ne, ns = _gk2_batch(f, nx0, nx1, ny0, ny1)
        evals += 225 * nx0.size
        keep = ~split
        cx0 = np.concatenate([cx0[keep], nx0])
        cx1 = np.concatenate([cx1[keep], nx1])
        cy0 = np.concatenate([cy0[keep], ny0])
        cy1 = np.concatenate([cy1[keep], ny1])
        vals = np.concatenate([vals[keep], nv])
        errs = np.concatenate([errs[keep], ne])
        splitx = np.concatenate([splitx[keep], ns])
        order = np.lexsort((cy0, cx0))
        cx0, cx1, cy0, cy1 = cx0[order], cx1[order], cy0[order], cy1[order]
        vals, errs, splitx = vals[order], errs[order], splitx[order]
    res = QuadResult(total, err, evals, {"cells": int(cx0.size)})
    return res if full_output else total


def integrate_biradial(f: Callable, p: int, q: int, spec: QuadratureSpec = DEFAULT_2D,
                       decay: Optional[float] = None, rbreaks=(), full_output: bool = False):
    """Integral over R^{p+q} of an O(p)xO(q)-invariant function F(x) = f(|x'|, |x''|).

    Uses polar coordinates (r1, r2) = r(cos phi, sin phi) in the quarter plane and the
    compactifying map s = r/(1+r).  ``decay`` is the exponent d in |f| <~ r^{-d};
    if given and d <= p+q the integral is rejected as divergent.  The estimated tail
    contribution beyond r = 1e6 is stored in ``meta['tail_bound']``.
    """
    n = p + q
    if p < 1 or q < 1:
        raise ValueError("factor dimensions must be >= 1")
    if decay is not None and decay <= n:
        raise NonIntegrable(f"decay exponent {decay} <= n={n}: integral diverges")
    wp, wq = sphere_area(p - 1), sphere_area(q - 1)

    def ray_mag(r):
        phis = np.linspace(0.05, np.pi / 2 - 0.05, 7)
        R, P = np.meshgrid(r, phis, indexing="ij")
        return np.max(np.abs(f(R * np.cos(P), R * np.sin(P))), axis=1) * r ** n

    slope, last = _check_tail(lambda r: ray_mag(r) / r, 1.0, spec)

    def g(s, phi):
        one_m = 1.0 - s
        r = s / one_m
        c, sn = np.cos(phi), np.sin(phi)
        w = r ** (n - 1) * c ** (p - 1) * sn ** (q - 1) / (one_m * one_m)
        return f(r * c, r * sn) * w

    sb = [rb / (1.0 + rb) for rb in rbreaks if rb > 0]
    res = integrate_rect(g, 0.0, 1.0, 0.0, np.pi / 2, spec, xbreaks=sb, full_output=True)
    scale = wp * wq
    R = 1e6
    if decay is not None:
        tail = float(ray_mag(np.array([R]))[0]) * scale / (decay - n)
    else:
        tail = float(ray_mag(np.array([R]))[0]) * scale / max(-slope, 1e-3) if np.isfinite(slope) else 0.0
    out = QuadResult(scale * res.value, scale * res.error, res.evals,
                     {**res.meta, "tail_bound": abs(tail), "tail_slope": slope})
    return out if full_output else out.value


# ---------------------------------------------------------------------------
# Monte Carlo over R^n


def counter_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; stream selects an independent key."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def montecarlo_rn(f: Callable, n: int, spec: QuadratureSpec = DEFAULT_MC,
                  batch: int = 50_000, min_evals: int = 200_000) -> QuadResult:
    """Plain Monte Carlo estimate of the integral of f(x) over R^n.

    Points are drawn as x = r*theta with theta uniform on S^{n-1} and
    s = r/(1+r) uniform on (0,1), so the weight is omega_{n-1} r^{n-1}/(1-s)^2.
    Batches are generated from independent Philox streams and merged in order,
    which makes the result bit-reproducible for a fixed seed.
    """
    w_sphere = sphere_area(n - 1)
    sums = []
    sq = []
    count = 0
    stream = 0
    mean = 0.0
    stderr = np.inf
    while count < spec.max_evals:
        rng = counter_rng(spec.seed, stream)
        stream += 1
        z = rng.standard_normal((batch, n))
        theta = z / np.linalg.norm(z, axis=1, keepdims=True)
        s = rng.random(batch)
        one_m = 1.0 - s
        r = s / one_m
        w = w_sphere * r ** (n - 1) / (one_m * one_m)
        vals = np.asarray(f(theta * r[:, None]), dtype=float) * w
        sums.append(float(np.sum(vals)))
        sq.append(float(np.sum(vals * vals)))
        count += batch
        mean = math.fsum(sums) / count
        var = max(math.fsum(sq) / count - mean * mean, 0.0)
        stderr = math.sqrt(var / count)
        if count >= min_evals and stderr <= max(spec.abs_tol, spec.rel_tol * abs(mean)):
            break
    return QuadResult(mean, stderr, count, {"stderr": stderr, "seed": spec.seed,
                                            "converged": bool(stderr <= max(spec.abs_tol, spec.rel_tol * abs(mean)))})


# ---------------------------------------------------------------------------
# ODEs and roots


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    sol: Callable
    status: str            # "ok" | "blowup" | "failed"
    t_end: float
    nfev: int
    message: str = ""

    def __call__(self, t):
        return self.sol(t)


def solve_ivp(rhs: Callable, t0: float, y0, t1: float, spec: OdeSpec = OdeSpec(),
              t_eval=None) -> Trajectory:
    """Embedded Runge-Kutta integration with dense output and a blow-up guard.

    rhs(t, y) -> dy/dt.  Integration stops early (status 'blowup') once
    max|y| exceeds ``spec.blowup_cap``.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    cap = spec.blowup_cap

    def guard(t, y):
        return cap - np.max(np.abs(y))

    guard.terminal = True
    guard.direction = -1

    with np.errstate(over="ignore", invalid="ignore"):
        r = _sp_integrate.solve_ivp(rhs, (t0, t1), y0, method=spec.method,
                                    rtol=spec.rel_tol, atol=spec.abs_tol,
                                    dense_output=True, events=guard, t_eval=t_eval,
                                    max_step=spec.max_step)
    if r.status == 1:
        status = "blowup"
    elif r.status == 0:
        status = "ok"
    else:
        status = "failed"
    return Trajectory(r.t, r.y, r.sol, status, float(r.t[-1]), int(r.nfev), r.message)


def find_root_bracketed(f: Callable, lo: float, hi: float, tol: float = 1e-12,
                        full_output: bool = False):
    """Brent's method (bisection safeguarded by secant/inverse quadratic steps)."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return (lo, 0) if full_output else lo
    if fhi == 0.0:
        return (hi, 0) if full_output else hi
    if np.sign(flo) == np.sign(fhi):
        raise NoSignChange(f"f({lo})={flo:.3e} and f({hi})={fhi:.3e} have the same sign")
    x, info = _sp_optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                  maxiter=500, full_output=True)
    if not info.converged:
        raise NumericsError(f"root finding did not converge: {info.flag}")
    return (x, info.iterations) if full_output else x
