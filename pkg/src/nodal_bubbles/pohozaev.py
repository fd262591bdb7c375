"""Flat Pohozaev identity on balls and the 3-D Green mass boundary functional.

For Delta v + h0 v = |v|^{p-2} v on R^n (Delta = -div grad) the dilation field
x.grad gives, on B(0, delta),

    int_{dB} ((n-2)/2 v d_nu v - delta/2 |grad v|^2 + delta (d_nu v)^2 + delta/p |v|^p)
        = n (1/p - 1/2*) int_B |v|^p + int_B (x.grad v + (n-2)/2 v) h0 v.

The report evaluates each side term by term; nothing assumes v solves anything.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import numerics as nm
from .profiles import Profile, ProfileError, SampledRadialProfile, critical_exponent

BALL_SPEC = nm.QuadratureSpec(rule="tensor-2d", rel_tol=1e-12, abs_tol=1e-15)
SURFACE_SPEC = nm.QuadratureSpec(rule="adaptive-1d", rel_tol=1e-13, abs_tol=1e-16)
DEFECT_SPEC = nm.QuadratureSpec(rule="tensor-2d", rel_tol=1e-8, abs_tol=1e-12)


class PohozaevError(ValueError):
    pass


@dataclass
class PohozaevReport:
    delta: float
    boundary_term: float
    volume_subcritical_term: float
    volume_potential_term: float
    residual: float
    normalizer: float
    boundary_parts: dict = field(default_factory=dict)

    @property
    def relative_residual(self) -> float:
        return 0.0 if self.normalizer == 0 else abs(self.residual) / self.normalizer

    def to_document(self) -> dict:
        return {"schema_version": 1, "type": "pohozaev-report", "delta": self.delta,
                "boundary_term": self.boundary_term,
                "volume_subcritical_term": self.volume_subcritical_term,
                "volume_potential_term": self.volume_potential_term,
                "residual": self.residual, "normalizer": self.normalizer,
                "relative_residual": self.relative_residual,
                "boundary_parts": self.boundary_parts}


def _boundary_density(P, r1, r2, delta, n, p_exp):
    """The four boundary integrands at points of the sphere of radius delta."""
    dn = (r1 * P.v1 + r2 * P.v2) / delta
    g2 = P.v1 ** 2 + P.v2 ** 2
    return {
        "v_dnu_v": (n - 2) / 2.0 * P.v * dn,
        "grad_sq": -delta / 2.0 * g2,
        "dnu_sq": delta * dn * dn,
        "power": delta / p_exp * np.abs(P.v) ** p_exp,
    }


def pohozaev_terms(v: Profile, h0: float = 0.0, p_exp: Optional[float] = None, delta: float = 1.0,
                   spec: Optional[nm.QuadratureSpec] = None) -> PohozaevReport:
    n = v.n
    ps = critical_exponent(n)
    p_exp = ps if p_exp is None else float(p_exp)
    if not (2.0 < p_exp <= ps + 1e-14):
        raise PohozaevError(f"exponent p must lie in (2, 2*] = (2, {ps}]")
    if not delta > 0:
        raise PohozaevError("ball radius must be positive")
    if isinstance(v, SampledRadialProfile) and delta > v.r_max:
        raise PohozaevError(f"delta = {delta} exceeds the profile grid (r_max = {v.r_max})")
    k = (n - 2) / 2.0
    surf_spec = spec or SURFACE_SPEC
    vol_spec = spec or BALL_SPEC
    c_sub = n * (1.0 / p_exp - 1.0 / ps)

    if v.is_radial():
        R = v.ray(np.array([delta]))
        from .profiles import Plane
        P = Plane(R.v, R.dv, 0 * R.dv, R.d2v, 0 * R.dv, R.dv_r, R.dv_r, R.dv_r)
        dens = _boundary_density(P, np.array([delta]), np.array([0.0]), delta, n, p_exp)
        area = nm.sphere_area(n - 1) * delta ** (n - 1)
        parts = {key: float(area * val[0]) for key, val in dens.items()}

        def vol(fn):
            return nm.integrate_1d(lambda r: fn(v.ray(r), r) * r ** (n - 1), 0.0, delta,
                                   vol_spec.with_(rule="adaptive-1d")) * nm.sphere_area(n - 1)

        sub = c_sub * vol(lambda R, r: np.abs(R.v) ** p_exp) if c_sub != 0 else 0.0
        pot = h0 * vol(lambda R, r: (r * R.dv + k * R.v) * R.v) if h0 != 0 else 0.0
    elif v.biradial_split() is not None:
        p, q = v.biradial_split()
        w = nm.sphere_area(p - 1) * nm.sphere_area(q - 1)
        parts = {}
        for key in ("v_dnu_v", "grad_sq", "dnu_sq", "power"):
            def f(phi, key=key):
                r1, r2 = delta * np.cos(phi), delta * np.sin(phi)
                P = v.plane(r1, r2)
                d = _boundary_density(P, r1, r2, delta, n, p_exp)[key]
                return d * np.cos(phi) ** (p - 1) * np.sin(phi) ** (q - 1)
            parts[key] = float(w * delta ** (n - 1) * nm.integrate_1d(f, 0.0, np.pi / 2, surf_spec))

        def vol(fn):
            def g(r, phi):
                r1, r2 = r * np.cos(phi), r * np.sin(phi)
                P = v.plane(r1, r2)
                wt = r ** (n - 1) * np.cos(phi) ** (p - 1) * np.sin(phi) ** (q - 1)
                return fn(P, r1, r2) * wt
            return w * nm.integrate_rect(g, 0.0, delta, 0.0, np.pi / 2,
                                         vol_spec.with_(rule="tensor-2d"))

        sub = c_sub * vol(lambda P, r1, r2: np.abs(P.v) ** p_exp) if c_sub != 0 else 0.0
        pot = h0 * vol(lambda P, r1, r2: (r1 * P.v1 + r2 * P.v2 + k * P.v) * P.v) if h0 != 0 else 0.0
    else:
        raise PohozaevError("Pohozaev terms need a radial or biradial profile")

    boundary = math.fsum(parts.values())
    residual = boundary - (sub + pot)
    normalizer = max([abs(x) for x in parts.values()] + [abs(sub), abs(pot)])
    return PohozaevReport(float(delta), float(boundary), float(sub), float(pot),
                          float(residual), float(normalizer), parts)


def scale_audit(v: Profile, delta: float, mus=(0.5, 2.0)) -> dict:
    """Boundary terms for V and for mu^{-(n-2)/2} V(./mu) on the ball of radius mu*delta."""
    base = pohozaev_terms(v, 0.0, None, delta)
    out = {"base": base.boundary_parts}
    for mu in mus:
        out[str(mu)] = pohozaev_terms(v.scaled(mu), 0.0, None, mu * delta).boundary_parts
    return out


# ---------------------------------------------------------------------------
# n = 3 mass functional


@dataclass
class Perturbation:
    """A C^1 function beta on R^3 with beta(0) = 0, given with its gradient."""
    value: Callable
    gradient: Callable


def quadratic_beta(scale: float = 1.0) -> Perturbation:
    """beta(x) = scale |x|^2."""
    return Perturbation(lambda x: scale * np.sum(x * x, axis=-1), lambda x: 2.0 * scale * x)


def mass_boundary_functional(m: float, beta: Optional[Perturbation] = None, delta: float = 1.0,
                             spec: Optional[nm.QuadratureSpec] = None) -> float:
    """int_{|x|=delta} (G/2 d_nu G - delta/2 |grad G|^2 + delta (d_nu G)^2), G = 1/(4 pi |x|) + m + beta."""
    if not delta > 0:
        raise PohozaevError("delta must be positive")
    spec = spec or nm.QuadratureSpec(rule="tensor-2d", rel_tol=1e-13, abs_tol=1e-18)

    def dens(ct, ph):
        st = np.sqrt(np.clip(1.0 - ct * ct, 0.0, None))
        nu = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
        x = delta * nu
        G = 1.0 / (4 * np.pi * delta) + m
        gradG = -nu / (4 * np.pi * delta ** 2)
        if beta is not None:
            G = G + beta.value(x)
            gradG = gradG + beta.gradient(x)
        dn = np.sum(gradG * nu, axis=-1)
        g2 = np.sum(gradG * gradG, axis=-1)
        return (0.5 * G * dn - 0.5 * delta * g2 + delta * dn * dn) * delta ** 2

    if beta is None:
        # integrand is constant on the sphere
        return float(4 * np.pi * dens(np.array([0.0]), np.array([0.0]))[0])
    return float(nm.integrate_rect(dens, -1.0, 1.0, 0.0, 2 * np.pi, spec))


def equation_defect(v: Profile, h0: float, p_exp: float, delta: float,
                    spec: Optional[nm.QuadratureSpec] = None) -> float:
    """int_B (x.grad v + (n-2)/2 v)(Delta v + h0 v - |v|^{p-2} v) dx.

    For an arbitrary smooth v the Pohozaev residual equals minus this integral,
    so it vanishes for solutions and checks the term arithmetic otherwise.
    """
    n = v.n
    k = (n - 2) / 2.0
    if v.is_radial():
        def f(r):
            R = v.ray(r)
            lap = -(R.d2v + (n - 1) * R.dv_r)
            E = lap + h0 * R.v - np.abs(R.v) ** (p_exp - 2) * R.v
            return (r * R.dv + k * R.v) * E * r ** (n - 1)
        return nm.sphere_area(n - 1) * nm.integrate_1d(f, 0.0, delta, spec or SURFACE_SPEC)
    split = v.biradial_split()
    if split is None:
        raise PohozaevError("equation defect needs a radial or biradial profile")
    p, q = split

    def g(r, phi):
        c, s = np.cos(phi), np.sin(phi)
        r1, r2 = r * c, r * s
        P = v.plane(r1, r2)
        lap = -(P.v11 + (p - 1) * P.v1r + P.v22 + (q - 1) * P.v2r)
        E = lap + h0 * P.v - np.abs(P.v) ** (p_exp - 2) * P.v
        return (r1 * P.v1 + r2 * P.v2 + k * P.v) * E * r ** (n - 1) * c ** (p - 1) * s ** (q - 1)

    w = nm.sphere_area(p - 1) * nm.sphere_area(q - 1)
    # |v|^{p-2} v has a kink on the nodal set, so a looser default target is used
    return w * nm.integrate_rect(g, 0.0, delta, 0.0, np.pi / 2, spec or DEFECT_SPEC)
