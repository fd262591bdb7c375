"""Mass of the Green's function of Delta + h0 on the round 3-sphere (h0 constant).

G depends only on the distance theta to the pole and solves
-G'' - 2 cot(theta) G' + h0 G = 0 away from it, with G = 1/(4 pi theta) + m + o(1).
Writing G = w / sin(theta) turns this into w'' + (1 - h0) w = 0 with w(pi) = 0,
which gives the closed form.  The ODE route integrates the radial equation
directly from the regular pole and never uses that substitution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm


class NonCoercive(ValueError):
    pass


def _check_h0(h0):
    if not h0 > 0:
        raise NonCoercive(f"Delta + h0 is not coercive on S^3 for h0 = {h0} (need h0 > 0)")


@dataclass
class MassResult:
    h0: float
    mass: float
    method: str
    error: float = 0.0
    converged: bool = True
    green_profile: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        d = {"schema_version": 1, "type": "mass-result", "h0": self.h0, "mass": self.mass,
             "method": self.method, "error": self.error, "converged": self.converged,
             "metadata": self.meta}
        if self.green_profile is not None:
            d["green_profile"] = self.green_profile
        return d


def mass_closed_form(h0: float) -> MassResult:
    """m = -nu cot(nu pi)/(4 pi), nu = sqrt(1 - h0); hyperbolic branch for h0 > 1."""
    _check_h0(h0)
    if h0 < 1.0:
        nu = math.sqrt(1.0 - h0)
        if abs(nu - 0.5) < 1e-300:
            m = 0.0
        else:
            m = -nu * math.cos(nu * math.pi) / math.sin(nu * math.pi) / (4 * math.pi)
        if h0 == 0.75:
            m = 0.0       # cot(pi/2) is exactly zero; avoid its roundoff
        branch = "trigonometric"
    elif h0 == 1.0:
        m = -1.0 / (4 * math.pi ** 2)
        branch = "degenerate"
    else:
        ka = math.sqrt(h0 - 1.0)
        m = -ka / math.tanh(ka * math.pi) / (4 * math.pi)
        branch = "hyperbolic"
    return MassResult(float(h0), float(m), "closed_form", 0.0, True, None, {"branch": branch})


def green_eval(h0: float, theta, split: bool = False):
    """G(theta) = w(theta) / (4 pi w'(0)... ) normalised so that G ~ 1/(4 pi theta).

    With split=True returns (singular part 1/(4 pi theta), regular remainder G - singular).
    """
    _check_h0(h0)
    th = np.asarray(theta, float)
    if np.any(th <= 0) or np.any(th > np.pi):
        raise ValueError("theta must lie in (0, pi]")
    if h0 < 1.0:
        nu = math.sqrt(1.0 - h0)
        w = np.sin(nu * (np.pi - th)) / math.sin(nu * np.pi)
    elif h0 == 1.0:
        w = (np.pi - th) / np.pi
    else:
        ka = math.sqrt(h0 - 1.0)
        w = np.sinh(ka * (np.pi - th)) / math.sinh(ka * np.pi)
    s = np.sin(th)
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(th == np.pi, _pole_value(h0), w / (4 * np.pi * np.where(th == np.pi, 1.0, s)))
    if split:
        sing = 1.0 / (4 * np.pi * th)
        return sing, G - sing
    return G


def _pole_value(h0):
    # limit theta -> pi of w/(4 pi sin theta) = w'(pi) * (-1) / (4 pi * (-1))
    if h0 < 1.0:
        nu = math.sqrt(1.0 - h0)
        return nu / math.sin(nu * math.pi) / (4 * math.pi)
    if h0 == 1.0:
        return 1.0 / (4 * math.pi ** 2)
    ka = math.sqrt(h0 - 1.0)
    return ka / math.sinh(ka * math.pi) / (4 * math.pi)


ODE_SPEC = nm.OdeSpec(method="DOP853", rel_tol=1e-13, abs_tol=1e-16, endpoint_series_radius=1e-2)


def _fit(theta, G, with_log=True, degree=5):
    cols = [1.0 / theta, np.ones_like(theta)]
    for j in range(1, degree + 1):
        cols.append(theta ** j)
    if with_log:
        cols.append(theta * np.log(theta))
    X = np.stack(cols, axis=1)
    # column scaling for conditioning
    sc = np.max(np.abs(X), axis=0)
    coef, *_ = np.linalg.lstsq(X / sc, G, rcond=None)
    coef = coef / sc
    return coef[0], coef[1]


def mass_ode(h0: float, spec: nm.OdeSpec = ODE_SPEC, window=(2e-3, 0.25), samples: int = 400,
             profile_points: int = 200) -> MassResult:
    """Integrate from the regular pole theta = pi and extrapolate G - 1/(4 pi theta) to theta = 0.

    Near theta = pi, s = pi - theta: G = 1 + A s^2 + B s^4 with A = h0/6, B = A (h0 + 4/3)/20.
    The raw solution is fitted near theta = 0 by c0/theta + c1 + polynomial + theta log theta;
    then G = raw/(4 pi c0) and m = c1/(4 pi c0).  Two windows are compared for convergence.
    """
    _check_h0(h0)
    s0 = spec.endpoint_series_radius
    A = h0 / 6.0
    B = A * (h0 + 4.0 / 3.0) / 20.0
    y0 = [1 + A * s0 ** 2 + B * s0 ** 4, 2 * A * s0 + 4 * B * s0 ** 3]

    def rhs(s, y):
        # in s = pi - theta:  G_ss + 2 cot(s) G_s = h0 G
        return [y[1], h0 * y[0] - 2.0 * y[1] / np.tan(s)]

    s_end = np.pi - window[0] * 0.5
    traj = nm.solve_ivp(rhs, s0, y0, s_end, spec)
    if traj.status != "ok":
        raise nm.NumericsError(f"Green ODE integration failed: {traj.message}")

    def raw(theta):
        return traj(np.pi - theta)[0]

    th = np.geomspace(window[0], window[1], samples)
    c0, c1 = _fit(th, raw(th))
    th2 = np.geomspace(2 * window[0], 0.6 * window[1], samples)
    c0b, c1b = _fit(th2, raw(th2))
    m = c1 / (4 * np.pi * c0)
    m2 = c1b / (4 * np.pi * c0b)
    err = abs(m - m2)
    converged = err < 1e-8
    tp = np.linspace(np.pi, window[0], profile_points)
    Gp = np.where(tp >= np.pi - s0, 1 + A * (np.pi - tp) ** 2 + B * (np.pi - tp) ** 4,
                  raw(np.minimum(tp, np.pi - s0))) / (4 * np.pi * c0)
    profile = {"theta": tp[::-1].tolist(), "G": Gp[::-1].tolist()}
    return MassResult(float(h0), float(m), "ode", float(err), bool(converged), profile,
                      {"fit_windows": [list(window), [2 * window[0], 0.6 * window[1]]],
                       "basis": "1/theta, 1, theta..theta^5, theta log theta",
                       "ode_method": spec.method})


def mass(h0: float, method: str = "both") -> dict:
    """Run one or both routes; 'both' reports their difference."""
    out = {}
    if method in ("closed", "closed_form", "both"):
        out["closed_form"] = mass_closed_form(h0)
    if method in ("ode", "both"):
        out["ode"] = mass_ode(h0)
    if not out:
        raise ValueError(f"unknown method {method!r}")
    return out


def mass_sweep(h0_values, method: str = "closed_form"):
    """List of (h0, m) pairs."""
    fn = mass_closed_form if method in ("closed", "closed_form") else mass_ode
    return [(float(h), fn(float(h)).mass) for h in h0_values]
