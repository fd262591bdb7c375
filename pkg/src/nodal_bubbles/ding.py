"""Nodal O(p)xO(q+1)-invariant solutions on S^n by shooting, and their flat pullbacks.

An invariant function on S^n, n = p + q, depends only on the latitude t in
[0, pi/2] where a point is (cos t * theta, sin t * sigma), theta in S^{p-1},
sigma in S^q.  The sphere equation reduces to

    u'' + (q cot t - (p-1) tan t) u' = (n(n-2)/4) u - |u|^{4/(n-2)} u,

which has regular singular points at both ends.  Solutions are started from a
Taylor patch at t = 0, integrated to pi/2 - rho, and matched to the even
Taylor patch at pi/2.  The mismatch in slope is the shooting function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm
from .profiles import DingProfile, LatitudeData, flat_residual

SCAN_RANGE = (1.0 / 50.0, 50.0)
SCAN_POINTS = 400
SCAN_SPEC = nm.OdeSpec(method="RK45", rel_tol=1e-8, abs_tol=1e-10)
MAX_EXTENSION = 1e5
REFINE_SPEC = nm.OdeSpec(method="DOP853", rel_tol=1e-13, abs_tol=1e-14,
                         endpoint_series_radius=2.5e-3)
RESIDUAL_TOL = 1e-6


class DingError(ValueError):
    pass


def _check_split(p, q):
    if p < 2 or q < 2:
        raise DingError(f"factor dimensions must satisfy p, q >= 2 (got p={p}, q={q})")


def linear_coefficient(n):
    return n * (n - 2) / 4.0


def constant_solution(p: int, q: int) -> float:
    """The positive constant a* = (n(n-2)/4)^{(n-2)/4}."""
    n = p + q
    return linear_coefficient(n) ** ((n - 2) / 4.0)


def _F(u, n):
    return linear_coefficient(n) * u - np.abs(u) ** (4.0 / (n - 2)) * u


def _dF(u, n):
    return linear_coefficient(n) - (n + 2) / (n - 2) * np.abs(u) ** (4.0 / (n - 2))


def latitude_rhs(t, u, du, p, q):
    """u'' from the reduced equation; only valid in the open interval (0, pi/2)."""
    t = np.asarray(t, float)
    if np.any(t <= 0) or np.any(t >= np.pi / 2):
        raise DingError("latitude_rhs is singular at t = 0 and t = pi/2; use the endpoint series")
    n = p + q
    return _F(u, n) - (q / np.tan(t) - (p - 1) * np.tan(t)) * du


def series_north(a, p, q):
    """(a, A, B) with u = a + A t^2 + B t^4 near t = 0."""
    n = p + q
    A = _F(a, n) / (2.0 * (q + 1))
    B = A * (_dF(a, n) + 2.0 * q / 3.0 + 2.0 * (p - 1)) / (12.0 + 4.0 * q)
    return float(a), float(A), float(B)


def series_equator(b, p, q):
    """(b, C, D) with u = b + C s^2 + D s^4, s = pi/2 - t."""
    n = p + q
    C = _F(b, n) / (2.0 * p)
    D = C * (_dF(b, n) + 2.0 * (p - 1) / 3.0 + 2.0 * q) / (12.0 + 4.0 * (p - 1))
    return float(b), float(C), float(D)


def _match_equator(u_end, rho, p, q):
    """Solve b + C(b) rho^2 + D(b) rho^4 = u_end for b by Newton iteration."""
    b = u_end
    for _ in range(50):
        bb, C, D = series_equator(b, p, q)
        g = bb + C * rho ** 2 + D * rho ** 4 - u_end
        h = 1e-7 * max(1.0, abs(b))
        b2, C2, D2 = series_equator(b + h, p, q)
        dg = (b2 + C2 * rho ** 2 + D2 * rho ** 4 - u_end - g) / h
        step = g / dg
        b -= step
        if abs(step) <= 1e-15 * max(1.0, abs(b)):
            break
    return series_equator(b, p, q)


@dataclass
class Shot:
    a: float
    terminal_slope: float
    status: str
    trajectory: Optional[nm.Trajectory]
    series0: tuple
    series1: Optional[tuple]
    patch: float


def shoot(a: float, p: int, q: int, spec: nm.OdeSpec = SCAN_SPEC) -> Shot:
    """Integrate from u(0) = a and return the slope mismatch at the equator patch."""
    _check_split(p, q)
    rho = spec.endpoint_series_radius
    s0 = series_north(a, p, q)
    if a == 0.0:
        return Shot(0.0, 0.0, "ok", None, s0, (0.0, 0.0, 0.0), rho)
    a0, A, B = s0
    y0 = [a0 + A * rho ** 2 + B * rho ** 4, 2 * A * rho + 4 * B * rho ** 3]

    def rhs(t, y):
        return [y[1], latitude_rhs(t, y[0], y[1], p, q)]

    t_end = np.pi / 2 - rho
    traj = nm.solve_ivp(rhs, rho, y0, t_end, spec)
    if traj.status != "ok":
        return Shot(a, float("nan"), traj.status, traj, s0, None, rho)
    u_end, du_end = traj.y[0, -1], traj.y[1, -1]
    s1 = _match_equator(u_end, rho, p, q)
    _, C, D = s1
    slope_series = -(2 * C * rho + 4 * D * rho ** 3)
    return Shot(a, float(du_end - slope_series), "ok", traj, s0, s1, rho)


def count_sign_changes(values) -> int:
    s = np.sign(np.asarray(values, float))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass
class LatitudeSolution:
    p: int
    q: int
    a0: float
    nodes: int
    residual_sup: float
    energy: float
    terminal_slope: float
    data: LatitudeData
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.p + self.q

    @property
    def t(self):
        return self.data.t

    @property
    def u(self):
        return self.data.u

    @property
    def du(self):
        return self.data.du

    @property
    def equator_value(self) -> float:
        return self.data.series1[0]

    def to_document(self) -> dict:
        return {"schema_version": 1, "type": "latitude-solution", "p": self.p, "q": self.q,
                "a0": self.a0, "nodes": self.nodes, "residual_sup": self.residual_sup,
                "energy": self.energy, "terminal_slope": self.terminal_slope,
                "grid": self.data.to_dict(), "metadata": self.meta}

    @classmethod
    def from_document(cls, doc: dict) -> "LatitudeSolution":
        return cls(int(doc["p"]), int(doc["q"]), float(doc["a0"]), int(doc["nodes"]),
                   float(doc["residual_sup"]), float(doc["energy"]),
                   float(doc.get("terminal_slope", 0.0)), LatitudeData.from_dict(doc["grid"]),
                   dict(doc.get("metadata", {})))


def sphere_energy(data: LatitudeData, spec: nm.QuadratureSpec = nm.DEFAULT_1D) -> float:
    """int_{S^n} |u|^{2*} dv = omega_{p-1} omega_q int_0^{pi/2} |u|^{2*} cos^{p-1} sin^q dt."""
    p, q = data.p, data.q
    n = p + q
    ps = 2.0 * n / (n - 2)

    def f(t):
        return np.abs(data(t)[0]) ** ps * np.cos(t) ** (p - 1) * np.sin(t) ** q

    val = nm.integrate_1d(f, 0.0, np.pi / 2, spec, breakpoints=list(data.t[:: max(1, data.t.size // 40)]))
    return nm.sphere_area(p - 1) * nm.sphere_area(q) * val


def latitude_residual(data: LatitudeData, samples: int = 20000) -> float:
    """sup |u'' - rhs| on interior points between grid nodes, relative to sup |u|^{2*-1}."""
    p, q = data.p, data.q
    n = p + q
    t = np.linspace(data.t[0], data.t[-1], samples + 2)[1:-1]
    u, du, d2u = data(t)
    res = np.max(np.abs(d2u - latitude_rhs(t, u, du, p, q)))
    scale = max(float(np.max(np.abs(data.u))) ** ((n + 2) / (n - 2)), 1e-300)
    return float(res / scale)


def build_solution(a: float, p: int, q: int, points: int = 3001,
                   spec: nm.OdeSpec = REFINE_SPEC) -> LatitudeSolution:
    """Re-integrate a converged shooting value and package the sampled solution."""
    shot = shoot(a, p, q, spec)
    if shot.status != "ok":
        raise nm.NumericsError(f"shot from a={a!r} failed: {shot.status}")
    rho = shot.patch
    if shot.trajectory is None:
        t = np.linspace(rho, np.pi / 2 - rho, points)
        u = np.zeros_like(t)
        du = np.zeros_like(t)
    else:
        t = np.linspace(rho, np.pi / 2 - rho, points)
        y = shot.trajectory(t)
        u, du = y[0], y[1]
    d2u = latitude_rhs(t, u, du, p, q)
    data = LatitudeData(p, q, t, u, du, d2u, shot.series0, shot.series1, rho)
    nodes = count_sign_changes(u)
    res = latitude_residual(data)
    energy = sphere_energy(data)
    return LatitudeSolution(p, q, float(a), nodes, res, float(energy), shot.terminal_slope, data,
                            {"ode_method": spec.method, "ode_rel_tol": spec.rel_tol,
                             "patch_radius": rho, "grid_points": points})


def scan(p: int, q: int, lo: float = None, hi: float = None, points: int = SCAN_POINTS,
         spec: nm.OdeSpec = SCAN_SPEC):
    """Shooting function sampled on a log grid of a; returns (a, slope, nodes) arrays."""
    astar = constant_solution(p, q)
    lo = astar * SCAN_RANGE[0] if lo is None else lo
    hi = astar * SCAN_RANGE[1] if hi is None else hi
    a = np.geomspace(lo, hi, points)
    s = np.empty(points)
    k = np.empty(points, dtype=int)
    for i, ai in enumerate(a):
        sh = shoot(ai, p, q, spec)
        s[i] = sh.terminal_slope
        k[i] = count_sign_changes(sh.trajectory.y[0]) if sh.trajectory is not None else 0
    return a, s, k


def _extended_scan(p, q, max_nodes, points, spec, max_extension):
    """Scan the default range, then extend it upward one decade at a time until a
    shot with more than max_nodes sign changes is seen."""
    astar = constant_solution(p, q)
    lo, hi = astar * SCAN_RANGE[0], astar * SCAN_RANGE[1]
    a, s, k = scan(p, q, lo, hi, points, spec)
    per_decade = (points - 1) / math.log10(hi / lo)
    top = hi
    while k[-1] <= max_nodes and top < astar * max_extension:
        new_top = top * 10.0
        m = int(math.ceil(per_decade)) + 1
        a2, s2, k2 = scan(p, q, top, new_top, m, spec)
        a, s, k = np.concatenate([a, a2[1:]]), np.concatenate([s, s2[1:]]), np.concatenate([k, k2[1:]])
        top = new_top
    return a, s, k


def find_solutions(p: int, q: int, max_nodes: int = 2, spec: nm.OdeSpec = SCAN_SPEC,
                   points: int = SCAN_POINTS, residual_tol: float = RESIDUAL_TOL,
                   max_extension: float = MAX_EXTENSION):
    """Nodal solutions with 0..max_nodes interior zeros, found by scanning u(0) = a > 0.

    The default range [a*/50, 50 a*] is extended upward (up to max_extension * a*)
    until a shot with more than max_nodes zeros is seen, since higher-node
    solutions start from larger a.  Returns (solutions, missing): solutions sorted
    by (nodes, a0); ``missing`` lists node counts for which no bracket was found.  Solutions with
    a < 0 are the negatives of these and are not listed separately.
    """
    _check_split(p, q)
    if max_nodes < 0:
        raise DingError("max_nodes must be >= 0")
    astar = constant_solution(p, q)
    a, s, k = _extended_scan(p, q, max_nodes, points, spec, max_extension)
    roots = [astar]
    for i in range(a.size - 1):
        if k[i] > max_nodes + 1:
            break
        if not (np.isfinite(s[i]) and np.isfinite(s[i + 1])):
            continue
        if s[i] == 0.0:
            roots.append(a[i])
        elif s[i] * s[i + 1] < 0:
            f = lambda x: shoot(x, p, q, spec).terminal_slope
            roots.append(nm.find_root_bracketed(f, a[i], a[i + 1], tol=1e-14 * a[i]))
    roots.sort()
    uniq = []
    for r in roots:
        if not uniq or abs(r - uniq[-1]) > 1e-8 * r:
            uniq.append(r)
    sols = []
    for r in uniq:
        if abs(r - astar) <= 1e-8 * astar:
            r = astar
        else:
            # polish with the high-accuracy integrator
            f = lambda x: shoot(x, p, q, REFINE_SPEC).terminal_slope
            for w in (1e-7, 1e-6, 1e-5, 1e-4):
                try:
                    r = nm.find_root_bracketed(f, r * (1 - w), r * (1 + w), tol=1e-15 * r)
                    break
                except nm.NoSignChange:
                    continue
        sol = build_solution(r, p, q)
        if sol.nodes <= max_nodes and sol.residual_sup < residual_tol:
            sols.append(sol)
    sols.sort(key=lambda z: (z.nodes, z.a0))
    found = {z.nodes for z in sols}
    missing = [k for k in range(max_nodes + 1) if k not in found]
    return sols, missing


def solution_with_nodes(p: int, q: int, nodes: int, **kw) -> LatitudeSolution:
    sols, _ = find_solutions(p, q, max_nodes=nodes, **kw)
    match = [z for z in sols if z.nodes == nodes]
    if not match:
        raise nm.NumericsError(f"no {nodes}-node solution found for (p, q) = ({p}, {q})")
    return match[0]


def pullback(sol: LatitudeSolution) -> DingProfile:
    """V(x) = (2/(1+|x|^2))^{(n-2)/2} u(arccos(2|x'|/(1+|x|^2)))."""
    meta = {"generator": "ding-shooting", "nodes": sol.nodes, "a0": sol.a0,
            "residual": sol.residual_sup, "sphere_energy": sol.energy, "scale": 1.0}
    prof = DingProfile(sol.data, meta)
    prof.metadata["flat_residual"] = flat_residual(prof)
    return prof


def pullback_lambda(sol: LatitudeSolution) -> float:
    """lambda(V) of the pullback: the pullback is Kelvin-invariant, so lambda = 2^{(n-2)/2} u(pi/2)."""
    return 2.0 ** ((sol.n - 2) / 2.0) * sol.equator_value
