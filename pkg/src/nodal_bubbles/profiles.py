"""Solution profiles V of  -sum_i d_i^2 V = |V|^{2*-2} V  on R^n and their invariants.

Every profile exposes Cartesian ``value``, ``gradient`` and ``hessian`` on
arrays of points with trailing axis n.  Symmetric profiles additionally expose
their reduced derivatives: ``ray(r)`` for radial ones and ``plane(r1, r2)``
for O(p)xO(q)-invariant ones, which the quadrature routines use.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.interpolate import BPoly

from . import numerics as nm

SCHEMA_VERSION = 1


class ProfileError(ValueError):
    pass


class InconsistencyError(nm.NumericsError):
    pass


def critical_exponent(n: int) -> float:
    if n < 3:
        raise ProfileError(f"the critical exponent needs n >= 3, got {n}")
    return 2.0 * n / (n - 2)


def nonlinearity(v, n):
    """|v|^{2*-2} v."""
    return np.abs(v) ** (4.0 / (n - 2)) * v


class Plane(NamedTuple):
    """Reduced derivatives of a biradial V(r1, r2).

    v1r, v2r are d1V/r1 and d2V/r2, i.e. the Hessian eigenvalues in the
    directions tangent to the orbit spheres (limits d11V, d22V on the axes).
    """
    v: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    v11: np.ndarray
    v12: np.ndarray
    v22: np.ndarray
    v1r: np.ndarray
    v2r: np.ndarray


class Ray(NamedTuple):
    v: np.ndarray
    dv: np.ndarray
    d2v: np.ndarray
    dv_r: np.ndarray      # dV/dr / r


def _safe_unit(X, r):
    with np.errstate(invalid="ignore", divide="ignore"):
        u = X / r[..., None]
    return np.where(r[..., None] > 0, u, 0.0)


class Profile(ABC):
    """A candidate element of Sigma on R^n."""

    n: int
    kind: str = "abstract"

    @property
    def symmetry(self) -> tuple:
        return ("none",)

    @property
    def k(self) -> float:
        return (self.n - 2) / 2.0

    @abstractmethod
    def value(self, x): ...

    @abstractmethod
    def gradient(self, x): ...

    @abstractmethod
    def hessian(self, x): ...

    def laplacian(self, x):
        """Analyst's Laplacian -trace(Hess), matching the sign convention of the equation."""
        return -np.trace(self.hessian(x), axis1=-2, axis2=-1)

    def is_radial(self) -> bool:
        return self.symmetry[0] == "radial"

    def biradial_split(self) -> Optional[tuple]:
        if self.symmetry[0] == "biradial":
            return self.symmetry[1], self.symmetry[2]
        return None

    def _representative(self, r1, r2, p):
        r1, r2 = np.broadcast_arrays(np.asarray(r1, float), np.asarray(r2, float))
        x = np.zeros(r1.shape + (self.n,))
        x[..., 0] = r1
        x[..., p] = r2
        return x

    def plane(self, r1, r2, p: int, q: int) -> Plane:
        """Reduced derivatives at the representative point r1 e_1 + r2 e_{p+1}."""
        if p + q != self.n or p < 2 or q < 2:
            raise ProfileError(f"invalid split (p, q) = ({p}, {q}) for n = {self.n}")
        x = self._representative(r1, r2, p)
        v = self.value(x)
        g = self.gradient(x)
        H = self.hessian(x)
        return Plane(v, g[..., 0], g[..., p], H[..., 0, 0], H[..., 0, p], H[..., p, p],
                     H[..., 1, 1], H[..., p + 1, p + 1])

    def ray(self, r) -> Ray:
        r = np.asarray(r, float)
        x = np.zeros(r.shape + (self.n,))
        x[..., 0] = r
        g = self.gradient(x)
        H = self.hessian(x)
        return Ray(self.value(x), g[..., 0], H[..., 0, 0], H[..., 1, 1])

    # transforms -----------------------------------------------------------
    def __neg__(self) -> "Profile":
        return Negated(self)

    def scaled(self, mu: float) -> "Profile":
        return Scaled(self, mu)

    def transform_chain(self) -> list:
        return []

    def base_document(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serialisable")

    def to_document(self) -> dict:
        doc = self.base_document()
        doc["transforms"] = self.transform_chain()
        return doc


# ---------------------------------------------------------------------------
# radial profiles


class RadialProfile(Profile):
    @property
    def symmetry(self):
        return ("radial",)

    @abstractmethod
    def ray(self, r) -> Ray: ...

    def value(self, x):
        x = np.asarray(x, float)
        return self.ray(np.linalg.norm(x, axis=-1)).v

    def gradient(self, x):
        x = np.asarray(x, float)
        R = self.ray(np.linalg.norm(x, axis=-1))
        return R.dv_r[..., None] * x

    def hessian(self, x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        R = self.ray(r)
        e = _safe_unit(x, r)
        I = np.eye(self.n)
        return (R.dv_r[..., None, None] * I
                + (R.d2v - R.dv_r)[..., None, None] * e[..., :, None] * e[..., None, :])

    def plane(self, r1, r2, p, q):
        if p + q != self.n:
            raise ProfileError(f"invalid split (p, q) = ({p}, {q}) for n = {self.n}")
        r1, r2 = np.broadcast_arrays(np.asarray(r1, float), np.asarray(r2, float))
        r = np.hypot(r1, r2)
        R = self.ray(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(r > 0, r1 / r, 1.0)
            s = np.where(r > 0, r2 / r, 0.0)
        d = R.d2v - R.dv_r
        return Plane(R.v, R.dv_r * r1, R.dv_r * r2, R.dv_r + d * c * c, d * c * s,
                     R.dv_r + d * s * s, R.dv_r, R.dv_r)


class StandardBubble(RadialProfile):
    """mu^{-(n-2)/2} B0(x/mu) with B0(x) = (1 + |x|^2/(n(n-2)))^{-(n-2)/2}."""
    kind = "closed-form-standard"

    def __init__(self, n: int, mu: float = 1.0):
        if n < 3:
            raise ProfileError("the standard bubble requires n >= 3")
        if not mu > 0:
            raise ProfileError("scale mu must be positive")
        self.n = int(n)
        self.mu = float(mu)

    def ray(self, r):
        n, k, mu = self.n, self.k, self.mu
        r = np.asarray(r, float)
        a = 1.0 / (n * (n - 2) * mu * mu)
        base = 1.0 + a * r * r
        pre = mu ** (-k)
        v = pre * base ** (-k)
        dv_r = -2.0 * k * a * pre * base ** (-k - 1)
        d2v = dv_r + 4.0 * k * (k + 1) * a * a * r * r * pre * base ** (-k - 2)
        return Ray(v, dv_r * r, d2v, dv_r)

    @property
    def lambda_exact(self) -> float:
        n = self.n
        return (n * (n - 2)) ** self.k * self.mu ** self.k

    def base_document(self):
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, "n": self.n,
                "p": None, "q": None, "mu": self.mu, "metadata": {"generator": "closed-form"}}


def standard_bubble(n: int) -> StandardBubble:
    return StandardBubble(n)


class SampledRadialProfile(RadialProfile):
    """Numeric radial profile on a log-spaced grid (quintic Hermite interpolation).

    Inside the first grid point an even Taylor series v0 + c2 r^2 + c4 r^4 is used;
    beyond the last one the far field lambda r^{2-n} + b r^{-n} fitted to the last node.
    """
    kind = "numeric-radial"

    def __init__(self, n, r, v, dv, d2v, series=(1.0, 0.0, 0.0), metadata=None):
        self.n = int(n)
        self.r = np.asarray(r, float)
        self.v = np.asarray(v, float)
        self.dv = np.asarray(dv, float)
        self.d2v = np.asarray(d2v, float)
        self.series = tuple(float(c) for c in series)
        self.metadata = dict(metadata or {})
        if not np.all(np.diff(self.r) > 0):
            raise ProfileError("radial grid must be strictly increasing")
        y = np.stack([self.v, self.dv, self.d2v], axis=1)
        self._interp = BPoly.from_derivatives(self.r, y)
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)
        # far field: v = L r^{2-n} + b r^{-n} matched in value and slope at r_max
        R, vR, dR = self.r[-1], self.v[-1], self.dv[-1]
        m = self.n
        A = np.array([[R ** (2 - m), R ** (-m)], [(2 - m) * R ** (1 - m), -m * R ** (-m - 1)]])
        self._far = np.linalg.solve(A, np.array([vR, dR]))

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def ray(self, r):
        r = np.asarray(r, float)
        n = self.n
        v = np.empty_like(r)
        dv = np.empty_like(r)
        d2v = np.empty_like(r)
        dv_r = np.empty_like(r)
        lo = r < self.r[0]
        hi = r > self.r[-1]
        mid = ~(lo | hi)
        c0, c2, c4 = self.series
        rl = r[lo]
        v[lo] = c0 + c2 * rl ** 2 + c4 * rl ** 4
        dv_r[lo] = 2 * c2 + 4 * c4 * rl ** 2
        dv[lo] = dv_r[lo] * rl
        d2v[lo] = 2 * c2 + 12 * c4 * rl ** 2
        rm = r[mid]
        v[mid] = self._interp(rm)
        dv[mid] = self._d1(rm)
        d2v[mid] = self._d2(rm)
        dv_r[mid] = dv[mid] / rm
        L, b = self._far
        rh = r[hi]
        v[hi] = L * rh ** (2 - n) + b * rh ** (-n)
        dv[hi] = (2 - n) * L * rh ** (1 - n) - n * b * rh ** (-n - 1)
        d2v[hi] = (2 - n) * (1 - n) * L * rh ** (-n) + n * (n + 1) * b * rh ** (-n - 2)
        dv_r[hi] = dv[hi] / rh
        return Ray(v, dv, d2v, dv_r)

    def base_document(self):
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, "n": self.n,
                "p": None, "q": None,
                "grid": {"r": self.r.tolist(), "v": self.v.tolist()},
                "derivatives": {"dv": self.dv.tolist(), "d2v": self.d2v.tolist()},
                "series": list(self.series), "metadata": self.metadata}


def radial_profile_from_ode(n: int, v0: float = 1.0, r_min: float = 1e-3, r_max: float = 1e4,
                            points: int = 4000, spec: nm.OdeSpec = None) -> SampledRadialProfile:
    """Integrate the radial critical ODE V'' + (n-1)V'/r = -|V|^{2*-2}V from V(0)=v0.

    For v0 > 0 this regenerates the standard bubble with scale mu = v0^{-2/(n-2)}.
    """
    spec = spec or nm.OdeSpec(method="DOP853", rel_tol=1e-13, abs_tol=1e-15)
    p = 4.0 / (n - 2)
    # series: v = v0 + c2 r^2 + c4 r^4
    f0 = abs(v0) ** p * v0
    c2 = -f0 / (2 * n)
    fp = (p + 1) * abs(v0) ** p
    c4 = -fp * c2 / (4 * (n + 2))

    def rhs(r, y):
        return [y[1], -(n - 1) / r * y[1] - nonlinearity(y[0], n)]

    y0 = [v0 + c2 * r_min ** 2 + c4 * r_min ** 4, 2 * c2 * r_min + 4 * c4 * r_min ** 3]
    traj = nm.solve_ivp(rhs, r_min, y0, r_max, spec)
    if traj.status != "ok":
        raise nm.NumericsError(f"radial ODE integration failed: {traj.message}")
    r = np.geomspace(r_min, r_max, points)
    y = traj(r)
    d2 = -(n - 1) / r * y[1] - nonlinearity(y[0], n)
    return SampledRadialProfile(n, r, y[0], y[1], d2, series=(v0, c2, c4),
                                metadata={"generator": "radial-ode", "v0": v0,
                                          "ode_rel_tol": spec.rel_tol, "nodes": 0})


# ---------------------------------------------------------------------------
# biradial profiles


class BiradialProfile(Profile):
    """O(p) x O(q)-invariant profile V(x', x'') = V(|x'|, |x''|)."""

    p: int
    q: int

    @property
    def symmetry(self):
        return ("biradial", self.p, self.q)

    @abstractmethod
    def _plane(self, r1, r2) -> Plane: ...

    def plane(self, r1, r2, p=None, q=None):
        p = self.p if p is None else p
        q = self.q if q is None else q
        if (p, q) != (self.p, self.q):
            raise ProfileError(f"profile is O({self.p})xO({self.q})-invariant, not ({p},{q})")
        r1, r2 = np.broadcast_arrays(np.asarray(r1, float), np.asarray(r2, float))
        return self._plane(np.abs(r1), np.abs(r2))

    def _split(self, x):
        x = np.asarray(x, float)
        X, Y = x[..., :self.p], x[..., self.p:]
        return X, Y, np.linalg.norm(X, axis=-1), np.linalg.norm(Y, axis=-1)

    def value(self, x):
        X, Y, r1, r2 = self._split(x)
        return self._plane(r1, r2).v

    def gradient(self, x):
        X, Y, r1, r2 = self._split(x)
        P = self._plane(r1, r2)
        return np.concatenate([P.v1r[..., None] * X, P.v2r[..., None] * Y], axis=-1)

    def hessian(self, x):
        X, Y, r1, r2 = self._split(x)
        P = self._plane(r1, r2)
        p, q = self.p, self.q
        ex, ey = _safe_unit(X, r1), _safe_unit(Y, r2)
        H = np.zeros(r1.shape + (self.n, self.n))
        H[..., :p, :p] = (P.v1r[..., None, None] * np.eye(p)
                          + (P.v11 - P.v1r)[..., None, None] * ex[..., :, None] * ex[..., None, :])
        H[..., p:, p:] = (P.v2r[..., None, None] * np.eye(q)
                          + (P.v22 - P.v2r)[..., None, None] * ey[..., :, None] * ey[..., None, :])
        cross = P.v12[..., None, None] * ex[..., :, None] * ey[..., None, :]
        H[..., :p, p:] = cross
        H[..., p:, :p] = np.swapaxes(cross, -1, -2)
        return H


@dataclass
class LatitudeData:
    """Sampled nodal solution u(t) of the latitude ODE on [0, pi/2] with endpoint series.

    Near t = 0:   u = a0 + A t^2 + B t^4;  near t = pi/2 (s = pi/2 - t): u = b0 + C s^2 + D s^4.
    """
    p: int
    q: int
    t: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    series0: tuple
    series1: tuple
    patch: float = 1e-2
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.u = np.asarray(self.u, float)
        self.du = np.asarray(self.du, float)
        self.d2u = np.asarray(self.d2u, float)
        self.series0 = tuple(float(c) for c in self.series0)
        self.series1 = tuple(float(c) for c in self.series1)
        y = np.stack([self.u, self.du, self.d2u], axis=1)
        self._interp = BPoly.from_derivatives(self.t, y)
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)

    @property
    def n(self):
        return self.p + self.q

    def __call__(self, t):
        """(u, u', u'') at t in [0, pi/2]; series are used inside the endpoint patches."""
        t = np.asarray(t, float)
        u = np.empty_like(t)
        du = np.empty_like(t)
        d2 = np.empty_like(t)
        h = self.patch
        lo = t < h
        hi = t > np.pi / 2 - h
        mid = ~(lo | hi)
        a0, A, B = self.series0
        tl = t[lo]
        u[lo] = a0 + A * tl ** 2 + B * tl ** 4
        du[lo] = 2 * A * tl + 4 * B * tl ** 3
        d2[lo] = 2 * A + 12 * B * tl ** 2
        b0, C, D = self.series1
        s = np.pi / 2 - t[hi]
        u[hi] = b0 + C * s ** 2 + D * s ** 4
        du[hi] = -(2 * C * s + 4 * D * s ** 3)
        d2[hi] = 2 * C + 12 * D * s ** 2
        tm = t[mid]
        u[mid] = self._interp(tm)
        du[mid] = self._d1(tm)
        d2[mid] = self._d2(tm)
        return u, du, d2

    def to_dict(self):
        return {"p": self.p, "q": self.q, "patch": self.patch,
                "t": self.t.tolist(), "u": self.u.tolist(), "du": self.du.tolist(),
                "d2u": self.d2u.tolist(), "series0": list(self.series0),
                "series1": list(self.series1)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["p"]), int(d["q"]), d["t"], d["u"], d["du"], d["d2u"],
                   tuple(d["series0"]), tuple(d["series1"]), float(d.get("patch", 1e-2)))


class DingProfile(BiradialProfile):
    """Stereographic pullback V(x) = (2/(1+|x|^2))^{(n-2)/2} u(t(x)) of a latitude solution.

    With c = cos t = 2 r1/(1+r^2) the profile is V = phi(r) g(c), g(c) = u(arccos c),
    and all derivatives follow from the chain rule.
    """
    kind = "numeric-biradial"
    _SMALL_T = 1e-4

    def __init__(self, lat: LatitudeData, metadata=None):
        self.lat = lat
        self.p, self.q = lat.p, lat.q
        self.n = lat.n
        self.metadata = dict(metadata or {})

    def _g(self, one_minus_c, c):
        """g, g', g'' of g(c) = u(arccos c); one_minus_c passed separately for accuracy."""
        omc = np.clip(one_minus_c, 0.0, 2.0)
        t = 2.0 * np.arcsin(np.sqrt(0.5 * omc))
        u, du, d2u = self.lat(t)
        s = np.sqrt(omc * (2.0 - omc))           # sin t
        a0, A, B = self.lat.series0
        small = t < self._SMALL_T
        with np.errstate(invalid="ignore", divide="ignore"):
            g1 = np.where(small, -2 * A - (4 * B + A / 3) * t * t, -du / s)
            g2 = np.where(small, 2 * A / 3 + 8 * B, (d2u * s - du * c) / s ** 3)
        return u, g1, g2

    def _plane(self, r1, r2):
        k = self.k
        D = 1.0 + r1 * r1 + r2 * r2
        phi = (2.0 / D) ** k
        c = 2.0 * r1 / D
        omc = ((r1 - 1.0) ** 2 + r2 * r2) / D
        g, g1, g2 = self._g(omc, c)
        # phi_a = -2k x_a phi / D ; phi_ab = (-2k phi/D)(delta_ab - 2(k+1) x_a x_b / D)
        pf = -2.0 * k * phi / D
        phi1, phi2 = pf * r1, pf * r2
        phi11 = pf * (1 - 2 * (k + 1) * r1 * r1 / D)
        phi22 = pf * (1 - 2 * (k + 1) * r2 * r2 / D)
        phi12 = pf * (-2 * (k + 1) * r1 * r2 / D)
        c1 = 2.0 / D - 4.0 * r1 * r1 / D ** 2
        c2 = -4.0 * r1 * r2 / D ** 2
        c11 = -12.0 * r1 / D ** 2 + 16.0 * r1 ** 3 / D ** 3
        c12 = -4.0 * r2 / D ** 2 + 16.0 * r1 * r1 * r2 / D ** 3
        c22 = -4.0 * r1 / D ** 2 + 16.0 * r1 * r2 * r2 / D ** 3
        v = phi * g
        v1 = phi1 * g + phi * g1 * c1
        v2 = phi2 * g + phi * g1 * c2
        v11 = phi11 * g + 2 * phi1 * g1 * c1 + phi * g2 * c1 * c1 + phi * g1 * c11
        v22 = phi22 * g + 2 * phi2 * g1 * c2 + phi * g2 * c2 * c2 + phi * g1 * c22
        v12 = (phi12 * g + phi1 * g1 * c2 + phi2 * g1 * c1 + phi * g2 * c1 * c2
               + phi * g1 * c12)
        # d2V/r2 is exact: phi2/r2 = pf and c2/r2 = -4 r1/D^2
        v2r = pf * g + phi * g1 * (-4.0 * r1 / D ** 2)
        # d1V/r1: split c1 = 2/D + r1 * (-4 r1/D^2); g1 vanishes like c at the axis r1 = 0
        with np.errstate(invalid="ignore", divide="ignore"):
            g1_over_c = np.where(c > 1e-8, g1 / np.where(c > 1e-8, c, 1.0), g2)
        v1r = pf * g + phi * (g1_over_c * (2.0 / D) * (2.0 / D) + g1 * (-4.0 * r1 / D ** 2))
        return Plane(v, v1, v2, v11, v12, v22, v1r, v2r)

    def base_document(self):
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, "n": self.n,
                "p": self.p, "q": self.q, "latitude": self.lat.to_dict(),
                "metadata": self.metadata}


# ---------------------------------------------------------------------------
# transforms


class _Wrapped(Profile):
    def __init__(self, base: Profile):
        self.base = base
        self.n = base.n

    @property
    def kind(self):
        return self.base.kind

    @property
    def symmetry(self):
        return self.base.symmetry

    def base_document(self):
        return self.base.base_document()

    def plane(self, r1, r2, p=None, q=None):
        if p is None:
            split = self.biradial_split()
            if split is None:
                raise ProfileError("profile has no biradial symmetry; pass (p, q)")
            p, q = split
        return self._plane_from(r1, r2, p, q)

    def _plane_from(self, r1, r2, p, q):
        return Profile.plane(self, r1, r2, p, q)


class Negated(_Wrapped):
    def value(self, x):
        return -self.base.value(x)

    def gradient(self, x):
        return -self.base.gradient(x)

    def hessian(self, x):
        return -self.base.hessian(x)

    def _plane_from(self, r1, r2, p, q):
        return Plane(*(-a for a in self.base.plane(r1, r2, p, q)))

    def ray(self, r):
        return Ray(*(-a for a in self.base.ray(r)))

    def transform_chain(self):
        return self.base.transform_chain() + [{"op": "negate"}]


class Scaled(_Wrapped):
    """V_mu(x) = mu^{-(n-2)/2} V(x/mu)."""

    def __init__(self, base, mu):
        super().__init__(base)
        if not mu > 0:
            raise ProfileError("scale must be positive")
        self.mu = float(mu)

    def value(self, x):
        return self.mu ** (-self.k) * self.base.value(np.asarray(x, float) / self.mu)

    def gradient(self, x):
        return self.mu ** (-self.k - 1) * self.base.gradient(np.asarray(x, float) / self.mu)

    def hessian(self, x):
        return self.mu ** (-self.k - 2) * self.base.hessian(np.asarray(x, float) / self.mu)

    def _plane_from(self, r1, r2, p, q):
        P = self.base.plane(np.asarray(r1, float) / self.mu, np.asarray(r2, float) / self.mu, p, q)
        m, k = self.mu, self.k
        return Plane(m ** -k * P.v, m ** (-k - 1) * P.v1, m ** (-k - 1) * P.v2,
                     m ** (-k - 2) * P.v11, m ** (-k - 2) * P.v12, m ** (-k - 2) * P.v22,
                     m ** (-k - 2) * P.v1r, m ** (-k - 2) * P.v2r)

    def ray(self, r):
        R = self.base.ray(np.asarray(r, float) / self.mu)
        m, k = self.mu, self.k
        return Ray(m ** -k * R.v, m ** (-k - 1) * R.dv, m ** (-k - 2) * R.d2v, m ** (-k - 2) * R.dv_r)

    def transform_chain(self):
        return self.base.transform_chain() + [{"op": "scale", "mu": self.mu}]


class Kelvin(_Wrapped):
    """V*(x) = |x|^{2-n} V(x/|x|^2); derivatives by the chain rule.

    At x = 0 the value is the limit lambda(V), obtained by extrapolation.
    """

    def __init__(self, base):
        super().__init__(base)
        self._origin = None

    def _origin_value(self):
        if self._origin is None:
            self._origin = kelvin_origin_value(self.base)[0]
        return self._origin

    def _parts(self, x):
        x = np.asarray(x, float)
        rho = np.sum(x * x, axis=-1)
        zero = rho == 0.0
        rho_s = np.where(zero, 1.0, rho)
        y = x / rho_s[..., None]
        return x, rho_s, y, zero

    def value(self, x):
        x, rho, y, zero = self._parts(x)
        v = rho ** (-self.k) * self.base.value(y)
        if np.any(zero):
            v = np.where(zero, self._origin_value(), v)
        return v

    def gradient(self, x):
        x, rho, y, zero = self._parts(x)
        k = self.k
        V = self.base.value(y)
        g = self.base.gradient(y)
        f = rho ** (-k)
        fi = -2 * k * x * (rho ** (-k - 1))[..., None]
        Jg = g / rho[..., None] - 2 * x * (np.sum(x * g, axis=-1) / rho ** 2)[..., None]
        out = fi * V[..., None] + f[..., None] * Jg
        if np.any(zero):
            out = np.where(zero[..., None], np.nan, out)
        return out

    def hessian(self, x):
        x, rho, y, zero = self._parts(x)
        k, n = self.k, self.n
        V = self.base.value(y)
        g = self.base.gradient(y)
        H = self.base.hessian(y)
        I = np.eye(n)
        f = rho ** (-k)
        fi = -2 * k * x * (rho ** (-k - 1))[..., None]
        xx = x[..., :, None] * x[..., None, :]
        fij = -2 * k * ((rho ** (-k - 1))[..., None, None] * I
                        - 2 * (k + 1) * (rho ** (-k - 2))[..., None, None] * xx)
        # J_{ki} = delta_ki/rho - 2 x_k x_i/rho^2
        J = I / rho[..., None, None] - 2 * xx / (rho ** 2)[..., None, None]
        Jg = np.einsum("...ki,...k->...i", J, g)
        gx = np.sum(g * x, axis=-1)
        gdJ = (-2 * (g[..., :, None] * x[..., None, :] + x[..., :, None] * g[..., None, :]
                     + gx[..., None, None] * I) / (rho ** 2)[..., None, None]
               + 8 * gx[..., None, None] * xx / (rho ** 3)[..., None, None])
        JHJ = np.einsum("...ki,...kl,...lj->...ij", J, H, J)
        out = (fij * V[..., None, None] + fi[..., :, None] * Jg[..., None, :]
               + Jg[..., :, None] * fi[..., None, :] + f[..., None, None] * (gdJ + JHJ))
        if np.any(zero):
            out = np.where(zero[..., None, None], np.nan, out)
        return out

    def transform_chain(self):
        return self.base.transform_chain() + [{"op": "kelvin"}]


def kelvin(v: Profile) -> Profile:
    """Kelvin transform; (V*)* is returned as V itself only through evaluation, not identity."""
    return Kelvin(v)


def kelvin_origin_value(v: Profile, h0: float = 2e-2, levels: int = 4):
    """lambda(V) = V*(0) by Richardson extrapolation of even averages of V* near 0.

    Returns (value, error estimate).
    """
    n = v.n
    dirs = _probe_directions(v)
    hs = h0 / 2.0 ** np.arange(levels)
    est = []
    for h in hs:
        vals = []
        for e in dirs:
            y = h * e
            x = y / (h * h)
            vals.append(0.5 * (h ** (2 - n) * v.value(x) + h ** (2 - n) * v.value(-x)))
        est.append(np.mean(vals))
    return _richardson(np.array(est), hs, (2, 4, 6))


def _probe_directions(v: Profile):
    n = v.n
    split = v.biradial_split()
    dirs = []
    if split is not None:
        p, q = split
        for a in (0.3, 0.9, 1.3):
            e = np.zeros(n)
            e[0], e[p] = math.cos(a), math.sin(a)
            dirs.append(e)
    else:
        dirs = [np.eye(n)[0]]
    return dirs


def _richardson(est, hs, orders):
    """Polynomial extrapolation to h=0 assuming error terms h^order; returns (value, err)."""
    T = [np.asarray(est, float)]
    ratio = hs[0] / hs[1]
    for j, o in enumerate(orders[: len(est) - 1]):
        prev = T[-1]
        f = ratio ** o
        T.append((f * prev[1:] - prev[:-1]) / (f - 1.0))
    best = T[-1][-1]
    err = abs(T[-1][-1] - T[-2][-1]) if len(T) > 1 else np.inf
    return float(best), float(err)


@dataclass
class AlphaResult:
    alpha: np.ndarray
    error: float
    converged: bool


def alpha_invariant(v: Profile, h0: float = 2e-2, levels: int = 5) -> AlphaResult:
    """alpha(V) = grad V*(0) by central differences of V* with Richardson extrapolation."""
    n = v.n
    hs = h0 / 2.0 ** np.arange(levels)
    alpha = np.zeros(n)
    errs = np.zeros(n)
    converged = True
    for i in range(n):
        e = np.eye(n)[i]
        seq = []
        for h in hs:
            x = e / h     # y = h e  ->  x = y/|y|^2
            seq.append((h ** (2 - n) * v.value(x) - h ** (2 - n) * v.value(-x)) / (2 * h))
        seq = np.array(seq)
        val, err = _richardson(seq, hs, (2, 4, 6, 8))
        alpha[i], errs[i] = val, err
        d = np.abs(np.diff(seq))
        scale = max(1.0, float(np.max(np.abs(seq))))
        if len(d) > 2 and d[-1] > 0.75 * d[-2] and d[-1] > 1e-9 * scale:
            converged = False
    return AlphaResult(alpha, float(np.max(errs)), converged)


# ---------------------------------------------------------------------------
# integrals over R^n


def profile_integral(v: Profile, integrand, spec: Optional[nm.QuadratureSpec] = None,
                     decay: Optional[float] = None, full_output: bool = False):
    """Integrate integrand(P) over R^n where P is a Plane (biradial) or Ray (radial)."""
    if v.is_radial():
        spec = spec or nm.DEFAULT_1D
        res = nm.integrate_radial_rn(lambda r: integrand(v.ray(r)), v.n, spec, full_output=True)
    elif v.biradial_split() is not None:
        p, q = v.biradial_split()
        spec = spec or nm.DEFAULT_2D
        res = nm.integrate_biradial(lambda a, b: integrand(v.plane(a, b, p, q)), p, q, spec,
                                    decay=decay, full_output=True)
    else:
        raise ProfileError("quadrature requires a radial or biradial profile")
    return res if full_output else res.value


def _grad_sq(P):
    if isinstance(P, Ray):
        return P.dv ** 2
    return P.v1 ** 2 + P.v2 ** 2


def lambda_quadrature(v: Profile, spec=None, full_output=False):
    n = v.n
    res = profile_integral(v, lambda P: nonlinearity(P.v, n), spec, full_output=True)
    c = 1.0 / ((n - 2) * nm.sphere_area(n - 1))
    out = nm.QuadResult(c * res.value, c * res.error, res.evals, res.meta)
    return out if full_output else out.value


@dataclass
class LambdaResult:
    value: float
    quadrature: float
    kelvin: float
    quadrature_error: float
    kelvin_error: float


def lambda_invariant(v: Profile, spec=None, rel_check: float = 1e-6,
                     full_output: bool = False):
    """lambda(V) = (1/((n-2) omega_{n-1})) int |V|^{2*-2} V, checked against V*(0)."""
    q = lambda_quadrature(v, spec, full_output=True)
    kv, kerr = kelvin_origin_value(v)
    tol = 10.0 * max(rel_check * max(abs(q.value), abs(kv)), q.error + kerr, 1e-12)
    if abs(q.value - kv) > tol:
        raise InconsistencyError(
            f"lambda routes disagree: quadrature {q.value!r} vs Kelvin {kv!r} (tol {tol:.2e})")
    res = LambdaResult(q.value, q.value, kv, q.error, kerr)
    return res if full_output else res.value


FUNCTIONALS = ("int_V_2star", "int_grad_sq", "int_V2", "int_signed", "lambda")


def functionals(v: Profile, spec=None, which=FUNCTIONALS) -> dict:
    """Integral functionals of V with quadrature error estimates.

    int_V_2star = int |V|^{2*}, int_grad_sq = int |grad V|^2, int_V2 = int V^2
    (n >= 5 only), int_signed = int |V|^{2*-2} V, lambda = int_signed/((n-2) omega_{n-1}).
    """
    n = v.n
    ps = critical_exponent(n)
    out = {}
    for name in which:
        if name == "int_V2" and n <= 4:
            raise nm.NonIntegrable(
                f"int V^2 diverges for n = {n}: |V|^2 ~ |x|^{2 * (2 - n)} is not integrable")
        if name == "lambda":
            res = lambda_quadrature(v, spec, full_output=True)
        else:
            fn = {
                "int_V_2star": lambda P: np.abs(P.v) ** ps,
                "int_grad_sq": _grad_sq,
                "int_V2": lambda P: P.v ** 2,
                "int_signed": lambda P: nonlinearity(P.v, n),
            }[name]
            res = profile_integral(v, fn, spec, full_output=True)
        out[name] = {"value": float(res.value), "error": float(res.error)}
    return out


def decay_check(v: Profile, R_max: float = 1e4, points: int = 2000, r_min: float = 1e-3) -> dict:
    """Sup constants of (1+r)^{n-2}|V|, (1+r)^{n-1}|grad V|, (1+r)^n |Hess V| on a log grid."""
    n = v.n
    r = np.concatenate([[0.0], np.geomspace(r_min, R_max, points)])
    dirs = _probe_directions(v) if not v.is_radial() else [np.eye(n)[0]]
    if v.biradial_split() is not None:
        p, _ = v.biradial_split()
        dirs = []
        for a in np.linspace(0.0, np.pi / 2, 9):
            e = np.zeros(n)
            e[0], e[p] = math.cos(a), math.sin(a)
            dirs.append(e)
    c0 = c1 = c2 = 0.0
    for e in dirs:
        x = r[:, None] * e[None, :]
        w = 1.0 + r
        V = v.value(x)
        G = np.linalg.norm(v.gradient(x), axis=-1)
        H = np.linalg.norm(v.hessian(x), axis=(-2, -1), ord=2)
        c0 = max(c0, float(np.max(w ** (n - 2) * np.abs(V))))
        c1 = max(c1, float(np.max(w ** (n - 1) * G)))
        c2 = max(c2, float(np.max(w ** n * H)))
    return {"C_value": c0, "C_gradient": c1, "C_hessian": c2, "R_max": R_max,
            "points": points, "directions": len(dirs)}


# ---------------------------------------------------------------------------
# residual of the flat equation


def flat_residual(v: Profile, r_max: float = 20.0, points: int = 60) -> float:
    """sup |Delta V - |V|^{2*-2}V| / sup |V|^{2*-1} on an interior grid (Delta = -div grad).

    Biradial profiles use  Delta V = -(V11 + (p-1)/r1 V1 + V22 + (q-1)/r2 V2).
    """
    n = v.n
    s = np.linspace(0.0, 1.0, points + 2)[1:-1]
    rr = r_max * s ** 2
    if v.biradial_split() is not None:
        p, q = v.biradial_split()
        R1, R2 = np.meshgrid(rr, rr, indexing="ij")
        P = v.plane(R1, R2, p, q)
        lap = -(P.v11 + (p - 1) * P.v1 / R1 + P.v22 + (q - 1) * P.v2 / R2)
        V = P.v
    else:
        x = np.zeros((rr.size, n))
        x[:, 0] = rr
        lap = v.laplacian(x)
        V = v.value(x)
    res = np.max(np.abs(lap - nonlinearity(V, n)))
    scale = max(np.max(np.abs(V)) ** (critical_exponent(n) - 1), np.finfo(float).tiny)
    return float(res / scale)


# ---------------------------------------------------------------------------
# serialisation


def profile_from_document(doc: dict) -> Profile:
    kind = doc.get("kind")
    if kind == "closed-form-standard":
        prof: Profile = StandardBubble(int(doc["n"]), float(doc.get("mu", 1.0)))
    elif kind == "numeric-radial":
        g, d = doc["grid"], doc["derivatives"]
        prof = SampledRadialProfile(int(doc["n"]), g["r"], g["v"], d["dv"], d["d2v"],
                                    tuple(doc.get("series", (1.0, 0.0, 0.0))), doc.get("metadata"))
    elif kind == "numeric-biradial":
        prof = DingProfile(LatitudeData.from_dict(doc["latitude"]), doc.get("metadata"))
    else:
        raise ProfileError(f"unknown profile kind {kind!r}")
    for t in doc.get("transforms", []):
        op = t["op"]
        if op == "negate":
            prof = Negated(prof)
        elif op == "scale":
            prof = Scaled(prof, float(t["mu"]))
        elif op == "kelvin":
            prof = Kelvin(prof)
        elif op == "swap":
            prof = FactorSwap(prof)
        else:
            raise ProfileError(f"unknown transform {op!r}")
    return prof


class FactorSwap(BiradialProfile):
    """Exchange the two factors: W(x'', x') = V(x', x'') viewed on R^q x R^p."""

    def __init__(self, base: Profile):
        split = base.biradial_split()
        if split is None:
            raise ProfileError("factor exchange needs a biradial profile")
        self.base = base
        self.n = base.n
        self.p, self.q = split[1], split[0]

    @property
    def kind(self):
        return self.base.kind

    def _plane(self, r1, r2):
        P = self.base.plane(r2, r1)
        return Plane(P.v, P.v2, P.v1, P.v22, P.v12, P.v11, P.v2r, P.v1r)

    def base_document(self):
        return self.base.base_document()

    def transform_chain(self):
        return self.base.transform_chain() + [{"op": "swap"}]
