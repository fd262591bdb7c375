"""Necessary conditions for blow-up of sign-changing solutions modelled on a bubble V.

For a blow-up point x0 the limiting rate Lambda must be >= 0, where

    n >= 5:  Lambda = Weyl(x0) (x) B + 4n/(n-2)^2 * int V^2 / int |V|^{2*} * (h(x0) - c_n S_g(x0))
    n = 4:   Lambda = (int |V|^2 V)^2 / (omega_3 int V^4) * (h(x0) - S_g(x0)/6)
    n = 3:   Lambda = -6 (int |V|^4 V)^2 / int V^6 * m_h(x0)

with c_n = (n-2)/(4(n-1)).  A negative Lambda rules the configuration out.  A
non-negative one is only consistent with the conditions, it does not assert that
blow-up happens.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from . import numerics as nm
from .curvature import AlgebraicCurvatureTensor, ProductSphereWeyl
from .profiles import (Profile, alpha_invariant, critical_exponent, functionals,
                       lambda_invariant, profile_integral)

TOL = 1e-9

CONSISTENT = "CONSISTENT"
RULED_OUT = "RULED_OUT"
FORCES_LAMBDA_ZERO = "FORCES_LAMBDA_ZERO"
CERTIFIED_NO_BLOWUP = "CERTIFIED_NO_BLOWUP"

CONSISTENT_NOTE = ("CONSISTENT means the necessary condition Lambda >= 0 is satisfied; "
                   "it does not assert that a blowing-up family exists.")


class ObstructionError(ValueError):
    pass


class ParameterError(ObstructionError):
    pass


def conformal_constant(n: int) -> float:
    """c_n = (n-2)/(4(n-1))."""
    return (n - 2) / (4.0 * (n - 1))


@dataclass
class PointData:
    n: int
    h_at_x0: float
    Sg_at_x0: float
    weyl: Union[None, str, ProductSphereWeyl, AlgebraicCurvatureTensor] = None
    mass_at_x0: Optional[float] = None

    def __post_init__(self):
        if self.n < 3:
            raise ObstructionError("dimension must be >= 3")
        if (self.mass_at_x0 is not None) != (self.n == 3):
            raise ObstructionError("the Green mass is provided exactly when n = 3")
        if self.n >= 5 and self.weyl is None:
            raise ObstructionError("a Weyl tensor (or 'zero') is required when n >= 5")
        if self.n <= 4 and self.weyl not in (None, "zero"):
            raise ObstructionError("Weyl data only enters the conditions for n >= 5")
        if isinstance(self.weyl, (ProductSphereWeyl, AlgebraicCurvatureTensor)) and self.weyl.n != self.n:
            raise ObstructionError("Weyl tensor dimension does not match n")

    @property
    def weyl_is_zero(self) -> bool:
        if self.weyl == "zero":
            return True
        if isinstance(self.weyl, AlgebraicCurvatureTensor):
            return not np.any(self.weyl.components)
        return False


@dataclass
class BubbleSummary:
    n: int
    lambda_: float
    alpha: list
    int_V_2star: float
    int_signed_2star_minus1: float
    int_V2: Optional[float] = None
    weyl_otimes_b: Optional[float] = None
    int_V4: Optional[float] = None   # n = 4: int |V|^4 (equals int |V|^{2*})
    meta: dict = field(default_factory=dict)

    def consistency_defect(self) -> float:
        """Relative mismatch between int |V|^{2*-2}V and (n-2) omega_{n-1} lambda."""
        ref = (self.n - 2) * nm.sphere_area(self.n - 1) * self.lambda_
        s = max(abs(ref), abs(self.int_signed_2star_minus1))
        return 0.0 if s == 0 else abs(ref - self.int_signed_2star_minus1) / s

    def to_document(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        d.update({"schema_version": 1, "type": "bubble-summary"})
        return d

    @classmethod
    def from_document(cls, doc: dict) -> "BubbleSummary":
        return cls(int(doc["n"]), float(doc["lambda"]), list(doc.get("alpha", [])),
                   float(doc["int_V_2star"]), float(doc["int_signed_2star_minus1"]),
                   doc.get("int_V2"), doc.get("weyl_otimes_b"), doc.get("int_V4"),
                   dict(doc.get("meta", {})))


def summarize_bubble(v: Profile, weyl=None, spec=None) -> BubbleSummary:
    """Compute every functional the conditions need, each by this package's own quadrature."""
    n = v.n
    which = ["int_V_2star", "int_signed"] + (["int_V2"] if n >= 5 else [])
    f = functionals(v, spec, which)
    lam = lambda_invariant(v, spec)
    alpha = alpha_invariant(v)
    wb = None
    if n >= 5 and weyl is not None:
        if weyl == "zero":
            wb = 0.0
        else:
            from .weyl_product import weyl_otimes_b_gradient
            wb = weyl_otimes_b_gradient(weyl, v, spec).value
    return BubbleSummary(n, float(lam), [float(a) for a in alpha.alpha], f["int_V_2star"]["value"],
                         f["int_signed"]["value"], f["int_V2"]["value"] if n >= 5 else None, wb,
                         f["int_V_2star"]["value"] if n == 4 else None,
                         {"alpha_converged": alpha.converged, "kind": v.kind})


@dataclass
class ObstructionReport:
    Lambda_implied: float
    verdict: str
    branch: str
    audit: list
    notes: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        return {"schema_version": 1, "type": "obstruction-report",
                "Lambda_implied": self.Lambda_implied, "verdict": self.verdict,
                "branch": self.branch, "audit": [list(a) for a in self.audit],
                "checks": self.checks, "notes": self.notes}


def _verdict(Lam: float, tol: float, critical: bool) -> str:
    if Lam < -tol:
        return RULED_OUT
    if critical and Lam > tol:
        return RULED_OUT
    return CONSISTENT


def implied_rate(point: PointData, bubble: BubbleSummary, tol: float = TOL,
                 critical: bool = False) -> ObstructionReport:
    """Lambda from the point data and the bubble functionals, with the per-term audit trail.

    critical=True asserts that the exponents are exactly critical, so Lambda must vanish.
    """
    n = point.n
    if bubble.n != n:
        raise ObstructionError(f"bubble dimension {bubble.n} does not match point dimension {n}")
    audit = [("h(x0)", point.h_at_x0), ("S_g(x0)", point.Sg_at_x0)]
    if n >= 5:
        cn = conformal_constant(n)
        if bubble.int_V2 is None:
            raise ObstructionError("int V^2 is required for n >= 5")
        if point.weyl_is_zero:
            wb = 0.0
        elif bubble.weyl_otimes_b is None:
            raise ObstructionError("Weyl (x) B is required for n >= 5 with non-zero Weyl tensor")
        else:
            wb = float(bubble.weyl_otimes_b)
        coeff = 4.0 * n / (n - 2) ** 2 * bubble.int_V2 / bubble.int_V_2star
        gap = point.h_at_x0 - cn * point.Sg_at_x0
        Lam = wb + coeff * gap
        audit += [("c_n", cn), ("Weyl(x)B", wb), ("int V^2", bubble.int_V2),
                  ("int |V|^2*", bubble.int_V_2star), ("potential coefficient", coeff),
                  ("h - c_n S_g", gap), ("Lambda", Lam)]
        branch = "n5plus"
    elif n == 4:
        w3 = nm.sphere_area(3)
        I4 = bubble.int_V4 if bubble.int_V4 is not None else bubble.int_V_2star
        coeff = bubble.int_signed_2star_minus1 ** 2 / (w3 * I4)
        coeff_lambda = 4.0 * w3 * bubble.lambda_ ** 2 / I4
        gap = point.h_at_x0 - point.Sg_at_x0 / 6.0
        Lam = coeff * gap
        audit += [("int |V|^2 V", bubble.int_signed_2star_minus1), ("int V^4", I4),
                  ("coefficient (signed-integral form)", coeff),
                  ("coefficient (lambda form)", coeff_lambda),
                  ("h - S_g/6", gap), ("Lambda", Lam)]
        branch = "n4"
    elif n == 3:
        if point.mass_at_x0 is None:
            raise ObstructionError("the Green mass is required for n = 3")
        I6 = bubble.int_V_2star
        coeff = -6.0 * bubble.int_signed_2star_minus1 ** 2 / I6
        coeff_lambda = -96.0 * math.pi ** 2 * bubble.lambda_ ** 2 / I6
        Lam = coeff * point.mass_at_x0
        audit += [("m_h(x0)", point.mass_at_x0), ("int |V|^4 V", bubble.int_signed_2star_minus1),
                  ("int V^6", I6), ("coefficient (signed-integral form)", coeff),
                  ("coefficient (lambda form)", coeff_lambda), ("Lambda", Lam)]
        branch = "n3"
    else:
        raise ObstructionError("dimension must be >= 3")
    verdict = _verdict(Lam, tol, critical)
    notes = [CONSISTENT_NOTE] if verdict == CONSISTENT else []
    return ObstructionReport(float(Lam), verdict, branch, audit, notes)


def rule_out_by_decay(point: PointData, bubble: BubbleSummary, tol: float = TOL) -> ObstructionReport:
    """n = 3 with positive mass, or n = 4 with h < S_g/6, forces int |V|^{2*-2} V = 0."""
    n = point.n
    if n not in (3, 4):
        raise ObstructionError("the decay rule-out applies to n = 3 and n = 4 only")
    if n == 3:
        hyp = point.mass_at_x0 > 0
        audit = [("m_h(x0)", point.mass_at_x0)]
    else:
        hyp = point.h_at_x0 - point.Sg_at_x0 / 6.0 < 0
        audit = [("h - S_g/6", point.h_at_x0 - point.Sg_at_x0 / 6.0)]
    audit += [("hypothesis holds", bool(hyp)), ("lambda(V)", bubble.lambda_),
              ("int |V|^{2*-2} V", bubble.int_signed_2star_minus1)]
    branch = "n3" if n == 3 else "n4"
    if not hyp:
        rep = implied_rate(point, bubble, tol)
        return ObstructionReport(rep.Lambda_implied, CONSISTENT, branch, audit + rep.audit,
                                 ["hypothesis fails: no constraint on lambda(V)", CONSISTENT_NOTE])
    if abs(bubble.lambda_) <= tol:
        return ObstructionReport(0.0, FORCES_LAMBDA_ZERO, branch, audit,
                                 ["an admissible bubble must have lambda(V) = 0; this one does"])
    rep = implied_rate(point, bubble, tol)
    return ObstructionReport(rep.Lambda_implied, RULED_OUT, branch, audit + rep.audit,
                             ["lambda(V) != 0 although the hypothesis forces it to vanish"])


def phi_ell(h_at_xi: float, Sg_at_xi: float, n: int, ell: int) -> float:
    """h(xi) - c_n (1 + (n-4) ell / (3n)) S_g(xi)."""
    if ell < 1:
        raise ParameterError("ell must be >= 1")
    return h_at_xi - conformal_constant(n) * (1.0 + (n - 4) * ell / (3.0 * n)) * Sg_at_xi


def admissible_interval(n: int):
    return 1.0, 1.0 + (n - 4) / (3.0 * n)


def smooth_cutoff(s):
    """C-infinity function equal to 1 on [0, 1] and 0 on [2, inf)."""
    s = np.asarray(s, float)

    def psi(x):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)

    a = psi(2.0 - s)
    b = psi(s - 1.0)
    return a / (a + b)


def certificate_potential(n: int, t: float, delta: float, xi0=None):
    """h_delta(x) = 1 - chi(d/delta) + chi(d/delta)(-t c_n + d^2), d = |x - xi0|."""
    cn = conformal_constant(n)
    xi0 = np.zeros(n) if xi0 is None else np.asarray(xi0, float)

    def h(x):
        x = np.asarray(x, float)
        d2 = np.sum((x - xi0) ** 2, axis=-1)
        chi = smooth_cutoff(np.sqrt(d2) / delta)
        return 1.0 - chi + chi * (-t * cn + d2)

    return h


def _lnorm_proxy(n, t, delta):
    """||h_delta - 1||_{L^{n/2}(R^n)} by radial quadrature (h - 1 is supported in d < 2 delta)."""
    cn = conformal_constant(n)

    def f(r):
        chi = smooth_cutoff(r / delta)
        return np.abs(chi * (-t * cn - 1.0 + r * r)) ** (n / 2.0) * r ** (n - 1)

    val = nm.sphere_area(n - 1) * nm.integrate_1d(f, 0.0, 2 * delta, nm.DEFAULT_1D,
                                                  breakpoints=[delta])
    return val ** (2.0 / n)


def certify_no_blowup(n: int, t: float, xi0=None, delta: float = 0.1,
                      ells=range(1, 51)) -> ObstructionReport:
    """Check the local construction on a flat patch with S_g = -1 and vanishing Weyl tensor."""
    if n == 4:
        raise ParameterError("n = 4 is unsupported: the admissible interval for t is empty")
    if n < 5:
        raise ParameterError("the certifier needs n >= 5")
    lo, hi = admissible_interval(n)
    if not (lo < t < hi):
        raise ParameterError(f"t = {t} outside the admissible open interval ({lo}, {hi})")
    if not delta > 0:
        raise ParameterError("delta must be positive")
    xi0 = np.zeros(n) if xi0 is None else np.asarray(xi0, float)
    cn = conformal_constant(n)
    Sg = -1.0
    h = certificate_potential(n, t, delta, xi0)
    checks = {}

    h0 = float(h(xi0))
    checks["value"] = {"h(xi0)": h0, "target": -t * cn, "pass": bool(abs(h0 + t * cn) <= 1e-15)}

    step = 1e-5
    I = np.eye(n)
    grad = np.array([(h(xi0 + step * e) - h(xi0 - step * e)) / (2 * step) for e in I])
    gnorm = float(np.max(np.abs(grad)))
    checks["gradient"] = {"max_abs": gnorm, "pass": gnorm < 1e-8}

    hs = 1e-3
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = I[i] * hs, I[j] * hs
            H[i, j] = (h(xi0 + ei + ej) - h(xi0 + ei - ej) - h(xi0 - ei + ej)
                       + h(xi0 - ei - ej)) / (4 * hs * hs)
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    hdev = float(np.max(np.abs(H - 2 * I)))
    checks["hessian"] = {"max_dev_from_2I": hdev, "min_eigenvalue": float(eig[0]),
                         "pass": bool(hdev < 1e-6 and eig[0] > 0)}

    deltas = [delta, delta / 2, delta / 4]
    norms = [_lnorm_proxy(n, t, d) for d in deltas]
    consts = [nv / d ** 2 for nv, d in zip(norms, deltas)]
    spread = max(consts) / min(consts)
    checks["coercivity_proxy"] = {"deltas": deltas, "norms": norms, "C": consts,
                                  "C_spread": spread, "pass": bool(spread < 1.1)}

    phis = [phi_ell(h0, Sg, n, ell) for ell in ells]
    inc = all(b > a for a, b in zip(phis, phis[1:]))
    checks["phi_ell"] = {"min": min(phis), "first": phis[0], "last": phis[-1],
                         "increasing": inc, "pass": bool(min(phis) > 0 and inc)}

    gap = h0 - cn * Sg
    checks["contradiction"] = {"h(xi0) + c_n": gap, "expected": cn * (1 - t),
                               "pass": bool(gap < 0)}

    ok = all(c["pass"] for c in checks.values())
    audit = [("n", n), ("t", t), ("c_n", cn), ("S_g", Sg), ("Weyl", 0.0), ("delta", delta),
             ("h(xi0)", h0), ("h(xi0) - c_n S_g(xi0)", gap)]
    notes = ["Lambda_implied is h(xi0) - c_n S_g(xi0); for every bubble Lambda is a positive "
             "multiple of it because the Weyl tensor vanishes"]
    verdict = CERTIFIED_NO_BLOWUP if ok else CONSISTENT
    if not ok:
        notes.append("certificate not issued: a check failed")
    return ObstructionReport(float(gap), verdict, "section6", audit, notes, checks)
