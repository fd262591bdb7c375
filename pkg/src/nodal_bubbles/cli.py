"""Command-line frontend.

Exit codes: 0 success, 2 usage or malformed input, 3 numerical failure,
4 verdict RULED_OUT when --assert-consistent was given.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

from . import curvature as cv
from . import numerics as nm
from . import profiles as pr

CONFIG_ENV = "NODAL_BUBBLES_CONFIG"

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_RULED_OUT = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schemas and persistence


def load_schema(name: str) -> dict:
    text = resources.files("nodal_bubbles").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc: dict, name: str) -> dict:
    jsonschema.validate(doc, load_schema(name))
    return doc


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the target directory and rename over the destination."""
    target = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(target), prefix=".tmp-", suffix=os.path.basename(target))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(_jsonable(doc), indent=2) + "\n"


def read_json(path: str) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not valid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Per-run overrides.  Absent fields mean "use the module default"."""
    tolerances: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: Optional[int] = None
    format: str = "json"

    def to_dict(self) -> dict:
        d = {"schema_version": 1, "tolerances": self.tolerances, "outputs": self.outputs,
             "format": self.format}
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate(d, "run-config")
        return cls(dict(d.get("tolerances", {})), dict(d.get("outputs", {})), d.get("seed"),
                   d.get("format", "json"))

    @classmethod
    def load(cls, path: Optional[str] = None) -> "RunConfig":
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            return cls()
        return cls.from_dict(read_json(path))

    def quad_spec(self, key: str, base: nm.QuadratureSpec) -> nm.QuadratureSpec:
        over = self.tolerances.get(key, {})
        spec = base.with_(**over) if over else base
        if key == "montecarlo" and self.seed is not None:
            spec = spec.with_(seed=self.seed)
        return spec

    def ode_spec(self, base: nm.OdeSpec) -> nm.OdeSpec:
        from dataclasses import replace
        over = self.tolerances.get("ode", {})
        return replace(base, **over) if over else base

    @property
    def verdict_tol(self) -> Optional[float]:
        return self.tolerances.get("verdict_tol")


# ---------------------------------------------------------------------------
# inputs


def load_profile(ref: str) -> pr.Profile:
    """A profile from a file (profile or latitude-solution document) or 'standard:N[:MU]'."""
    if ref.startswith("standard:"):
        parts = ref.split(":")
        try:
            n = int(parts[1])
            mu = float(parts[2]) if len(parts) > 2 else 1.0
        except (IndexError, ValueError) as exc:
            raise UsageError(f"malformed profile shorthand {ref!r}") from exc
        if n < 3:
            raise UsageError("dimension must be >= 3")
        return pr.StandardBubble(n, mu)
    doc = read_json(ref)
    return profile_from_any(doc)


def profile_from_any(doc: dict) -> pr.Profile:
    if doc.get("type") == "latitude-solution":
        from .ding import LatitudeSolution
        validate(doc, "latitude-solution")
        sol = LatitudeSolution.from_document(doc)
        return pr.DingProfile(sol.data, dict(sol.meta))
    validate(doc, "profile")
    return pr.profile_from_document(doc)


def load_bubble_summary(ref: str, weyl=None):
    """Bubble summary from a summary document, or computed from a profile reference."""
    from .obstruction import BubbleSummary, summarize_bubble
    if not ref.startswith("standard:"):
        doc = read_json(ref)
        if doc.get("type") == "bubble-summary":
            validate(doc, "bubble-summary")
            return BubbleSummary.from_document(doc)
        v = profile_from_any(doc)
    else:
        v = load_profile(ref)
    return summarize_bubble(v, weyl)


# ---------------------------------------------------------------------------
# plot data


def plot_rows(doc: dict):
    """(header, rows) of the plot-ready table for a result document."""
    kind = doc.get("type") or doc.get("kind")
    if kind == "latitude-solution":
        g = doc["grid"]
        rows = list(zip(g["t"], g["u"], g["du"]))
        # the stored grid stops at the series patches; both endpoints are regular with u' = 0
        if rows and rows[0][0] > 0:
            rows.insert(0, (0.0, g["series0"][0], 0.0))
        if rows and rows[-1][0] < math.pi / 2:
            rows.append((math.pi / 2, g["series1"][0], 0.0))
        return ["t", "u", "du"], rows
    if kind == "mass-sweep":
        return ["h0", "mass"], [(r["h0"], r["mass"]) for r in doc.get("rows", [])]
    if kind == "mass-result":
        gp = doc.get("green_profile") or {}
        return ["theta", "G"], list(zip(gp.get("theta", []), gp.get("G", [])))
    if kind == "obstruction-report":
        return ["term", "value"], [tuple(a) for a in doc.get("audit", [])]
    if kind == "pohozaev-sweep":
        return (["delta", "boundary_term", "volume_subcritical_term", "volume_potential_term",
                 "relative_residual"],
                [(r["delta"], r["boundary_term"], r["volume_subcritical_term"],
                  r["volume_potential_term"], r["relative_residual"]) for r in doc.get("reports", [])])
    if kind in ("numeric-biradial", "closed-form-standard", "numeric-radial"):
        v = pr.profile_from_document(doc)
        return profile_grid(v)
    raise UsageError(f"no plot layout for document type {kind!r}")


def profile_grid(v: pr.Profile, r_max: float = 4.0, points: int = 41):
    split = v.biradial_split()
    if split is None:
        r = np.linspace(0.0, r_max, points)
        return ["r", "V"], list(zip(r.tolist(), v.ray(r).v.tolist()))
    p, q = split
    g = np.linspace(0.0, r_max, points)
    R1, R2 = np.meshgrid(g, g, indexing="ij")
    V = v.plane(R1.ravel(), R2.ravel(), p, q).v
    return ["r1", "r2", "V"], list(zip(R1.ravel().tolist(), R2.ravel().tolist(), V.tolist()))


def emit_plot_data(doc: dict, path: Optional[str] = None) -> str:
    """CSV text with a header row; written atomically when a path is given."""
    header, rows = plot_rows(doc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    text = buf.getvalue()
    if path:
        write_atomic(path, text)
    return text


# ---------------------------------------------------------------------------
# subcommands


def cmd_ding(args, cfg: RunConfig) -> dict:
    from . import ding
    spec = cfg.ode_spec(ding.SCAN_SPEC)
    kw = {"points": args.scan_points} if args.scan_points else {}
    sol = ding.solution_with_nodes(args.p, args.q, args.nodes, spec=spec, **kw)
    prof = ding.pullback(sol)
    doc = sol.to_document()
    doc["metadata"] = dict(doc["metadata"], flat_residual=prof.metadata["flat_residual"],
                           **{"lambda": ding.pullback_lambda(sol)})
    return doc


def _parse_methods(text: str):
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    allowed = {"hessian", "gradient", "reduced", "montecarlo", "all"}
    bad = set(methods) - allowed
    if bad or not methods:
        raise UsageError(f"unknown method(s) {sorted(bad)}; choose from {sorted(allowed)}")
    return methods


def cmd_weyl_product(args, cfg: RunConfig) -> dict:
    from . import weyl_product as wp
    methods = _parse_methods(args.method)
    needs_mc = "montecarlo" in methods or "all" in methods
    seed = args.seed if args.seed is not None else cfg.seed
    if needs_mc and seed is None:
        raise UsageError("the Monte Carlo route needs --seed (or a seed in the config)")
    v = load_profile(args.solution)
    W = cv.parse_tensor_spec(args.tensor)
    if W.n != v.n:
        raise UsageError(f"tensor dimension {W.n} does not match profile dimension {v.n}")
    mc_spec = cfg.quad_spec("montecarlo", nm.DEFAULT_MC)
    if seed is not None:
        mc_spec = mc_spec.with_(seed=seed)
    if args.mc_rel_tol is not None:
        mc_spec = mc_spec.with_(rel_tol=args.mc_rel_tol)
    spec = cfg.quad_spec("quadrature_2d", nm.DEFAULT_2D) if "quadrature_2d" in cfg.tolerances else None
    res = wp.weyl_otimes_b(W, v, methods, spec=spec, mc_spec=mc_spec)
    doc = res.to_document()
    doc["tensor"] = args.tensor
    doc["value"] = res.value
    return doc


def _parse_sweep(text: str):
    try:
        lo, hi, count = text.split(":")
        return np.linspace(float(lo), float(hi), int(count))
    except ValueError as exc:
        raise UsageError(f"malformed sweep {text!r}; expected LO:HI:COUNT") from exc


def cmd_mass3d(args, cfg: RunConfig) -> dict:
    from . import green_mass as gm
    method = {"closed": "closed_form"}.get(args.method, args.method)
    if args.sweep:
        grid = _parse_sweep(args.sweep)
        m = "ode" if method == "ode" else "closed_form"
        rows = [{"h0": h, "mass": val} for h, val in gm.mass_sweep(grid, m)]
        signs = [i for i in range(len(rows) - 1) if rows[i]["mass"] * rows[i + 1]["mass"] < 0]
        bracket = [[rows[i]["h0"], rows[i + 1]["h0"]] for i in signs]
        return {"schema_version": 1, "type": "mass-sweep", "method": m, "rows": rows,
                "sign_change_brackets": bracket}
    if args.h0 is None:
        raise UsageError("mass3d needs --h0 or --sweep")
    res = gm.mass(args.h0, method)
    if len(res) == 1:
        return next(iter(res.values())).to_document()
    c, o = res["closed_form"], res["ode"]
    doc = c.to_document()
    doc.update({"method": "both", "mass_ode": o.mass, "ode_error": o.error,
                "ode_converged": o.converged, "route_difference": abs(c.mass - o.mass),
                "green_profile": o.green_profile})
    return doc


def cmd_pohozaev(args, cfg: RunConfig) -> dict:
    from . import pohozaev as ph
    v = load_profile(args.profile)
    if args.p == "critical":
        p_exp = None
    else:
        try:
            p_exp = float(args.p)
        except ValueError as exc:
            raise UsageError("--p must be 'critical' or a number") from exc
    reports = [ph.pohozaev_terms(v, args.h0, p_exp, d).to_document() for d in args.delta]
    if len(reports) == 1:
        return reports[0]
    return {"schema_version": 1, "type": "pohozaev-sweep", "reports": reports}


def cmd_check(args, cfg: RunConfig) -> dict:
    from . import obstruction as ob
    n = args.dim
    weyl = None
    if n >= 5:
        if args.weyl is None:
            raise UsageError("--weyl is required for dim >= 5")
        weyl = "zero" if args.weyl in ("zero", f"zero:{n}") else cv.parse_tensor_spec(args.weyl)
    elif args.weyl not in (None, "zero"):
        raise UsageError("--weyl only applies to dim >= 5")
    mass = args.mass
    if n == 3 and mass is None and args.mass_from_h0 is not None:
        from .green_mass import mass_closed_form
        mass = mass_closed_form(args.mass_from_h0).mass
    if n == 3 and mass is None:
        raise UsageError("dim 3 needs --mass or --mass-from-h0")
    point = ob.PointData(n, args.h, args.sg, weyl, mass if n == 3 else None)
    bubble = load_bubble_summary(args.bubble, weyl)
    if bubble.n != n:
        raise UsageError(f"bubble dimension {bubble.n} does not match --dim {n}")
    tol = cfg.verdict_tol or ob.TOL
    if args.mode == "decay":
        rep = ob.rule_out_by_decay(point, bubble, tol)
    else:
        rep = ob.implied_rate(point, bubble, tol, critical=args.critical)
    doc = rep.to_document()
    doc["bubble"] = bubble.to_document()
    return doc


def cmd_certify(args, cfg: RunConfig) -> dict:
    from . import obstruction as ob
    rep = ob.certify_no_blowup(args.dim, args.t, None, args.delta, range(1, args.max_ell + 1))
    return rep.to_document()


def cmd_curvature(args, cfg: RunConfig) -> dict:
    W = cv.parse_tensor_spec(args.tensor)
    A = W.materialize() if isinstance(W, cv.ProductSphereWeyl) else W
    doc = W.to_document()
    doc["symmetry_defects"] = A.symmetry_defects()
    doc["trace_defect"] = A.trace_defect()
    return doc


def cmd_invariants(args, cfg: RunConfig) -> dict:
    from . import invariants as inv
    results = inv.run_all(include_ding=not args.skip_ding)
    print(inv.format_table(results), file=sys.stderr if args.out is None else sys.stdout)
    return {"schema_version": 1, "type": "invariants-report",
            "all_passed": all(r.passed for r in results),
            "checks": [{"name": r.name, "passed": r.passed, "seconds": r.seconds,
                        "detail": r.detail} for r in results]}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--config", help=f"run configuration JSON (default: ${CONFIG_ENV})")
    common.add_argument("--format", choices=("json", "csv"),
                        help="json result document, or csv plot data for the result")
    common.add_argument("--plot", metavar="CSV",
                        help="also write plot data: t,u,du for latitude solutions; h0,mass for "
                             "sweeps; theta,G for a single mass; term,value for obstruction audits")

    ap = argparse.ArgumentParser(prog="nodal-bubbles",
                                 description="Nodal bubbles of the critical Yamabe equation: "
                                             "solvers, invariants and blow-up obstructions.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ding", parents=[common], help="shoot for an invariant nodal solution")
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--nodes", type=int, default=1)
    s.add_argument("--scan-points", type=int, default=None,
                   help="initial-value samples in the shooting scan (module default if omitted)")
    s.set_defaults(func=cmd_ding)

    s = sub.add_parser("weyl-product", parents=[common], help="evaluate Weyl (x) B")
    s.add_argument("--solution", required=True, help="profile/solution JSON or standard:N")
    s.add_argument("--tensor", required=True, help="product:PxQ | zero:N | round:N | random:N[:SEED]")
    s.add_argument("--method", default="hessian,gradient,reduced",
                   help="comma list of hessian, gradient, reduced, montecarlo, or all")
    s.add_argument("--seed", type=int, help="seed for the Monte Carlo route (required for it)")
    s.add_argument("--mc-rel-tol", type=float)
    s.set_defaults(func=cmd_weyl_product)

    s = sub.add_parser("mass3d", parents=[common], help="Green mass on the round 3-sphere")
    s.add_argument("--h0", type=float)
    s.add_argument("--method", choices=("closed", "ode", "both"), default="closed")
    s.add_argument("--sweep", metavar="LO:HI:COUNT", help="tabulate the mass on a uniform h0 grid")
    s.set_defaults(func=cmd_mass3d)

    s = sub.add_parser("pohozaev", parents=[common], help="flat Pohozaev terms on balls")
    s.add_argument("--profile", required=True, help="profile/solution JSON or standard:N")
    s.add_argument("--delta", type=float, nargs="+", default=[1.0])
    s.add_argument("--h0", type=float, default=0.0)
    s.add_argument("--p", default="critical", help="'critical' or a number in (2, 2*]")
    s.set_defaults(func=cmd_pohozaev)

    s = sub.add_parser("check", parents=[common], help="necessary blow-up conditions at a point")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--h", type=float, required=True, help="h(x0)")
    s.add_argument("--sg", type=float, required=True, help="scalar curvature at x0")
    s.add_argument("--weyl", help="tensor spec (dim >= 5) or 'zero'")
    s.add_argument("--mass", type=float, help="Green mass at x0 (dim 3)")
    s.add_argument("--mass-from-h0", type=float, help="dim 3: use the round-sphere mass for constant h0")
    s.add_argument("--bubble", required=True, help="profile/solution/summary JSON or standard:N")
    s.add_argument("--mode", choices=("rate", "decay"), default="rate")
    s.add_argument("--critical", action="store_true", help="exponents are exactly critical")
    s.add_argument("--assert-consistent", action="store_true",
                   help="exit with status 4 when the verdict is RULED_OUT")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("certify", parents=[common], help="non-blow-up certificate construction")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--max-ell", type=int, default=50)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("invariants", parents=[common], help="run the property suite")
    s.add_argument("--skip-ding", action="store_true", help="omit checks needing a Ding solve")
    s.set_defaults(func=cmd_invariants)

    s = sub.add_parser("curvature", parents=[common], help="dump a curvature tensor")
    s.add_argument("--tensor", required=True)
    s.set_defaults(func=cmd_curvature)
    return ap


def _usage_errors():
    from .curvature import CurvatureError
    from .ding import DingError
    from .green_mass import NonCoercive
    from .obstruction import ObstructionError
    from .pohozaev import PohozaevError
    from .weyl_product import WeylProductError
    return (UsageError, jsonschema.ValidationError, pr.ProfileError, CurvatureError, DingError,
            NonCoercive, ObstructionError, PohozaevError, WeylProductError, KeyError, ValueError,
            OSError)


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        fmt = args.format or cfg.format
        out = args.out or cfg.outputs.get(args.command)
        doc = args.func(args, cfg)
        text = emit_plot_data(doc) if fmt == "csv" else dumps(doc)
        if out:
            write_atomic(out, text)
        else:
            sys.stdout.write(text)
        plot = args.plot or cfg.outputs.get(f"{args.command}_plot")
        if plot:
            emit_plot_data(doc, plot)
    except nm.NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _usage_errors() as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "invariants" and not doc["all_passed"]:
        return EXIT_NUMERICAL
    if args.command == "check" and args.assert_consistent and doc["verdict"] == "RULED_OUT":
        return EXIT_RULED_OUT
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
