"""afprop command line.

Every command prints a JSON report {"command", "seed", "results", "verified"}
(or CSV rows of ``results`` with --format csv).  Exit status: 0 when all
requested certificates verify, 1 when one does not, 2 on bad input.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction

from . import io, metrics, seminorms, states, suite, towers
from .algebra import ShapeError

DEFAULT_SEED = 0
# defaults that --tol may loosen (never tighten below), keyed by command
DEFAULT_TOL = {
    "propinquity": metrics.WITNESS_TOL,
    "isometry": metrics.ISOMETRY_TOL,
    "quotient": seminorms.GAP_TARGET,
}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    args: argparse.Namespace
    seed: int
    fmt: str = "json"
    out: str | None = None
    tol: float | None = None
    inputs: dict = field(default_factory=dict)


def resolve_seed(value) -> int:
    if value is None:
        value = os.environ.get("QPROP_SEED", DEFAULT_SEED)
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"seed must be an integer, got {value!r}")
    if not 0 <= seed < 2**64:
        raise UsageError("seed must fit in 64 unsigned bits")
    return seed


def resolve_tol(command: str, tol, loosen: bool):
    default = DEFAULT_TOL.get(command)
    if tol is None:
        return default
    if default is None:
        raise UsageError(f"{command} has no tolerance to override")
    if tol < default:
        raise UsageError(f"--tol {tol} would tighten the default {default}; only loosening is allowed")
    if tol > default and not loosen:
        raise UsageError(f"--tol {tol} loosens the default {default}; pass --allow-loosen to confirm")
    return tol


# ---------------------------------------------------------------------------
# input helpers

def _load(path, kind):
    try:
        obj = io.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}")
    return {
        "tower": io.tower_from_json,
        "trace": io.trace_from_json,
        "spec": io.spec_from_json,
        "element": io.element_from_json,
    }[kind](obj)


def parse_cf(text: str) -> towers.ContinuedFraction:
    if text == "golden":
        return towers.ContinuedFraction.golden(60)
    return towers.ContinuedFraction.parse(text)


def _spec_from_args(a) -> seminorms.LipSpec:
    if getattr(a, "spec", None):
        return _load(a.spec, "spec")
    if getattr(a, "cf", None):
        return seminorms.effros_shen_spec(parse_cf(a.cf), a.depth, kind=getattr(a, "kind", "cond-exp"))
    raise UsageError("give --spec FILE or --cf QUOTIENTS --depth N")


def _family(a) -> towers.TowerFamily:
    depth = a.N + 1
    if a.family == "golden":
        return towers.golden_family(a.K, depth)
    obj = io.load(a.family)
    if obj.get("schema") != io.tag("family"):
        raise io.SchemaError(f"expected {io.tag('family')}, got {obj.get('schema')}")
    cfs = [towers.ContinuedFraction(tuple(q)) for q in obj["members"]]
    return towers.effros_shen_family(cfs, towers.ContinuedFraction(tuple(obj["limit"])), depth, obj.get("label", ""))


def _cert_row(c: metrics.MetricCertificate, **extra) -> dict:
    row = c.to_json()
    row["tol"] = max((w.tol for w in c.witnesses), default=None)
    row.update(extra)
    return row


# ---------------------------------------------------------------------------
# commands; each returns (results, verified)

def cmd_tower(cfg: RunConfig):
    a = cfg.args
    if a.which == "effros-shen":
        t = towers.effros_shen_tower(parse_cf(a.cf), a.depth)
    elif a.which == "uhf":
        t = towers.uhf_tower([int(v) for v in a.mult.split(",")], a.depth)
    else:
        t = _load(a.file, "tower")
    obj = io.tower_to_json(t)
    obj["beta"] = [io.rat(b) for b in towers.dimension_beta(t)]
    return [obj], True


def cmd_trace(cfg: RunConfig):
    a = cfg.args
    if a.which == "pullback":
        t, w = _load(a.tower, "tower"), _load(a.trace, "trace")
        if w.shape != t.top:
            raise UsageError("trace must live on the tower's top level")
        pulled = states.pullback_trace(towers.compose_steps(t, a.level, t.depth), w)
        return [io.trace_to_json(pulled)], True
    if a.cf is None:
        raise UsageError("trace effros-shen needs --cf")
    cf = parse_cf(a.cf)
    w = states.effros_shen_trace(cf, a.level)
    obj = io.trace_to_json(w)
    obj["lambda_float"] = [float(v) for v in w.lam]
    if a.level > 0:
        lo, hi = states.effros_shen_trace_interval(cf, a.level)
        obj["t_interval"] = [io.rat(lo), io.rat(hi)]
    return [obj], True


def cmd_lipnorm(cfg: RunConfig):
    a = cfg.args
    spec = _spec_from_args(a)
    x = _load(a.element, "element")
    iv = seminorms.lip_interval(spec, x)
    row = {"kind": spec.kind, "lower": iv.lower, "upper": iv.upper, "converged": iv.converged,
           "provenance": "cond-exp terms" if spec.kind == "cond-exp" else "barrier solver interval"}
    if spec.kind == "cond-exp":
        row["terms"] = seminorms.cond_exp_terms(spec, x)
    return [row], iv.converged


def cmd_quotient(cfg: RunConfig):
    a = cfg.args
    spec = _spec_from_args(a)
    x = _load(a.element, "element")
    ms = range(spec.depth) if a.m is None else [a.m]
    rows, ok = [], True
    for m in ms:
        r = seminorms.quotient_seminorm(spec, m, x, method=a.method, gap_target=cfg.tol)
        ok &= r.converged
        rows.append({"m": m, "lower": r.lower, "upper": r.value, "rel_gap": r.rel_gap, "converged": r.converged,
                     "method": r.method, "iterations": r.iterations, "tol": cfg.tol,
                     "provenance": "dual certificate / primal witness"})
    return rows, ok


def cmd_kantorovich(cfg: RunConfig):
    a = cfg.args
    spec = _spec_from_args(a)
    phi, psi = _load(a.phi, "trace"), _load(a.psi, "trace")
    row = {"diameter_upper_bound": io.rat(metrics.diameter_upper_bound(spec))}
    if spec.top.is_commutative():
        row.update(value=metrics.kantorovich_commutative_exact(spec, phi, psi), mode="exact",
                   provenance="simplex, Bland's rule")
    else:
        row.update(value=metrics.kantorovich_lower_bound(spec, phi, psi, a.samples, cfg.seed), mode="lower-bound",
                   provenance="Lip-ball samples and interior-point ascent")
    return [row], True


def cmd_propinquity(cfg: RunConfig):
    a = cfg.args
    tol = cfg.tol
    if a.which == "beta-bound":
        spec = _spec_from_args(a)
        ms = range(spec.depth) if a.m is None else [a.m]
        certs = [metrics.beta_bound_certificate(spec, m, a.samples, cfg.seed, tol) for m in ms]
        return [_cert_row(c) for c in certs], all(c.verified for c in certs)
    if a.which == "rescale":
        cf_a, cf_b = parse_cf(a.cf_a), parse_cf(a.cf_b)
        sa = seminorms.effros_shen_spec(cf_a, a.depth)
        sb = seminorms.effros_shen_spec(cf_b, a.depth)
        c = metrics.rescaling_bridge_bound(sa, sb, a.n, a.samples, cfg.seed, tol=tol)
        return [_cert_row(c)], c.verified
    fam = _family(a)
    if a.report:
        chain = metrics.chain_report(fam, a.k, range(1, a.N + 1), a.samples, cfg.seed, tol)
    else:
        chain = [metrics.propinquity_chain_bound(fam, a.N, a.k, a.samples, cfg.seed, tol)]
    rows, ok = [], True
    for r in chain:
        ok &= r.certificate.verified
        rows.append({"N": r.N, "k": r.k, "c_N": r.c_N, "bound": r.bound, "2B(N)": io.rat(r.two_B_N),
                     "bridge": r.bridge, "weight_distance": float(r.weight_distance),
                     "bridge_label": r.certificate.label, "bridge_verified": r.certificate.verified,
                     "worst_residual": r.certificate.worst_residual, "tol": tol,
                     "provenance": "2B(N) certified, bridge term empirical"})
    return rows, ok


def cmd_isometry(cfg: RunConfig):
    a = cfg.args
    su, sv = _load(a.spec_u, "spec"), _load(a.spec_v, "spec")
    mp = io.load(a.map)
    if mp.get("schema") != io.tag("isometry"):
        raise io.SchemaError(f"expected {io.tag('isometry')}, got {mp.get('schema')}")
    phi = metrics.IsometryMap(tuple(tuple(p) for p in mp["perms"]))
    c = metrics.verify_quantum_isometry(phi, su, sv, a.samples, cfg.seed, cfg.tol)
    return [_cert_row(c)], c.verified


def cmd_verify_suite(cfg: RunConfig):
    rows = suite.run_suite(cfg.seed)
    return rows, all(r["passed"] for r in rows)


COMMANDS = {
    "tower": cmd_tower,
    "trace": cmd_trace,
    "lipnorm": cmd_lipnorm,
    "quotient": cmd_quotient,
    "kantorovich": cmd_kantorovich,
    "propinquity": cmd_propinquity,
    "isometry": cmd_isometry,
    "verify-suite": cmd_verify_suite,
}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", default=None, help="RNG seed (falls back to $QPROP_SEED, then 0)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--tol", type=float, help="loosen the command's default tolerance")
    common.add_argument("--allow-loosen", action="store_true")

    def spec_args(p, kind=True):
        p.add_argument("--spec", help="LipSpec JSON")
        p.add_argument("--cf", help="partial quotients a0,a1,... or 'golden' (Effros-Shen spec)")
        p.add_argument("--depth", type=int, default=4)
        if kind:
            p.add_argument("--kind", choices=seminorms.KINDS, default="cond-exp")

    ap = argparse.ArgumentParser(prog="afprop", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tower", parents=[common], help="build or inspect a tower")
    p.add_argument("which", choices=("effros-shen", "uhf", "file"))
    p.add_argument("--cf")
    p.add_argument("--mult", help="UHF multipliers, e.g. 2,3,2")
    p.add_argument("--depth", type=int)
    p.add_argument("--file")

    p = sub.add_parser("trace", parents=[common], help="Effros-Shen trace weights, or a pullback to a lower level")
    p.add_argument("which", choices=("effros-shen", "pullback"))
    p.add_argument("--cf")
    p.add_argument("--tower", help="tower JSON (pullback)")
    p.add_argument("--trace", help="top-level trace JSON (pullback)")
    p.add_argument("--level", type=int, required=True)

    p = sub.add_parser("lipnorm", parents=[common], help="Lip-norm of an element")
    spec_args(p)
    p.add_argument("--element", required=True)

    p = sub.add_parser("quotient", parents=[common], help="quotient seminorms S_m")
    spec_args(p)
    p.add_argument("--element", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--method", choices=("barrier", "subgradient"), default="barrier")

    p = sub.add_parser("kantorovich", parents=[common], help="Monge-Kantorovich distance between two traces")
    spec_args(p)
    p.add_argument("--phi", required=True)
    p.add_argument("--psi", required=True)
    p.add_argument("--samples", type=int, default=64)

    p = sub.add_parser("propinquity", parents=[common], help="propinquity certificates")
    p.add_argument("which", choices=("beta-bound", "rescale", "chain"))
    spec_args(p, kind=False)
    p.add_argument("--m", type=int)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--cf-a")
    p.add_argument("--cf-b")
    p.add_argument("--n", type=int)
    p.add_argument("--family", default="golden", help="'golden' or a family JSON file")
    p.add_argument("--K", type=int, default=12, help="number of golden-family members minus one")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--k", type=int)
    p.add_argument("--report", action="store_true", help="chain bounds for every N up to --N")

    p = sub.add_parser("isometry", parents=[common], help="quantum isometry verification")
    p.add_argument("which", choices=("verify",))
    p.add_argument("--spec-u", required=True)
    p.add_argument("--spec-v", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--samples", type=int, default=200)

    sub.add_parser("verify-suite", parents=[common], help="run the invariant suites")
    return ap


def _check_args(a):
    if a.command == "tower":
        if a.which == "effros-shen" and (a.cf is None or a.depth is None):
            raise UsageError("tower effros-shen needs --cf and --depth")
        if a.which == "uhf" and a.mult is None:
            raise UsageError("tower uhf needs --mult")
        if a.which == "file" and a.file is None:
            raise UsageError("tower file needs --file")
    if a.command == "propinquity":
        if a.which == "rescale" and (a.cf_a is None or a.cf_b is None or a.n is None):
            raise UsageError("propinquity rescale needs --cf-a, --cf-b and --n")
        if a.which == "chain" and a.k is None:
            raise UsageError("propinquity chain needs --k")


def _jsonable(v):
    if isinstance(v, Fraction):
        return io.rat(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return io.dumps(report)
    buf = _stdio.StringIO()
    rows = report.get("results") or [report.get("error", {})]
    cols = sorted({k for r in rows for k in r} - {"command", "seed"})
    w = csv.DictWriter(buf, fieldnames=["command", "seed"] + cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"command": report["command"], "seed": report["seed"],
                    **{k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items() if k in cols}})
    return buf.getvalue()


def run(cfg: RunConfig) -> tuple[int, dict]:
    results, ok = COMMANDS[cfg.command](cfg)
    report = {"command": cfg.command, "seed": cfg.seed, "results": _jsonable(results), "verified": bool(ok)}
    return (0 if ok else 1), report


INPUT_ERRORS = (UsageError, io.SchemaError, ShapeError, ValueError, KeyError, TypeError)


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    seed = None
    try:
        seed = resolve_seed(a.seed)
        _check_args(a)
        cfg = RunConfig(a.command, a, seed, a.format, a.out, resolve_tol(a.command, a.tol, a.allow_loosen))
        status, report = run(cfg)
    except INPUT_ERRORS as exc:
        status = 2
        report = {"command": a.command, "seed": seed, "results": [], "verified": False,
                  "error": {"type": type(exc).__name__, "message": str(exc)}}
    text = render(report, a.format)
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
