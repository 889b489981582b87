"""Command-line front end.

Every subcommand writes ``report.json`` (schema ``pscforge/1``, deterministic)
and one CSV into ``--out``; the wall-clock timestamp and run arguments go to a
separate ``run_meta.json`` so reports stay byte-identical between runs.

Exit codes: 0 all checks pass, 1 a check failed (including an infeasible neck
search or an exhausted alpha descent), 2 bad configuration or I/O.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curvature import (
    MIN_GRID,
    SingleWarpedMetric,
    chart_midpoint,
    oracle_scalar,
    scalar_single_warped,
    single_warped_chart,
    sphere_chart,
)
from .errors import AdmissibilityError, NeckInfeasible, NoValidAlpha, PscForgeError
from .familypipe import SCHEMA, assemble_sphere_bundle, load_family, run_family
from .glsurgery import (
    DEFAULT_ETA,
    SurgeryDatum,
    build_cobordism_metric,
    build_torpedo,
    round_sphere,
    standardize_near_sphere,
    verify_torpedo,
)
from .morsefold import alpha_bound, load_fold, verify_deformation
from .parallel import set_default_threads

FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_report(out: Path, command: str, params: dict, passed: bool, body: dict) -> Path:
    doc = {"schema": SCHEMA, "command": command, "params": params, "passed": bool(passed), **body}
    path = out / "report.json"
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


def _write_meta(out: Path, argv: list, threads: int) -> None:
    meta = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "argv": argv,
        "threads": threads,
        "version": __version__,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _resolve_fixture(name: str) -> str:
    p = Path(name)
    if p.exists():
        return str(p)
    alt = FIXTURE_DIR / p.name
    if alt.exists():
        return str(alt)
    raise ConfigError(f"fixture not found: {name}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_torpedo(args, out: Path) -> tuple:
    tor = build_torpedo(args.k, args.delta, args.eta)
    chk = verify_torpedo(tor, args.grid, args.threads)
    chk.report.write_csv(out / "scalar.csv")
    params = {"k": args.k, "delta": args.delta, "eta": args.eta, "grid": args.grid}
    body = {"plateau": tor.plateau, "flags": chk.flags, "report": chk.report.to_dict()}
    summary = (f"torpedo k={args.k} delta={args.delta}: plateau={tor.plateau:.12g} "
               f"min_scalar={chk.report.min_scalar:.12g} flags={chk.flags}")
    return chk.passed, params, body, summary


def cmd_curvature(args, out: Path) -> tuple:
    tol = args.tol if args.tol is not None else 1e-4
    rng = np.random.default_rng(args.seed)
    rows = []
    if args.torpedo is not None:
        tor = build_torpedo(args.torpedo, args.delta, args.eta)
        m = tor.metric
        L = tor.profile.domain_length
        for t in np.sort(rng.uniform(0.1 * L, 0.9 * L, args.points)):
            closed = float(scalar_single_warped(m, t))
            chart = single_warped_chart(m, float(t))
            est = oracle_scalar(chart, chart_midpoint(chart))
            rows.append((float(t), closed, est, abs(closed - est) / max(1.0, abs(closed))))
        label = f"torpedo k={args.torpedo} delta={args.delta}"
        params = {"torpedo": args.torpedo, "delta": args.delta, "eta": args.eta, "points": args.points}
    else:
        n = args.sphere
        chart = sphere_chart(n, args.radius)
        x = chart_midpoint(chart)
        closed = float(scalar_single_warped(SingleWarpedMetric(n, _sphere_profile(args.radius)), 0.5 * args.radius))
        est = oracle_scalar(chart, x)
        rows.append((0.0, closed, est, abs(closed - est) / max(1.0, abs(closed))))
        label = f"round S^{n} radius {args.radius}"
        params = {"sphere": n, "radius": args.radius}
    worst = max(r[3] for r in rows)
    _write_rows(out / "oracle.csv", ["t", "closed_form", "oracle", "rel_error"], rows)
    passed = worst <= tol
    body = {"max_rel_error": worst, "tolerance": tol, "samples": [list(r) for r in rows]}
    return passed, params, body, f"{label}: max relative error {worst:.3e} (tol {tol:g})"


def _sphere_profile(radius: float):
    from .smoothfn import sine_profile
    return sine_profile(radius)


def cmd_neck(args, out: Path) -> tuple:
    cfg = _load_json(args.config) if args.config else {}
    p = int(cfg.get("p", args.p))
    q = int(cfg.get("q", args.q))
    delta = float(cfg.get("delta", args.delta))
    eps = float(cfg.get("epsilon", args.epsilon if args.epsilon is not None else delta))
    stages = int(cfg.get("stages", args.stages))
    d = SurgeryDatum(p, q, eps, delta, cfg.get("neck_radius"), float(cfg.get("eta", args.eta)))
    g0 = round_sphere(p, q, float(cfg.get("radius", args.radius)))
    params = {"p": p, "q": q, "delta": delta, "epsilon": eps, "stages": stages, "grid": args.grid,
              "seed": args.seed, "assemble": bool(args.assemble)}
    tol = args.tol if args.tol is not None else 1e-10
    if args.assemble:
        levels = tuple(cfg.get("levels", args.levels))
        asm = build_cobordism_metric(g0, d, levels, args.grid, stages, args.seed, args.threads)
        path = asm.path
        body = {"assembly": asm.to_dict()}
        passed = asm.positive and all(asm.flags.values()) and path.neighborhood_residual() <= tol
        summary = (f"cobordism (p,q)=({p},{q}) delta={delta}: min_scalar={asm.min_scalar:.6g} "
                   f"stretch={asm.transition.stretch:g} flags={asm.flags}")
    else:
        path = standardize_near_sphere(g0, d, stages=stages, grid=args.grid, seed=args.seed,
                                       threads=args.threads)
        res = path.neighborhood_residual()
        body = {"path": path.to_dict()}
        passed = path.positive and res <= tol
        summary = (f"neck (p,q)=({p},{q}) delta={delta}: {len(path.stages)} stages, "
                   f"min_scalar={path.min_scalar:.6g}, neighbourhood residual={res:.3g}")
    _write_rows(out / "stages.csv", ["stage", "lambda", "min_scalar"],
                [(i, lam, r.min_scalar) for i, (lam, r) in enumerate(zip(path.lambdas, path.reports))])
    return passed, params, body, summary


def cmd_fold(args, out: Path) -> tuple:
    F = load_fold(_resolve_fixture(args.fixture))
    box = args.box
    if args.alpha == "auto":
        alpha, res = alpha_bound(F, box=box, seed=args.seed, threads=args.threads)
    else:
        try:
            alpha = float(args.alpha)
        except ValueError as exc:
            raise ConfigError(f"--alpha must be 'auto' or a number, got {args.alpha!r}") from exc
        res = verify_deformation(F, alpha, box=box, seed=args.seed, threads=args.threads)
    rows = [(t, len(cs), float(np.max(cs.residuals)) if len(cs) else 0.0)
            for t, cs in zip(res.t_samples, res.critical_sets)]
    _write_rows(out / "critical.csv", ["t", "critical_points", "max_residual"], rows)
    params = {"fixture": Path(args.fixture).name, "alpha": args.alpha, "box": box, "seed": args.seed}
    body = {"alpha_star": alpha, "deformation": res.to_dict()}
    return res.passed, params, body, f"fold: alpha*={alpha:g} flags={res.flags}"


def _family_common(args, cfg: dict, out: Path, sphere: bool) -> tuple:
    fam, base = load_family(cfg)
    if sphere:
        b = float(args.cap_radius if args.cap_radius is not None else cfg.get("radius", 1.0))
        rep = assemble_sphere_bundle(fam, base, b, args.grid, args.stages, args.seed, args.threads)
    else:
        rep = run_family(fam, base, args.grid, args.stages, args.seed, args.threads)
    passed = rep.passed
    rep.write_csv(out / "fibers.csv")
    params = {"config": Path(args.config).name, "grid": args.grid, "stages": args.stages, "seed": args.seed}
    body = rep.to_dict()
    body.pop("schema", None)
    body.pop("passed", None)
    kind = "sphere-bundle" if sphere else "family"
    summary = (f"{kind}: {len(rep.fibers)} fibres, min_scalar={rep.min_scalar:.6g}, "
               f"max overlap residual={max((r['residual'] for r in rep.overlap_residuals), default=0.0):.3g}, "
               f"lipschitz={rep.continuity['lipschitz']:.6g}")
    return passed, params, body, summary


def cmd_family(args, out: Path) -> tuple:
    return _family_common(args, _load_json(args.config), out, sphere=False)


def cmd_sphere_bundle(args, out: Path) -> tuple:
    return _family_common(args, _load_json(args.config), out, sphere=True)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _positive_int_grid(text: str) -> int:
    v = int(text)
    if v < MIN_GRID:
        raise argparse.ArgumentTypeError(f"grid must be >= {MIN_GRID}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("value must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=_positive_int_grid, default=512, help="samples per radial dimension (>= 64)")
    common.add_argument("--tol", type=_positive_float, default=None, help="override the check tolerance")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker pool size")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out", default="pscforge_out", help="output directory")

    ap = argparse.ArgumentParser(prog="pscforge", description="Build and certify psc metric building blocks.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("torpedo", parents=[common], help="build and verify a torpedo metric")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--delta", type=_positive_float, required=True)
    sp.add_argument("--eta", type=_positive_float, default=DEFAULT_ETA)

    sp = sub.add_parser("curvature", parents=[common], help="closed form versus finite-difference oracle")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--sphere", type=int, help="round S^n fixture")
    g.add_argument("--torpedo", type=int, help="torpedo dimension k")
    sp.add_argument("--radius", type=_positive_float, default=1.0)
    sp.add_argument("--delta", type=_positive_float, default=0.5)
    sp.add_argument("--eta", type=_positive_float, default=DEFAULT_ETA)
    sp.add_argument("--points", type=_positive_int, default=10)

    sp = sub.add_parser("neck", parents=[common], help="neck isotopy search (and optional full cobordism)")
    sp.add_argument("--config", help="JSON surgery datum (overrides flags)")
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--q", type=int, default=3)
    sp.add_argument("--delta", type=_positive_float, default=0.1)
    sp.add_argument("--epsilon", type=_positive_float, default=None)
    sp.add_argument("--eta", type=_positive_float, default=DEFAULT_ETA)
    sp.add_argument("--radius", type=_positive_float, default=1.0)
    sp.add_argument("--stages", type=int, default=33)
    sp.add_argument("--assemble", action="store_true", help="build the full cobordism metric")
    sp.add_argument("--levels", type=float, nargs=2, default=(0.4, 0.6))

    sp = sub.add_parser("fold", parents=[common], help="certify the fold standardization deformation")
    sp.add_argument("--fixture", required=True, help="JSON perturbation fixture")
    sp.add_argument("--alpha", default="auto", help="'auto' for the dyadic descent, or a radius")
    sp.add_argument("--box", type=_positive_float, default=0.5)

    sp = sub.add_parser("family", parents=[common], help="fibrewise construction over a sampled base")
    sp.add_argument("--config", required=True)
    sp.add_argument("--stages", type=int, default=33)

    sp = sub.add_parser("sphere-bundle", parents=[common], help="glue-and-cap sphere-bundle assembly")
    sp.add_argument("--config", required=True)
    sp.add_argument("--stages", type=int, default=33)
    sp.add_argument("--cap-radius", type=_positive_float, default=None)
    return ap


COMMANDS = {
    "torpedo": cmd_torpedo,
    "curvature": cmd_curvature,
    "neck": cmd_neck,
    "fold": cmd_fold,
    "family": cmd_family,
    "sphere-bundle": cmd_sphere_bundle,
}


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    set_default_threads(args.threads)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    _write_meta(out, argv, args.threads)
    try:
        passed, params, body, summary = COMMANDS[args.command](args, out)
    except (NeckInfeasible, NoValidAlpha) as exc:
        _write_report(out, args.command, {}, False, {"reason": exc.reason, "message": str(exc)})
        print(f"FAIL [{exc.reason}] {exc}")
        return 1
    except AdmissibilityError as exc:
        _write_report(out, args.command, {}, False, {"reason": "admissibility", "message": str(exc)})
        print(f"error [admissibility] {exc}", file=sys.stderr)
        return 2
    except (ConfigError, PscForgeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write_report(out, args.command, params, passed, body)
    print(("PASS " if passed else "FAIL ") + summary)
    return 0 if passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
