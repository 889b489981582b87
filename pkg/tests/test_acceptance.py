"""Acceptance gate: one test per criterion, each recorded as a PASS/FAIL line."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE
from pscforge.cli import FIXTURE_DIR, main
from pscforge.curvature import (
    SingleWarpedMetric,
    chart_midpoint,
    min_scan,
    oracle_scalar,
    product_chart,
    scalar_product,
    scalar_single_warped,
    single_warped_chart,
    sphere_chart,
)
from pscforge.errors import AdmissibilityError, NeckInfeasible, NoValidAlpha
from pscforge.familypipe import (
    FiberFamily,
    assemble_sphere_bundle,
    circle_family_spec,
    load_family,
    random_block_frame,
    run_family,
)
from pscforge.glsurgery import (
    SurgeryDatum,
    TorpedoMetric,
    build_cobordism_metric,
    build_torpedo,
    handle_product,
    round_sphere,
    standardize_near_sphere,
    verify_torpedo,
)
from pscforge.morsefold import Monomial, alpha_bound, deform, perturbed_fold
from pscforge.smoothfn import convex_combine, make_cutoff, sine_profile


def record(num, title, ok, detail):
    ACCEPTANCE[num] = (bool(ok), title, detail)
    print(f"{'PASS' if ok else 'FAIL'}  [{num:2d}] {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def cobordism():
    return build_cobordism_metric(round_sphere(1, 3), SurgeryDatum(1, 3, 0.1, 0.1))


def test_c01_sphere_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, ratios = 0.0, []
    for n in range(2, 7):
        exact = n * (n - 1)
        # closed form from the warped formula, not the constant itself
        closed = float(scalar_single_warped(SingleWarpedMetric(n, sine_profile(1.0)), 1.0))
        ch = sphere_chart(n)
        for x in rng.uniform(0.5, math.pi - 0.5, (5, n)):
            worst = max(worst, abs(oracle_scalar(ch, x) - closed) / exact)
        x = np.full(n, 1.0)
        err = [abs(oracle_scalar(ch, x, h) - closed) for h in (4e-3, 2e-3, 1e-3)]
        ratios += [err[0] / err[1], err[1] / err[2]]
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and all(3.5 <= r <= 4.5 for r in ratios) and elapsed < 10
    record(1, "round-sphere oracle", ok,
           f"max rel err {worst:.2e}, ratios [{min(ratios):.3f}, {max(ratios):.3f}], {elapsed:.2f}s")


def test_c02_sphere_exact():
    worst = 0.0
    for k in range(3, 8):
        m = SingleWarpedMetric(k, sine_profile(1.0))
        t = np.linspace(0.0, math.pi, 1002)[1:-1]
        worst = max(worst, float(np.max(np.abs(scalar_single_warped(m, t) - k * (k - 1)))))
    record(2, "round-sphere exactness", worst <= 1e-9, f"max abs err {worst:.2e} over k=3..7, 1000 points")


def test_c03_torpedo_scaling():
    start = time.perf_counter()
    ok, worst_spread, min_r = True, 0.0, math.inf
    for k in range(3, 8):
        norm = []
        for delta in (1.0, 0.5, 0.25, 0.1):
            tor = build_torpedo(k, delta)
            rep = min_scan(tor.metric, 512)
            ok &= rep.positive
            min_r = min(min_r, rep.min_scalar)
            norm.append(rep.min_scalar * tor.plateau**2)
        norm = np.array(norm)
        worst_spread = max(worst_spread, float((norm.max() - norm.min()) / norm.mean()))
    elapsed = time.perf_counter() - start
    ok = ok and worst_spread <= 0.05 and elapsed < 30
    record(3, "torpedo positivity and scaling", ok,
           f"min R {min_r:.4g} > 0, max spread {worst_spread:.2e}, {elapsed:.2f}s")


def test_c04_cap_exact():
    worst = 0.0
    for k in range(3, 8):
        for delta in (1.0, 0.5, 0.25, 0.1):
            tor = build_torpedo(k, delta)
            t = np.linspace(0.0, tor.sine_end, 1000)
            target = k * (k - 1) / delta**2
            worst = max(worst, float(np.max(np.abs(scalar_single_warped(tor.metric, t) - target)) / target))
    record(4, "torpedo cap exactness", worst <= 1e-9, f"max rel err {worst:.2e}")


def test_c05_fixed_delta_convexity():
    rng = np.random.default_rng(5)
    passed = 0
    for _ in range(100):
        k = int(rng.integers(3, 8))
        delta = float(rng.choice([1.0, 0.5, 0.25, 0.1]))
        s1, s2 = rng.uniform(0.0, 1.0, 2)
        t1, t2 = build_torpedo(k, delta, shape=s1), build_torpedo(k, delta, shape=s2)
        assert verify_torpedo(t1, 256).passed and verify_torpedo(t2, 256).passed
        mid = TorpedoMetric(k, delta, t1.eta, convex_combine(t1.profile, t2.profile, 0.5),
                            0.5 * (t1.plateau + t2.plateau))
        passed += verify_torpedo(mid, 256).passed
    record(5, "fixed-delta convexity", passed == 100, f"{passed}/100 midpoints verified")


def test_c06_product_additivity():
    rng = np.random.default_rng(6)
    h = handle_product(SurgeryDatum(2, 3, 0.3, 0.2))
    ta = rng.uniform(0.0, h.first.profile.domain_length, 10_000)
    tb = rng.uniform(0.0, h.second.profile.domain_length, 10_000)
    parts = scalar_single_warped(h.first.metric, ta) + scalar_single_warped(h.second.metric, tb)
    add_err = float(np.max(np.abs(h.scalar(ta, tb) - parts)) / np.max(np.abs(parts)))
    a, b = h.first.metric, h.second.metric
    sa, sb = 0.8 * h.first.profile.domain_length, 0.6 * h.second.profile.domain_length
    ch = product_chart(single_warped_chart(a, sa), single_warped_chart(b, sb))
    closed = float(scalar_product(scalar_single_warped(a, sa), scalar_single_warped(b, sb)))
    oracle_err = abs(oracle_scalar(ch, chart_midpoint(ch)) - closed) / max(1.0, abs(closed))
    record(6, "product additivity", add_err <= 1e-12 and oracle_err <= 1e-4,
           f"10^4 pairs rel err {add_err:.2e}, product-chart oracle rel err {oracle_err:.2e}")


def test_c07_equivariance(cobordism):
    rng = np.random.default_rng(7)
    h = handle_product(SurgeryDatum(1, 3, 0.1, 0.1))
    x = rng.uniform(-0.08, 0.08, (64, 6))
    base_h = h.tensor(x)
    base_t, base_r = cobordism.metric_samples(x)
    worst = 0.0
    for _ in range(100):
        Q = random_block_frame(1, 3, rng)
        y = x @ Q.T
        worst = max(worst, float(np.max(np.abs(np.einsum("ki,nkl,lj->nij", Q, h.tensor(y), Q) - base_h))))
        t, r = cobordism.metric_samples(y)
        worst = max(worst, float(np.max(np.abs(np.einsum("ki,nkl,lj->nij", Q, t, Q) - base_t))),
                    float(np.max(np.abs(r - base_r))))
    record(7, "equivariance", worst <= 1e-12, f"100 frames, max change {worst:.2e}")


def test_c08_fold_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    failures, alphas = [], []
    target = np.diag([-2.0, 2.0, 2.0])
    for i in range(50):
        exps = {tuple(int(e) for e in rng.multinomial(3, [1 / 3] * 3)) for _ in range(int(rng.integers(1, 4)))}
        F = perturbed_fold(1, 2, 1, [Monomial(e, float(rng.uniform(-0.5, 0.5))) for e in sorted(exps)])
        try:
            alpha, res = alpha_bound(F)
        except NoValidAlpha:
            failures.append(i)
            continue
        alphas.append(alpha)
        ok = (alpha > 0 and res.t_samples == (0.0, 0.25, 0.5, 0.75, 1.0)
              and all(cs.is_origin_only() for cs in res.critical_sets)
              and res.flags["outside_unchanged"] and res.flags["standard_near_fold"]
              and res.flags["hessian_match"])
        ok = ok and all(np.array_equal(deform(F, alpha, t).hess(np.zeros(3))[0], target)
                        for t in res.t_samples)
        if not ok:
            failures.append(i)
    quad = perturbed_fold(1, 2, 1, [Monomial((2, 0, 0), 0.5)], declared_cubic=True)
    try:
        alpha_bound(quad)
        quad_ok = False
    except NoValidAlpha as exc:
        quad_ok = exc.reason == "no_valid_alpha"
    elapsed = time.perf_counter() - start
    ok = not failures and quad_ok and elapsed < 60
    record(8, "fold deformation suite", ok,
           f"{50 - len(failures)}/50 cubics certified (alpha* in [{min(alphas):g}, {max(alphas):g}]), "
           f"quadratic -> NoValidAlpha: {quad_ok}, {elapsed:.2f}s")


def test_c09_cutoff_contract():
    rng = np.random.default_rng(9)
    worst_bound, worst_dev = 0.0, 0.0
    for alpha in rng.uniform(1e-3, 10.0, 1000):
        phi = make_cutoff(alpha)
        s = np.linspace(alpha, 2 * alpha, 20001)
        sup = float(np.max(np.abs(phi(s, 1))))
        worst_bound = max(worst_bound, sup * alpha / 10)
        worst_dev = max(worst_dev, abs(sup * alpha - 1.875))
    record(9, "cutoff contract", worst_bound < 1.0 and worst_dev <= 1e-6,
           f"max sup|phi'|*alpha/10 = {worst_bound:.4f}, max |sup*alpha - 1.875| = {worst_dev:.1e}")


def test_c10_neck_feasibility():
    start = time.perf_counter()
    rows, ok = [], True
    for p, q in ((1, 2), (1, 3), (2, 2)):
        path = standardize_near_sphere(round_sphere(p, q), SurgeryDatum(p, q, 0.1, 0.1))
        res = path.neighborhood_residual()
        ok &= path.positive and path.min_scalar > 0 and res <= 1e-10 and path.stages[0] is path.g0
        rows.append(f"({p},{q}) min {path.min_scalar:.3g} res {res:.1e}")
    try:
        standardize_near_sphere(round_sphere(1, 3), SurgeryDatum(1, 3, 0.1, 0.1), stages=1)
        raised = False
    except NeckInfeasible:
        raised = True
    elapsed = time.perf_counter() - start
    ok = ok and raised and elapsed < 120
    record(10, "neck feasibility", ok, f"{'; '.join(rows)}; budget 1 raises: {raised}; {elapsed:.2f}s")


def test_c11_cobordism(cobordism):
    asm = cobordism
    ok = (asm.lower_trace is asm.g0 and asm.flags["product_above_c1"]
          and asm.positive and asm.min_scalar > 0 and all(asm.flags.values()))
    record(11, "cobordism assembly", ok,
           f"lower trace is g0: {asm.lower_trace is asm.g0}, product above c1: {asm.flags['product_above_c1']}, "
           f"min R over regions {asm.min_scalar:.4g}")


def test_c12_family():
    fam, base = load_family(circle_family_spec(count=3, clutch=False))
    const = run_family(fam, base, grid=256)
    bitwise = len({f["digest"] for f in const.fibers}) == 1
    fam, base = load_family(circle_family_spec(count=4, clutch=True))
    clutched = run_family(fam, base, grid=256)
    overlap = max(r["residual"] for r in clutched.overlap_residuals)
    fam, base = load_family(circle_family_spec(count=4, delta=(0.1, 0.2), clutch=False))
    lip = run_family(fam, base, grid=256).continuity["lipschitz"]
    n = fam.p + fam.q + 1
    bad = replace(fam.samples[0], fold=replace(fam.samples[0].fold, index=n - 1))
    try:
        run_family(FiberFamily(fam.p, fam.q, [bad, *fam.samples[1:]]), base)
        gate = False
    except AdmissibilityError:
        gate = True
    spec = circle_family_spec(count=2)
    spec["samples"][0]["index"] = n - 1
    try:
        load_family(spec)
        gate = False
    except AdmissibilityError:
        pass
    ok = bitwise and overlap <= 1e-12 and np.isfinite(lip) and gate and clutched.passed
    record(12, "family pipeline", ok,
           f"constant family bitwise: {bitwise}, overlap residual {overlap:.1e}, "
           f"Lipschitz {lip:.4g}, lambda=n-1 rejected: {gate}")


def test_c13_sphere_bundle():
    fam, base = load_family(FIXTURE_DIR / "sphere_bundle.json")
    rep = assemble_sphere_bundle(fam, base, 1.0, grid=256)
    cap = max(f["cap_residual"] for f in rep.fibers)
    mirror = rep.extra["checks"]["mirror_exact"] and all(f["mirror_exact"] for f in rep.fibers)
    ok = mirror and cap <= 1e-10 and rep.passed and all(f["conclusions"]["psc"] for f in rep.fibers)
    record(13, "sphere-bundle assembly", ok,
           f"mirror exact: {mirror}, cap residual {cap:.1e}, aggregate pass: {rep.passed}")


COMMANDS = {
    "torpedo": ["torpedo", "--k", "4", "--delta", "0.5"],
    "curvature": ["curvature", "--torpedo", "3", "--delta", "0.5"],
    "neck": ["neck", "--p", "2", "--q", "2"],
    "cobordism": ["neck", "--assemble", "--grid", "256"],
    "fold": ["fold", "--fixture", "cubic03.json"],
    "family": ["family", "--config", str(FIXTURE_DIR / "family_two_chart.json"), "--grid", "256"],
    "sphere-bundle": ["sphere-bundle", "--config", str(FIXTURE_DIR / "sphere_bundle.json"), "--grid", "256"],
}


def test_c14_determinism(tmp_path):
    differing = []
    for name, argv in COMMANDS.items():
        blobs = []
        for n in (1, 4, 8):
            out = tmp_path / f"{name}-{n}"
            main([*argv, "--threads", str(n), "--out", str(out)])
            files = sorted(p for p in out.iterdir() if p.name != "run_meta.json")
            blobs.append({p.name: p.read_bytes() for p in files})
        if not (blobs[0] == blobs[1] == blobs[2]) or "report.json" not in blobs[0]:
            differing.append(name)
    record(14, "determinism", not differing,
           f"{len(COMMANDS)} commands x threads 1/4/8, outputs differing: {differing or 'none'}")
