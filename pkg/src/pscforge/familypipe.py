"""Fibrewise surgery metrics over a sampled base with chart overlaps.

The base is a finite set of samples ``z`` grouped into charts.  Where two
charts overlap, the fibre's Morse coordinates in one chart are related to
those in the other by a frame ``Q`` in ``O(p+1) x O(q+1)``.  Each sample
carries a fold, a boundary metric ``g0(z)`` and a surgery datum; the
pipeline builds one cobordism metric per sample and checks that

* every fibre extends ``g0(z)``, is a product near both ends and is psc,
* chart-wise metric samples agree after frame alignment,
* outputs vary with a finite Lipschitz modulus between adjacent samples.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curvature import DoublyWarpedMetric, min_scan
from .errors import (
    AdmissibilityError,
    CompatibilityError,
    DomainError,
    FrameError,
    GluingError,
    NeckInfeasible,
)
from .glsurgery import (
    DEFAULT_ETA,
    CobordismMetricAssembly,
    SurgeryDatum,
    build_cobordism_metric,
    round_sphere,
    torpedo_with_plateau,
)
from .morsefold import FoldMap, MorsePair, Monomial, canonical_background, compat_check, standard_fold
from .parallel import ordered_map

SCHEMA = "pscforge/1"
FRAME_TOL = 1e-12
OVERLAP_TOL = 1e-12
CAP_TOL = 1e-10


# --------------------------------------------------------------------------
# base samples and frames
# --------------------------------------------------------------------------


def block_rotation(p: int, q: int, theta_minus: float = 0.0, theta_plus: float = 0.0) -> np.ndarray:
    """Rotation by ``theta_minus`` in the first plane of ``R^{p+1}`` and ``theta_plus`` in ``R^{q+1}``."""
    d = p + q + 2
    Q = np.eye(d)
    for start, size, th in ((0, p + 1, theta_minus), (p + 1, q + 1, theta_plus)):
        if size >= 2 and th:
            c, s = math.cos(th), math.sin(th)
            Q[start, start], Q[start, start + 1] = c, -s
            Q[start + 1, start], Q[start + 1, start + 1] = s, c
    return Q


def random_block_frame(p: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random element of ``O(p+1) x O(q+1)`` (QR of Gaussian blocks)."""
    Q = np.zeros((p + q + 2, p + q + 2))
    for start, size in ((0, p + 1), (p + 1, q + 1)):
        A = rng.standard_normal((size, size))
        U, R = np.linalg.qr(A)
        U = U * np.sign(np.diag(R))
        Q[start:start + size, start:start + size] = U
    return Q


@dataclass(frozen=True)
class Overlap:
    sample: int
    charts: tuple
    frame: np.ndarray


@dataclass
class BaseSampleSet:
    """Samples ``z``, charts (lists of sample ids) and overlap frames."""

    p: int
    q: int
    z: dict
    charts: dict
    overlaps: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        d = self.p + self.q + 2
        p1 = self.p + 1
        for name, ids in self.charts.items():
            for i in ids:
                if i not in self.z:
                    raise DomainError(f"chart {name!r} lists unknown sample {i}")
        for ov in self.overlaps:
            a, b = ov.charts
            for c in (a, b):
                if c not in self.charts:
                    raise DomainError(f"overlap references unknown chart {c!r}")
                if ov.sample not in self.charts[c]:
                    raise DomainError(f"overlap sample {ov.sample} missing from chart {c!r}")
            Q = np.asarray(ov.frame, dtype=float)
            if Q.shape != (d, d):
                raise FrameError(f"frame for sample {ov.sample} has shape {Q.shape}, expected {(d, d)}")
            if np.any(Q[:p1, p1:] != 0.0) or np.any(Q[p1:, :p1] != 0.0):
                raise FrameError(f"frame for sample {ov.sample} is not block-diagonal O({p1})xO({self.q + 1})")
            if np.max(np.abs(Q.T @ Q - np.eye(d))) > FRAME_TOL:
                raise FrameError(f"frame for sample {ov.sample} is not orthogonal")

    def neighbours(self) -> list:
        """Adjacent sample pairs (consecutive ids within each chart, sorted by z)."""
        pairs = []
        for ids in self.charts.values():
            order = sorted(ids, key=lambda i: self.z[i])
            pairs.extend(zip(order, order[1:]))
        seen, out = set(), []
        for a, b in pairs:
            key = (min(a, b), max(a, b))
            if key not in seen:
                seen.add(key)
                out.append(key)
        return out


# --------------------------------------------------------------------------
# fibre data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FiberSample:
    sample_id: int
    z: float
    fold: FoldMap
    g0: DoublyWarpedMetric
    datum: SurgeryDatum
    background: np.ndarray | None = None


@dataclass
class FiberFamily:
    p: int
    q: int
    samples: list

    def check_admissible(self) -> None:
        """Integer gate: fold index ``<= n - 2`` where the fibre is ``R^{n+1}``."""
        for s in self.samples:
            F = s.fold
            if F.index > F.n - 2:
                raise AdmissibilityError(
                    f"sample {s.sample_id}: fold index {F.index} exceeds n-2={F.n - 2}")
            if F.fiber_dim != self.p + self.q + 2 or F.index != self.p + 1:
                raise DomainError(f"sample {s.sample_id}: fold does not match (p, q)=({self.p}, {self.q})")

    def by_id(self) -> dict:
        return {s.sample_id: s for s in self.samples}


@dataclass
class BackgroundReport:
    pairs: dict
    blends: list
    compatible: bool

    def to_dict(self) -> dict:
        return {"compatible": self.compatible, "blends": self.blends,
                "samples": {str(k): compat_check(v) for k, v in self.pairs.items()}}


def build_compatible_backgrounds(fam: FiberFamily, base: BaseSampleSet | None = None) -> BackgroundReport:
    """Per-sample backgrounds (``2 I`` unless given) and their midpoint blends."""
    pairs = {}
    for s in fam.samples:
        m = canonical_background(s.fold) if s.background is None else np.asarray(s.background, dtype=float)
        pairs[s.sample_id] = MorsePair(s.fold, m)
    if base is not None:
        adjacent = base.neighbours()
    else:
        ids = [s.sample_id for s in sorted(fam.samples, key=lambda s: s.z)]
        adjacent = list(zip(ids, ids[1:]))
    blends = []
    ok = all(compat_check(p) for p in pairs.values())
    for a, b in adjacent:
        m = 0.5 * (pairs[a].background + pairs[b].background)
        good = compat_check(MorsePair(pairs[a].fold, m))
        blends.append({"pair": [a, b], "compatible": good})
        ok = ok and good
    return BackgroundReport(pairs, blends, bool(ok))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class FamilyMetricReport:
    fibers: list
    overlap_residuals: list
    continuity: dict
    backgrounds: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        fibers_ok = all(f["min_scalar"] > 0 and all(f["conclusions"].values()) for f in self.fibers)
        overlaps_ok = all(r["residual"] <= OVERLAP_TOL for r in self.overlap_residuals)
        extra_ok = all(self.extra.get("checks", {}).values())
        return bool(fibers_ok and overlaps_ok and self.backgrounds.get("compatible", True) and extra_ok)

    @property
    def min_scalar(self) -> float:
        return min(f["min_scalar"] for f in self.fibers)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "passed": self.passed,
            "min_scalar": self.min_scalar,
            "fibers": self.fibers,
            "overlap_residuals": self.overlap_residuals,
            "continuity": self.continuity,
            "backgrounds": self.backgrounds,
            **{k: v for k, v in self.extra.items() if not k.startswith("_")},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        """Columns: sample_id, z, min_scalar, max overlap residual at that sample."""
        worst = {}
        for r in self.overlap_residuals:
            worst[r["sample"]] = max(worst.get(r["sample"], 0.0), r["residual"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "z", "min_scalar", "overlap_residual"])
            for f in self.fibers:
                w.writerow([f["sample_id"], repr(f["z"]), repr(f["min_scalar"]), repr(worst.get(f["sample_id"], 0.0))])


def _digest(payload: str) -> str:
    return hashlib.sha256(payload.encode()).hexdigest()


def probe_points(fam: FiberFamily, count: int = 64, seed: int = 42) -> np.ndarray:
    """Morse-coordinate sample points inside every fibre's handle."""
    rmax = 0.9 * min(min(s.datum.epsilon, s.datum.delta) for s in fam.samples) * (math.pi / 2 + 1.0)
    rng = np.random.default_rng(seed)
    p1, q1 = fam.p + 1, fam.q + 1
    out = []
    for size in (p1, q1):
        v = rng.standard_normal((count, size))
        v /= np.linalg.norm(v, axis=1)[:, None]
        v *= (rmax * rng.uniform(0.0, 1.0, count))[:, None]
        out.append(v)
    return np.concatenate(out, axis=1)


def _fiber_entry(s: FiberSample, asm: CobordismMetricAssembly) -> dict:
    flags = asm.flags
    payload = asm.to_json()
    return {
        "sample_id": s.sample_id,
        "z": s.z,
        "min_scalar": asm.min_scalar,
        "regions": {k: v.min_scalar for k, v in asm.reports.items()},
        "stretch": asm.transition.stretch,
        "conclusions": {
            "extends_g0": bool(flags["extends_g0"]),
            "product_near_boundaries": bool(flags["product_near_lower"] and flags["product_above_c1"]),
            "psc": bool(flags["psc"]),
        },
        "digest": _digest(payload),
    }


def _build_fibers(fam: FiberFamily, grid: int, stages: int, seed: int, threads) -> list:
    def one(s: FiberSample):
        try:
            return build_cobordism_metric(s.g0, s.datum, grid=grid, stages=stages, seed=seed, threads=1)
        except NeckInfeasible as exc:
            raise NeckInfeasible(f"sample {s.sample_id} (z={s.z}): {exc}") from exc
    return ordered_map(one, fam.samples, threads)


def overlap_consistency(assemblies: dict, base: BaseSampleSet, points: np.ndarray) -> list:
    """Chart-A versus chart-B metric samples after aligning by each overlap frame."""
    out = []
    for ov in base.overlaps:
        asm = assemblies[ov.sample]
        Q = np.asarray(ov.frame, dtype=float)
        ta, ra = asm.metric_samples(points)
        tb, rb = asm.metric_samples(points @ Q.T)
        pulled = np.einsum("ki,nkl,lj->nij", Q, tb, Q)
        res = max(float(np.max(np.abs(pulled - ta))), float(np.max(np.abs(rb - ra))))
        out.append({"sample": ov.sample, "charts": list(ov.charts), "residual": res})
    return out


def continuity_modulus(assemblies: dict, base: BaseSampleSet, points: np.ndarray) -> dict:
    """Max over adjacent samples of ``|metric samples(z_i) - metric samples(z_j)| / |z_i - z_j|``."""
    L, worst = 0.0, None
    for a, b in base.neighbours():
        dz = abs(base.z[a] - base.z[b])
        if dz == 0:
            continue
        ta, ra = assemblies[a].metric_samples(points)
        tb, rb = assemblies[b].metric_samples(points)
        diff = max(float(np.max(np.abs(ta - tb))), float(np.max(np.abs(ra - rb))))
        if diff / dz >= L:
            L, worst = diff / dz, [a, b]
    return {"lipschitz": L, "worst_pair": worst, "finite": bool(np.isfinite(L))}


def run_family(fam: FiberFamily, base: BaseSampleSet, grid: int = 512, stages: int = 33,
               seed: int = 42, threads: int | None = None, probes: int = 64) -> FamilyMetricReport:
    """Fibrewise cobordism metrics plus overlap and continuity checks."""
    fam.check_admissible()
    base.validate()
    bg = build_compatible_backgrounds(fam, base)
    if not bg.compatible:
        raise CompatibilityError("background metrics are not compatible with the folds")
    built = _build_fibers(fam, grid, stages, seed, threads)
    assemblies = {s.sample_id: a for s, a in zip(fam.samples, built)}
    fibers = [_fiber_entry(s, a) for s, a in zip(fam.samples, built)]
    pts = probe_points(fam, probes, seed)
    residuals = overlap_consistency(assemblies, base, pts)
    cont = continuity_modulus(assemblies, base, pts)
    return FamilyMetricReport(fibers, residuals, cont, bg.to_dict(), {"_assemblies": assemblies})


# --------------------------------------------------------------------------
# sphere bundle: half + mirror + two caps
# --------------------------------------------------------------------------


@dataclass
class SphereFiber:
    """Fibre ``cap u W u W* u cap`` over one sample.

    The height coordinate ``h`` runs over ``[-1, 1]``: ``W`` occupies
    ``[0, 1]`` (its lower boundary at ``h = 1``), ``W*`` the mirror interval,
    and the caps sit beyond ``|h| = 1``.
    """

    half: CobordismMetricAssembly
    caps: tuple
    cap_residual: float
    cap_reports: tuple

    def sample(self, h: float, s: np.ndarray) -> np.ndarray:
        """Warping-function jets of the block metric at height ``h`` and radius ``s``."""
        level = 1.0 - abs(float(h))
        if level < 0:
            cap = self.caps[0 if h < 0 else 1]
            return np.stack([np.asarray(cap.profile.eval(np.minimum(s, cap.profile.domain_length), o)) for o in (0, 1, 2)])
        c0, c1 = self.half.levels
        if level <= c0:
            block = self.half.regions["lower"]
        elif level >= c1:
            block = self.half.regions["upper"]
        else:
            block = self.half.regions["standard"]
        lv = min(max(level, block.t0), block.t1)
        L = block.metric.domain_length
        return block.jets(lv, np.minimum(s, L))

    def mirror_exact(self, heights: np.ndarray, s: np.ndarray) -> bool:
        return all(np.array_equal(self.sample(h, s), self.sample(-h, s)) for h in heights)


def assemble_sphere_bundle(fam: FiberFamily, base: BaseSampleSet, cap_radius: float, grid: int = 512,
                           stages: int = 33, seed: int = 42, threads: int | None = None) -> FamilyMetricReport:
    """Glue each fibre to its upside-down copy and close both ends with torpedo caps."""
    if not cap_radius > 0:
        raise DomainError("cap radius must be positive")
    for s in fam.samples:
        amp = s.g0.a.sine_amplitude
        if amp is None or abs(amp - cap_radius) > CAP_TOL:
            raise GluingError(f"sample {s.sample_id}: boundary sphere radius {amp} differs from cap radius {cap_radius}")
    report = run_family(fam, base, grid, stages, seed, threads)
    assemblies = report.extra["_assemblies"]
    n = fam.p + fam.q + 1
    fibers = []
    mirror_ok, caps_ok = True, True
    heights = np.linspace(0.0, 1.5, 31)
    for entry in report.fibers:
        asm = assemblies[entry["sample_id"]]
        caps = tuple(torpedo_with_plateau(n + 1, cap_radius, DEFAULT_ETA) for _ in range(2))
        cap_residual = max(abs(c.plateau - cap_radius) for c in caps)
        if cap_residual > CAP_TOL:
            raise GluingError(f"cap plateau misses radius {cap_radius} by {cap_residual:.3g}")
        cap_reports = tuple(min_scan(c.metric, grid, 1) for c in caps)
        fiber = SphereFiber(asm, caps, cap_residual, cap_reports)
        s = np.linspace(0.0, asm.g0.domain_length, 65)
        mirror = fiber.mirror_exact(heights, s)
        mirror_ok &= mirror
        caps_ok &= cap_residual <= CAP_TOL
        cap_min = min(r.min_scalar for r in cap_reports)
        e = dict(entry)
        e["min_scalar"] = min(entry["min_scalar"], cap_min)
        e["regions"] = {**entry["regions"], "cap": cap_min}
        e["cap_residual"] = cap_residual
        e["mirror_exact"] = bool(mirror)
        e["conclusions"] = {**entry["conclusions"], "psc": bool(entry["conclusions"]["psc"] and cap_reports[0].positive)}
        fibers.append(e)
    extra = {
        "_assemblies": assemblies,
        "cap_radius": cap_radius,
        "checks": {"mirror_exact": bool(mirror_ok), "caps_matched": bool(caps_ok)},
    }
    return FamilyMetricReport(fibers, report.overlap_residuals, report.continuity, report.backgrounds, extra)


# --------------------------------------------------------------------------
# family specs
# --------------------------------------------------------------------------


def _frame_from_spec(spec: dict, p: int, q: int) -> np.ndarray:
    if "frame" in spec:
        return np.asarray(spec["frame"], dtype=float)
    th = spec.get("angles", [0.0, 0.0])
    return block_rotation(p, q, float(th[0]), float(th[1]))


def load_family(source) -> tuple:
    """``(FiberFamily, BaseSampleSet)`` from a JSON document or path.

    Layout::

        {"p": 1, "q": 3, "radius": 1.0,
         "samples": [{"id": 0, "z": 0.0, "delta": 0.1, "epsilon": 0.1,
                      "index": 2, "c": 0.5, "perturbation": [...], "background": [[...]]}],
         "charts": [{"name": "A", "samples": [0, 1]}],
         "overlaps": [{"sample": 1, "charts": ["A", "B"], "angles": [0.3, 1.1]}]}

    ``index`` defaults to ``p + 1`` and ``epsilon`` to ``delta``.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            source = json.load(fh)
    spec = source
    try:
        p, q = int(spec["p"]), int(spec["q"])
        radius = float(spec.get("radius", 1.0))
        eta = float(spec.get("eta", DEFAULT_ETA))
        g0 = round_sphere(p, q, radius)
        samples, zs = [], {}
        n = p + q + 1
        for raw in spec["samples"]:
            sid = int(raw["id"])
            delta = float(raw["delta"])
            lam = int(raw.get("index", p + 1))
            if lam > n - 2:
                raise AdmissibilityError(f"sample {sid}: fold index {lam} exceeds n-2={n - 2}")
            fold = standard_fold(0, n, lam, float(raw.get("c", 0.5)))
            if raw.get("perturbation"):
                from dataclasses import replace
                fold = replace(fold, perturbation=tuple(Monomial.from_dict(m) for m in raw["perturbation"]))
            datum = SurgeryDatum(p, q, float(raw.get("epsilon", delta)), delta, raw.get("neck_radius"), eta)
            bg = raw.get("background")
            samples.append(FiberSample(sid, float(raw["z"]), fold, g0, datum,
                                       None if bg is None else np.asarray(bg, dtype=float)))
            zs[sid] = float(raw["z"])
        charts = {c["name"]: [int(i) for i in c["samples"]] for c in spec.get("charts", [])}
        if not charts:
            charts = {"chart0": sorted(zs)}
        overlaps = [Overlap(int(o["sample"]), tuple(o["charts"]), _frame_from_spec(o, p, q))
                    for o in spec.get("overlaps", [])]
    except KeyError as exc:
        raise DomainError(f"family spec is missing field {exc}") from exc
    return FiberFamily(p, q, samples), BaseSampleSet(p, q, zs, charts, overlaps)


def circle_family_spec(p: int = 1, q: int = 3, count: int = 6, delta=0.1, radius: float = 1.0,
                       clutch: bool = True, seed: int = 42) -> dict:
    """Two-chart family over ``count`` points of a circle.

    ``delta`` is a constant or a pair ``(start, stop)`` interpolated linearly
    in ``z``.  Chart A covers the first ``count // 2 + 1`` samples, chart B
    the rest plus both ends, so there are two overlap samples; with
    ``clutch`` the overlaps carry random block-diagonal frames.
    """
    rng = np.random.default_rng(seed)
    zs = [i / count for i in range(count)]
    if isinstance(delta, (tuple, list)):
        ds = [delta[0] + (delta[1] - delta[0]) * z for z in zs]
    else:
        ds = [float(delta)] * count
    samples = [{"id": i, "z": z, "delta": d} for i, (z, d) in enumerate(zip(zs, ds))]
    half = count // 2
    charts = [{"name": "A", "samples": list(range(0, half + 1))},
              {"name": "B", "samples": list(range(half, count)) + [0]}]
    overlaps = []
    for sid in (0, half):
        frame = random_block_frame(p, q, rng) if clutch else np.eye(p + q + 2)
        overlaps.append({"sample": sid, "charts": ["A", "B"], "frame": frame.tolist()})
    return {"p": p, "q": q, "radius": radius, "samples": samples, "charts": charts, "overlaps": overlaps}


__all__ = [
    "BackgroundReport",
    "BaseSampleSet",
    "FamilyMetricReport",
    "FiberFamily",
    "FiberSample",
    "Overlap",
    "SphereFiber",
    "assemble_sphere_bundle",
    "block_rotation",
    "build_compatible_backgrounds",
    "circle_family_spec",
    "continuity_modulus",
    "load_family",
    "overlap_consistency",
    "probe_points",
    "random_block_frame",
    "run_family",
]
