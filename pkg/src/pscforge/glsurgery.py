"""Torpedo metrics, the standard handle, the neck isotopy and the surgery cobordism.

Conventions.  The round sphere ``S^n`` of radius ``r`` with ``n = p + q + 1``
is written as the doubly warped metric::

    dt^2 + a(t)^2 ds_p^2 + b(t)^2 ds_q^2,   a = r sin(t/r),  b = r cos(t/r)

on ``t in [0, S]`` with ``S = r pi / 2``.  The ``p``-sphere collapses at
``t = 0`` and the ``q``-sphere at ``t = S``; the surgery sphere ``S^p`` sits
at ``t = S`` and its tubular neighbourhood ``N = S^p x D^{q+1}`` is
``[S - neck_radius, S]``.  In Morse coordinates ``x = (x_-, x_+)`` on
``R^{p+1} x R^{q+1}`` the level ``t`` of a point is ``r atan2(|x_-|, |x_+|)``,
so every metric built here depends on ``(|x_-|, |x_+|)`` only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .curvature import (
    MIN_GRID,
    POSITIVITY_TOL,
    DoublyWarpedMetric,
    FlatFactor,
    ProductMetric,
    PscReport,
    SingleWarpedMetric,
    min_scan,
    report_from_values,
    warped_scalar,
)
from .errors import (
    AdmissibilityError,
    ConstructionError,
    DomainError,
    GluingError,
    NeckInfeasible,
)
from .parallel import ordered_map
from .smoothfn import (
    ConstTerm,
    Piece,
    SineTerm,
    SmoothProfile,
    combine,
    constant_profile,
    cosine_profile,
    hermite_spline,
    quintic_hermite,
    sine_profile,
    smoothstep,
)

DEFAULT_ETA = 0.2
PLATEAU_ATOL = 1e-12
NECK_ATOL = 1e-10
GLUE_ATOL = 1e-10
CONCAVITY_TOL = 1e-12


# --------------------------------------------------------------------------
# torpedo
# --------------------------------------------------------------------------


def _blend_coefficients(eta: float, shape: float) -> tuple:
    # second derivative of the blend in units delta = 1, local u in [0, 1]:
    # y''(u) = (1 - u)(a + c1 u + c2 u^2), every factor nonpositive
    a = -math.cos(eta)
    c1a = 6.0 * (-math.sin(eta) / eta - a / 2.0)
    return a, (1.0 - shape) * c1a, 2.0 * shape * c1a


def plateau_ratio(eta: float = DEFAULT_ETA, shape: float = 0.0) -> float:
    """``delta_bar / delta`` for the concave blend of width ``eta * delta``."""
    a, c1, c2 = _blend_coefficients(eta, shape)
    return math.cos(eta) + eta * math.sin(eta) + eta * eta * (a / 3.0 + c1 / 12.0 + c2 / 30.0)


def torpedo_profile(delta: float, eta: float = DEFAULT_ETA, shape: float = 0.0,
                    length: float | None = None, plateau: float | None = None) -> SmoothProfile:
    """Sine cap, concave quintic blend, constant plateau.

    ``plateau`` overrides the blend's natural end value; it must stay within
    ``1e-9`` relative of it so the blend remains the designed concave quintic
    up to rounding.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    if not 0.0 < eta < math.pi / 4:
        raise DomainError("eta must lie in (0, pi/4)")
    if not 0.0 <= shape <= 1.0:
        raise DomainError("shape must lie in [0, 1]")
    t_sine = delta * (math.pi / 2 - eta)
    t_flat = delta * math.pi / 2
    L = delta * (math.pi / 2 + 1.0) if length is None else float(length)
    if L <= t_flat:
        raise DomainError("length must exceed delta*pi/2 to hold the plateau")
    natural = delta * plateau_ratio(eta, shape)
    bar = natural if plateau is None else float(plateau)
    if abs(bar - natural) > 1e-9 * natural:
        raise ConstructionError("requested plateau is not reachable by the blend")
    start = (delta * math.cos(eta), math.sin(eta), -math.cos(eta) / delta)
    blend = quintic_hermite(t_sine, t_flat, start, (bar, 0.0, 0.0))
    pieces = (
        Piece(0.0, t_sine, (SineTerm(delta, 1.0 / delta),)),
        Piece(t_sine, t_flat, (blend,)),
        Piece(t_flat, L, (ConstTerm(bar),)),
    )
    prof = SmoothProfile(L, pieces, "disk", "open")
    u = np.linspace(t_sine, t_flat, 513)
    if np.max(prof.eval(u, 2)) > CONCAVITY_TOL / delta:
        raise ConstructionError("blend is not concave; reduce eta")
    return prof


@dataclass(frozen=True)
class TorpedoMetric:
    """``dt^2 + rho(t)^2 ds^2_{k-1}`` on ``D^k`` with a sine cap and a flat plateau."""

    k: int
    delta: float
    eta: float
    profile: SmoothProfile
    plateau: float
    shape: float = 0.0

    @property
    def metric(self) -> SingleWarpedMetric:
        return SingleWarpedMetric(self.k, self.profile)

    @property
    def sine_end(self) -> float:
        return self.delta * (math.pi / 2 - self.eta)

    @property
    def plateau_start(self) -> float:
        return self.delta * math.pi / 2

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "delta": self.delta,
            "eta": self.eta,
            "shape": self.shape,
            "plateau": self.plateau,
            "profile": self.profile.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TorpedoMetric":
        return cls(int(d["k"]), float(d["delta"]), float(d["eta"]), SmoothProfile.from_dict(d["profile"]),
                   float(d["plateau"]), float(d.get("shape", 0.0)))


def build_torpedo(k: int, delta: float, eta: float = DEFAULT_ETA, shape: float = 0.0,
                  length: float | None = None, plateau: float | None = None) -> TorpedoMetric:
    if k < 2:
        raise DomainError("torpedo dimension k must be >= 2")
    prof = torpedo_profile(delta, eta, shape, length, plateau)
    return TorpedoMetric(k, float(delta), float(eta), prof, float(prof.pieces[-1].terms[0].value), float(shape))


def torpedo_with_plateau(k: int, plateau: float, eta: float = DEFAULT_ETA, shape: float = 0.0,
                         length: float | None = None) -> TorpedoMetric:
    """Torpedo whose plateau radius is exactly ``plateau``."""
    if not plateau > 0:
        raise DomainError("plateau must be positive")
    delta = plateau / plateau_ratio(eta, shape)
    return build_torpedo(k, delta, eta, shape, length, plateau)


@dataclass
class TorpedoCheck:
    report: PscReport
    flags: dict

    @property
    def passed(self) -> bool:
        return all(self.flags[f] for f in ("condition_1", "condition_2", "condition_3", "psc"))

    def to_dict(self) -> dict:
        return {"passed": self.passed, "flags": self.flags, "report": self.report.to_dict()}


def verify_torpedo(m: TorpedoMetric, grid: int = 512, threads: int | None = None) -> TorpedoCheck:
    """Check the cap, plateau and concavity conditions and scan the curvature."""
    prof, d = m.profile, m.delta
    L = prof.domain_length

    t1 = np.linspace(0.0, min(m.sine_end, L), 257)
    cond1 = bool(np.max(np.abs(prof.eval(t1) - d * np.sin(t1 / d))) <= 4e-16 * d)

    if m.plateau_start < L:
        t2 = np.linspace(m.plateau_start, L, 257)
        flat = (np.max(np.abs(prof.eval(t2) - m.plateau)) <= PLATEAU_ATOL * d
                and np.max(np.abs(prof.eval(t2, 1))) <= PLATEAU_ATOL
                and np.max(np.abs(prof.eval(t2, 2))) <= PLATEAU_ATOL / d)
    else:
        flat = False
    in_range = 0.9 * d < m.plateau <= d * (1 + 1e-15)
    smooth = prof.is_c2()

    t3 = np.linspace(0.0, L, 8 * grid + 1)
    concave = bool(np.max(prof.eval(t3, 2)) <= CONCAVITY_TOL)

    labels = {0: "cap", len(prof.pieces) - 1: "plateau"}
    report = min_scan(m.metric, grid, threads, labels)
    flags = {
        "condition_1": cond1,
        "condition_2_plateau": bool(flat and in_range),
        "junctions_c2": bool(smooth),
        "condition_2": bool(flat and in_range and smooth),
        "condition_3": concave,
        "psc": report.positive,
        "degenerate": report.degenerate,
    }
    return TorpedoCheck(report, flags)


@dataclass
class ScalingTable:
    rows: list
    spread: float
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.spread <= 0.05 and self.monotone

    def to_dict(self) -> dict:
        return {"rows": self.rows, "spread": self.spread, "monotone": self.monotone, "passed": self.passed}


def scaling_check(k: int, deltas, eta: float = DEFAULT_ETA, grid: int = 512,
                  threads: int | None = None) -> ScalingTable:
    """Rows ``(delta, delta_bar, min_scalar, min_scalar * delta_bar^2, cap value)``."""
    if k < 3:
        raise DomainError("scaling check needs k >= 3")
    rows = []
    for delta in deltas:
        tor = build_torpedo(k, delta, eta)
        rep = min_scan(tor.metric, grid, threads)
        rows.append({
            "delta": float(delta),
            "plateau": tor.plateau,
            "min_scalar": rep.min_scalar,
            "normalized": rep.min_scalar * tor.plateau**2,
            "cap_value": k * (k - 1) / (delta * delta),
        })
    norm = np.array([r["normalized"] for r in rows])
    spread = float((norm.max() - norm.min()) / norm.mean()) if len(rows) else 0.0
    by_delta = sorted(rows, key=lambda r: -r["delta"])
    monotone = all(b["min_scalar"] > a["min_scalar"] for a, b in zip(by_delta, by_delta[1:]))
    return ScalingTable(rows, spread, monotone)


def torpedo_tensor(profile: SmoothProfile, x: np.ndarray) -> np.ndarray:
    """Cartesian components of ``dr^2 + rho(r)^2 ds^2`` at points ``x`` (shape ``(N, k)``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    if np.any(r > profile.domain_length):
        raise DomainError("sample point outside the torpedo disk")
    k = x.shape[1]
    safe = np.where(r > 0, r, 1.0)
    ratio = np.where(r > 0, np.asarray(profile.eval(r)) / safe, 1.0)
    unit = x / safe[:, None]
    eye = np.eye(k)[None, :, :]
    outer = unit[:, :, None] * unit[:, None, :]
    return (ratio**2)[:, None, None] * eye + (1.0 - ratio**2)[:, None, None] * outer


# --------------------------------------------------------------------------
# surgery data and the standard handle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SurgeryDatum:
    """Surgery on ``S^p x D^{q+1}``; the handle has index ``p + 1``."""

    p: int
    q: int
    epsilon: float
    delta: float
    neck_radius: float | None = None
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.p < 0:
            raise DomainError("p must be >= 0")
        if self.q < 2:
            raise AdmissibilityError(
                f"index p+1={self.p + 1} exceeds n-2={self.p + self.q - 1}; need q >= 2")
        if not (self.epsilon > 0 and self.delta > 0):
            raise DomainError("torpedo radii must be positive")
        if self.neck_radius is not None and not self.neck_radius > 0:
            raise DomainError("neck radius must be positive")

    @property
    def n(self) -> int:
        return self.p + self.q + 1

    @property
    def index(self) -> int:
        return self.p + 1

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "epsilon": self.epsilon, "delta": self.delta,
                "neck_radius": self.neck_radius, "eta": self.eta}

    @classmethod
    def from_dict(cls, d: dict) -> "SurgeryDatum":
        return cls(int(d["p"]), int(d["q"]), float(d["epsilon"]), float(d["delta"]),
                   d.get("neck_radius"), float(d.get("eta", DEFAULT_ETA)))


@dataclass(frozen=True)
class HandleProduct:
    """``g_tor^{p+1}(epsilon) + g_tor^{q+1}(delta)`` on ``D^{p+1} x D^{q+1}``."""

    datum: SurgeryDatum
    first: TorpedoMetric | None
    second: TorpedoMetric
    metric: ProductMetric

    def scalar(self, ta, tb) -> np.ndarray:
        from .curvature import scalar_product_metric
        return np.asarray(scalar_product_metric(self.metric, ta, tb))

    def tensor(self, x: np.ndarray) -> np.ndarray:
        """Block-diagonal Cartesian metric at Morse-coordinate points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p1 = self.datum.p + 1
        lo = x[:, :p1]
        if self.first is None:
            if np.any(np.abs(lo) > self.metric.first.length):
                raise DomainError("sample point outside the handle")
            g1 = np.ones((len(x), 1, 1))
        else:
            g1 = torpedo_tensor(self.first.profile, lo)
        g2 = torpedo_tensor(self.second.profile, x[:, p1:])
        d = x.shape[1]
        out = np.zeros((len(x), d, d))
        out[:, :p1, :p1] = g1
        out[:, p1:, p1:] = g2
        return out


def handle_product(d: SurgeryDatum) -> HandleProduct:
    second = build_torpedo(d.q + 1, d.delta, d.eta)
    if d.p == 0:
        first = None
        f1 = FlatFactor(d.epsilon * (math.pi / 2 + 1.0))
    else:
        first = build_torpedo(d.p + 1, d.epsilon, d.eta)
        f1 = first.metric
    return HandleProduct(d, first, second, ProductMetric(f1, second.metric))


# --------------------------------------------------------------------------
# neck isotopy
# --------------------------------------------------------------------------


def round_sphere(p: int, q: int, radius: float = 1.0) -> DoublyWarpedMetric:
    """``S^{p+q+1}`` of the given radius as ``dt^2 + a^2 ds_p^2 + b^2 ds_q^2``."""
    S = radius * math.pi / 2
    return DoublyWarpedMetric(p, q, sine_profile(radius, S), cosine_profile(radius, S))


def _round_radius(g0: DoublyWarpedMetric) -> float:
    amp = g0.a.sine_amplitude
    b0 = g0.b.pieces[0].terms[0] if len(g0.b.pieces) == 1 and len(g0.b.pieces[0].terms) == 1 else None
    if (amp is None or len(g0.a.pieces) != 1 or not isinstance(b0, SineTerm)
            or abs(b0.amplitude - amp) > 1e-15 * amp or abs(b0.phase - math.pi / 2) > 1e-15
            or abs(g0.domain_length - amp * math.pi / 2) > 1e-12 * amp):
        raise DomainError("g0 must be a round sphere (a = r sin(t/r), b = r cos(t/r))")
    return amp


def neck_target(g0: DoublyWarpedMetric, d: SurgeryDatum) -> tuple:
    """Target metric and neighbourhood size; ``NeckInfeasible`` when delta does not fit."""
    r = _round_radius(g0)
    S = g0.domain_length
    R = S / 2 if d.neck_radius is None else float(d.neck_radius)
    bend = d.delta * math.pi / 2
    if R < bend or S - R < bend or R >= S:
        raise NeckInfeasible(
            f"delta={d.delta} does not fit: need delta*pi/2={bend:.6g} <= neck_radius={R:.6g} "
            f"<= S - delta*pi/2={S - bend:.6g} on the radius-{r} sphere")
    a = torpedo_profile(d.delta, d.eta, length=S)
    b = torpedo_profile(d.delta, d.eta, length=S).reflected()
    return DoublyWarpedMetric(d.p, d.q, a, b), R


def _jets(prof: SmoothProfile, t: np.ndarray) -> np.ndarray:
    return np.stack([np.asarray(prof.eval(t, i)) for i in (0, 1, 2)])


def _doubly_from_jets(p: int, q: int, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Doubly warped scalar curvature from stacked jets (value, d1, d2) along axis 0."""
    a, a1, a2 = A
    b, b1, b2 = B
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.zeros(np.shape(a))
        if p:
            out += -2.0 * p * a2 / a + p * (p - 1) * (1.0 - a1 * a1) / (a * a)
        if q:
            out += -2.0 * q * b2 / b + q * (q - 1) * (1.0 - b1 * b1) / (b * b)
        if p and q:
            out -= 2.0 * p * q * a1 * b1 / (a * b)
        bad = (p and (a <= 0)) | (q and (b <= 0))
    return np.where(bad | ~np.isfinite(out), -np.inf, out)


@dataclass
class IsotopyPath:
    """Stages ``g_lambda`` from ``g0`` to the standard neck form.

    ``g_lambda = (1 - lambda) g0 + lambda target + lambda (1 - lambda) C``
    componentwise in the warping functions, with ``C`` a Hermite correction
    that vanishes with all its jets at both closures.
    """

    datum: SurgeryDatum
    g0: DoublyWarpedMetric
    target: DoublyWarpedMetric
    neck_radius: float
    correction: tuple
    lambdas: tuple
    stages: tuple
    reports: tuple
    search: dict = field(default_factory=dict)

    @property
    def final(self) -> DoublyWarpedMetric:
        return self.stages[-1]

    @property
    def min_scalar(self) -> float:
        return min(r.min_scalar for r in self.reports)

    @property
    def positive(self) -> bool:
        return all(r.positive for r in self.reports)

    def profiles_at(self, lam: float) -> tuple:
        """Warping functions of ``g_lambda`` for any ``lambda`` in ``[0, 1]``."""
        if lam == 0.0:
            return self.g0.a, self.g0.b
        if lam == 1.0:
            return self.target.a, self.target.b
        ca, cb = self.correction
        w = [1.0 - lam, lam, lam * (1.0 - lam)]
        return (combine([self.g0.a, self.target.a, ca], w), combine([self.g0.b, self.target.b, cb], w))

    def jets_grid(self, s: np.ndarray) -> dict:
        """Jets of the path's three ingredients on ``s`` (reused by the transition block)."""
        ca, cb = self.correction
        return {
            "a": np.stack([_jets(self.g0.a, s), _jets(self.target.a, s), _jets(ca, s)]),
            "b": np.stack([_jets(self.g0.b, s), _jets(self.target.b, s), _jets(cb, s)]),
        }

    def neighborhood_residual(self, samples: int = 1025) -> float:
        """Distance of the final stage from ``delta_bar^2 ds_p^2 + g_tor^{q+1}(delta)`` on N."""
        d = self.datum
        S = self.g0.domain_length
        s = np.linspace(S - self.neck_radius, S, samples)
        ref_b = torpedo_profile(d.delta, d.eta, length=S).reflected()
        bar = d.delta * plateau_ratio(d.eta)
        out = 0.0
        for order in (0, 1, 2):
            ea = np.asarray(self.final.a.eval(s, order)) - (bar if order == 0 else 0.0)
            eb = np.asarray(self.final.b.eval(s, order)) - np.asarray(ref_b.eval(s, order))
            out = max(out, float(np.max(np.abs(ea))), float(np.max(np.abs(eb))))
        return out

    def to_dict(self) -> dict:
        return {
            "datum": self.datum.to_dict(),
            "neck_radius": self.neck_radius,
            "lambdas": list(self.lambdas),
            "min_scalar": self.min_scalar,
            "positive": self.positive,
            "neighborhood_residual": self.neighborhood_residual(),
            "stage_min": [r.min_scalar for r in self.reports],
            "search": self.search,
            "g0": self.g0.to_dict(),
            "target": self.target.to_dict(),
            "correction": [c.to_dict() for c in self.correction],
        }


def _correction_basis(S: float, n_ctrl: int) -> tuple:
    knots = np.linspace(0.0, S, n_ctrl + 2)
    basis = []
    for j in range(1, n_ctrl + 1):
        vals = np.zeros(n_ctrl + 2)
        vals[j] = 1.0
        zero = np.zeros(n_ctrl + 2)
        basis.append(hermite_spline(knots, vals, zero, zero))
    return knots, basis


def _correction_profile(knots: np.ndarray, coeffs: np.ndarray) -> SmoothProfile:
    vals = np.concatenate([[0.0], coeffs, [0.0]])
    zero = np.zeros_like(vals)
    return hermite_spline(knots, vals, zero, zero)


def standardize_near_sphere(g0: DoublyWarpedMetric, d: SurgeryDatum, stages: int = 33, grid: int = 512,
                            control_points: int = 8, refinements: int = 3, trials: int = 24,
                            seed: int = 42, threads: int | None = None) -> IsotopyPath:
    """Isotopy through psc metrics from the round sphere to the standard neck form.

    The search starts from the straight-line path (no correction) and, if some
    stage fails, runs seeded coarse-to-fine perturbation rounds on the Hermite
    control values, maximizing the smallest scalar curvature over all stages.
    """
    if g0.p != d.p or g0.q != d.q:
        raise DomainError("g0 and the surgery datum disagree on (p, q)")
    if grid < MIN_GRID:
        raise DomainError(f"grid resolution must be >= {MIN_GRID}")
    if stages < 2:
        raise NeckInfeasible(f"a stage budget of {stages} cannot connect g0 to the neck form")
    target, R = neck_target(g0, d)
    S = g0.domain_length
    s = S * np.arange(1, grid + 1) / (grid + 1)
    lambdas = np.linspace(0.0, 1.0, stages)
    inner = lambdas[1:-1]

    knots, basis = _correction_basis(S, control_points)
    A0, AT = _jets(g0.a, s), _jets(target.a, s)
    B0, BT = _jets(g0.b, s), _jets(target.b, s)
    basis_jets = np.stack([_jets(bp, s) for bp in basis])  # (n_ctrl, 3, grid)

    def objective(c: np.ndarray) -> float:
        if not len(inner):
            return math.inf
        ca = np.tensordot(c[:control_points], basis_jets, axes=1)
        cb = np.tensordot(c[control_points:], basis_jets, axes=1)
        lam = inner[:, None, None]
        A = (1 - lam) * A0 + lam * AT + lam * (1 - lam) * ca
        B = (1 - lam) * B0 + lam * BT + lam * (1 - lam) * cb
        return float(np.min(_doubly_from_jets(d.p, d.q, A.transpose(1, 0, 2), B.transpose(1, 0, 2))))

    rng = np.random.default_rng(seed)
    best_c = np.zeros(2 * control_points)
    best = objective(best_c)
    log = [{"round": 0, "step": 0.0, "min_scalar": best}]
    step = 0.25 * d.delta
    for rnd in range(1, refinements + 1):
        if best > POSITIVITY_TOL:
            break
        for _ in range(trials):
            cand = best_c + step * rng.standard_normal(best_c.shape)
            val = objective(cand)
            if val > best:
                best, best_c = val, cand
        log.append({"round": rnd, "step": step, "min_scalar": best})
        step *= 0.5
    if not best > POSITIVITY_TOL:
        raise NeckInfeasible(
            f"no all-positive path after {refinements} refinement rounds (best grid minimum {best:.6g})")

    correction = (_correction_profile(knots, best_c[:control_points]),
                  _correction_profile(knots, best_c[control_points:]))
    path = IsotopyPath(d, g0, target, R, correction, tuple(float(x) for x in lambdas), (), (),
                       {"rounds": log, "control_points": control_points, "seed": seed,
                        "coefficients": [float(x) for x in best_c]})
    metrics = [g0] + [DoublyWarpedMetric(d.p, d.q, *path.profiles_at(float(lam))) for lam in inner] + [target]
    reports = ordered_map(lambda m: min_scan(m, grid, 1), metrics, threads)
    path.stages = tuple(metrics)
    path.reports = tuple(reports)
    if not path.positive:
        raise NeckInfeasible(f"certification scan found a nonpositive stage (min {path.min_scalar:.6g})")
    return path


# --------------------------------------------------------------------------
# transition block dtau^2 + g_{lambda(tau)}
# --------------------------------------------------------------------------


@dataclass
class TransitionBlock:
    """``dtau^2 + g_{lambda(tau)}`` on ``[0, T] x [0, S]`` with ``lambda = smoothstep(tau/T)``."""

    path: IsotopyPath
    stretch: float

    def scan(self, grid: int = 512, tau_grid: int = 128) -> PscReport:
        d = self.path.datum
        S = self.path.g0.domain_length
        T = self.stretch
        s = S * np.arange(1, grid + 1) / (grid + 1)
        tau = np.linspace(0.0, T, tau_grid)
        u = tau / T
        lam = np.asarray(smoothstep(u, 0))[:, None]
        lam1 = (np.asarray(smoothstep(u, 1)) / T)[:, None]
        lam2 = (np.asarray(smoothstep(u, 2)) / T**2)[:, None]
        jets = self.path.jets_grid(s)
        w = lam * (1 - lam)
        w1 = lam1 * (1 - 2 * lam)
        w2 = lam2 * (1 - 2 * lam) - 2 * lam1 * lam1

        def fields(J):
            J0, JT, JC = J
            val = (1 - lam) * J0[0] + lam * JT[0] + w * JC[0]
            ds = (1 - lam) * J0[1] + lam * JT[1] + w * JC[1]
            dss = (1 - lam) * J0[2] + lam * JT[2] + w * JC[2]
            dt = lam1 * (JT[0] - J0[0]) + w1 * JC[0]
            dtt = lam2 * (JT[0] - J0[0]) + w2 * JC[0]
            return val, (dt, ds), dtt + dss

        a, ga, la = fields(jets["a"])
        b, gb, lb = fields(jets["b"])
        with np.errstate(divide="ignore", invalid="ignore"):
            R = warped_scalar([la, lb], [ga, gb], [a, b], [d.p, d.q])
        R = np.where(np.isfinite(R), R, -np.inf)
        return report_from_values(
            R, [tau, s], {"kind": "transition", "n": [tau_grid, grid], "stretch": T},
            {"transition": float(np.min(R))},
            {"tau": np.broadcast_to(tau[:, None], R.shape), "t": np.broadcast_to(s[None, :], R.shape), "R": R},
        )

    def ends_are_products(self) -> bool:
        """``lambda'`` and ``lambda''`` vanish at both ends, so the block is a product there."""
        return all(float(smoothstep(np.array(x), o)) == 0.0 for x in (0.0, 1.0) for o in (1, 2))


def find_stretch(path: IsotopyPath, grid: int = 512, tau_grid: int = 128, max_doublings: int = 12) -> tuple:
    """Smallest ``T`` in ``1, 2, 4, ...`` for which the transition block is psc."""
    T = 1.0
    last = None
    for _ in range(max_doublings + 1):
        block = TransitionBlock(path, T)
        last = block.scan(grid, tau_grid)
        if last.positive:
            return block, last
        T *= 2.0
    raise NeckInfeasible(f"transition block not psc up to stretch {T / 2:g} (min {last.min_scalar:.6g})")


# --------------------------------------------------------------------------
# cobordism assembly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderBlock:
    """``g + dt^2`` on ``[t0, t1] x M``."""

    metric: DoublyWarpedMetric
    t0: float
    t1: float

    def jets(self, level: float, s: np.ndarray) -> np.ndarray:
        if not self.t0 <= level <= self.t1:
            raise DomainError("level outside the block")
        return np.concatenate([_jets(self.metric.a, s), _jets(self.metric.b, s)])


def post_surgery_metric(path: IsotopyPath, handle: HandleProduct) -> tuple:
    """``g_1`` on ``(S^n - N) u D^{p+1} x S^q`` and the gluing residual."""
    d = path.datum
    S = path.g0.domain_length
    cut = S - path.neck_radius
    outer_a = path.target.a.restricted(cut)
    bar_b = float(path.target.b.eval(cut))
    if handle.first is None:
        cap = constant_profile(bar_b, handle.metric.first.length)
        eps_bar = bar_b
    else:
        cap = handle.first.profile.reflected()
        eps_bar = handle.first.plateau
    residual = max(abs(float(outer_a.eval(cut)) - eps_bar), abs(float(outer_a.eval(cut, 1))),
                   abs(float(path.target.b.eval(cut)) - handle.second.plateau))
    a1 = outer_a.shifted_concat(cap)
    b1 = constant_profile(bar_b, a1.domain_length)
    return DoublyWarpedMetric(d.p, d.q, a1, b1), residual


@dataclass
class CobordismMetricAssembly:
    datum: SurgeryDatum
    levels: tuple
    g0: DoublyWarpedMetric
    path: IsotopyPath
    transition: TransitionBlock
    handle: HandleProduct
    g1: DoublyWarpedMetric
    regions: dict
    reports: dict
    gluing_residual: float
    flags: dict

    @property
    def lower_trace(self) -> DoublyWarpedMetric:
        return self.regions["lower"].metric

    @property
    def upper_trace(self) -> DoublyWarpedMetric:
        return self.regions["upper"].metric

    @property
    def min_scalar(self) -> float:
        return min(r.min_scalar for r in self.reports.values())

    @property
    def positive(self) -> bool:
        return all(r.positive for r in self.reports.values())

    def metric_samples(self, x: np.ndarray) -> tuple:
        """Handle tensors and radial data at Morse-coordinate points ``x``.

        Returns ``(tensors, radial)``; ``radial`` holds the warping functions
        of ``g0``, ``g_std`` and ``g1`` at the level ``t(x)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p1 = self.datum.p + 1
        tensors = self.handle.tensor(x)
        rm = np.linalg.norm(x[:, :p1], axis=1)
        rp = np.linalg.norm(x[:, p1:], axis=1)
        S = self.g0.domain_length
        t = (2 * S / math.pi) * np.arctan2(rm, rp)
        t = np.clip(t, 0.0, S)
        g_std = self.path.final
        cols = [self.g0.a.eval(t), self.g0.b.eval(t), g_std.a.eval(t), g_std.b.eval(t),
                self.g1.a.eval(np.minimum(t, self.g1.domain_length)), self.g1.b.eval(np.minimum(t, self.g1.domain_length))]
        return tensors, np.stack([np.asarray(c) for c in cols], axis=1)

    def to_dict(self) -> dict:
        return {
            "datum": self.datum.to_dict(),
            "levels": list(self.levels),
            "stretch": self.transition.stretch,
            "gluing_residual": self.gluing_residual,
            "min_scalar": self.min_scalar,
            "positive": self.positive,
            "flags": self.flags,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
            "path": self.path.to_dict(),
            "g1": self.g1.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_cobordism_metric(g0: DoublyWarpedMetric, d: SurgeryDatum, levels: tuple = (0.4, 0.6),
                           grid: int = 512, stages: int = 33, seed: int = 42,
                           threads: int | None = None) -> CobordismMetricAssembly:
    """psc metric on the trace of the surgery, a product near both ends."""
    c0, c1 = levels
    if not 0.0 < c0 < 0.5 < c1 < 1.0:
        raise DomainError("levels must satisfy 0 < c0 < 1/2 < c1 < 1")
    path = standardize_near_sphere(g0, d, stages=stages, grid=grid, seed=seed, threads=threads)
    block, trep = find_stretch(path, grid)
    handle = handle_product(d)
    g1, residual = post_surgery_metric(path, handle)
    if residual > GLUE_ATOL:
        raise GluingError(f"handle does not match the neck: residual {residual:.3g} (use epsilon = delta)")

    regions = {
        "lower": CylinderBlock(g0, 0.0, c0),
        "transition": block,
        "standard": CylinderBlock(path.final, 0.5 * (c0 + 0.5), c1),
        "handle": handle,
        "upper": CylinderBlock(g1, c1, 1.0),
    }
    scans = ordered_map(
        lambda item: (item[0], min_scan(item[1], grid, 1)),
        [("lower", g0), ("standard", path.final), ("handle", handle.metric), ("upper", g1)],
        threads,
    )
    reports = {"transition": trep, **dict(scans)}
    reports = {k: reports[k] for k in ("lower", "transition", "standard", "handle", "upper")}

    s = g1.domain_length * np.linspace(0.0, 1.0, 65)
    upper = regions["upper"]
    ref = upper.jets(c1, s)
    product_upper = all(np.array_equal(ref, upper.jets(lv, s)) for lv in np.linspace(c1, 1.0, 5))
    s0 = g0.domain_length * np.linspace(0.0, 1.0, 65)
    lower = regions["lower"]
    ref0 = lower.jets(0.0, s0)
    product_lower = all(np.array_equal(ref0, lower.jets(lv, s0)) for lv in np.linspace(0.0, c0, 5))
    flags = {
        "extends_g0": regions["lower"].metric is g0,
        "product_near_lower": bool(product_lower and block.ends_are_products()),
        "product_above_c1": bool(product_upper),
        "neck_standard": path.neighborhood_residual() <= NECK_ATOL,
        "glued": residual <= GLUE_ATOL,
        "psc": all(r.positive for r in reports.values()),
    }
    return CobordismMetricAssembly(d, (c0, c1), g0, path, block, handle, g1, regions, reports, residual, flags)


__all__ = [
    "CobordismMetricAssembly",
    "CylinderBlock",
    "HandleProduct",
    "IsotopyPath",
    "ScalingTable",
    "SurgeryDatum",
    "TorpedoCheck",
    "TorpedoMetric",
    "TransitionBlock",
    "build_cobordism_metric",
    "build_torpedo",
    "find_stretch",
    "handle_product",
    "neck_target",
    "plateau_ratio",
    "post_surgery_metric",
    "round_sphere",
    "scaling_check",
    "standardize_near_sphere",
    "torpedo_profile",
    "torpedo_tensor",
    "torpedo_with_plateau",
    "verify_torpedo",
]
