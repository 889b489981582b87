"""Standard fold maps, their cutoff deformation, and critical-point certification.

Fibre coordinates are ``x = (x_1, ..., x_N)`` with ``N = n + 1``.  A fold of
index ``lam`` is::

    F(x) = c - x_1^2 - ... - x_lam^2 + x_{lam+1}^2 + ... + x_N^2 + w(x) P(x)

with ``P`` a sum of monomials and ``w = 1`` for the undeformed map.  The
deformation toward the quadratic normal form uses ``w = 1 - t phi_alpha(|x|)``.
Evaluating both maps through the same expression is what makes the
"unchanged outside 2 alpha" and "standard inside alpha" properties hold
bitwise rather than approximately.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, NoValidAlpha
from .parallel import ordered_map
from .smoothfn import Cutoff, make_cutoff

log = logging.getLogger(__name__)

DEDUP_RADIUS = 1e-8
NEWTON_TOL = 1e-10
DEFAULT_T_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
CUBIC_SLACK = 1.10


@dataclass(frozen=True)
class Monomial:
    exponents: tuple
    coefficient: float

    @property
    def degree(self) -> int:
        return int(sum(self.exponents))

    def _powers(self, x: np.ndarray, shift: np.ndarray) -> np.ndarray:
        e = np.asarray(self.exponents, dtype=float) - shift
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(e > 0, np.power(x, np.maximum(e, 0.0)), 1.0)
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.coefficient * np.prod(self._powers(x, np.zeros(x.shape[1])), axis=1)

    def grad(self, x: np.ndarray) -> np.ndarray:
        N = x.shape[1]
        e = np.asarray(self.exponents, dtype=float)
        out = np.zeros_like(x)
        for j in range(N):
            if e[j] == 0:
                continue
            shift = np.zeros(N)
            shift[j] = 1.0
            out[:, j] = self.coefficient * e[j] * np.prod(self._powers(x, shift), axis=1)
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        N = x.shape[1]
        e = np.asarray(self.exponents, dtype=float)
        out = np.zeros((len(x), N, N))
        for i in range(N):
            for j in range(i, N):
                shift = np.zeros(N)
                shift[i] += 1.0
                shift[j] += 1.0
                factor = e[i] * (e[j] - 1.0) if i == j else e[i] * e[j]
                if factor == 0 or np.any(e - shift < 0):
                    continue
                v = self.coefficient * factor * np.prod(self._powers(x, shift), axis=1)
                out[:, i, j] = v
                out[:, j, i] = v
        return out

    def to_dict(self) -> dict:
        return {"kind": "monomial", "exponents": list(self.exponents), "coefficient": self.coefficient}

    @classmethod
    def from_dict(cls, d: dict) -> "Monomial":
        if d.get("kind", "monomial") != "monomial":
            raise DomainError(f"unsupported perturbation kind {d.get('kind')!r}")
        exps = tuple(int(e) for e in d["exponents"])
        if any(e < 0 for e in exps):
            raise DomainError("exponents must be nonnegative")
        return cls(exps, float(d["coefficient"]))


@dataclass(frozen=True)
class FoldMap:
    """Fibre Morse function of a fold family (the base coordinates ``y`` are inert).

    ``alpha`` and ``t`` are set on deformed maps only.
    """

    base_dim: int
    fiber_dim: int
    index: int
    c: float = 0.0
    perturbation: tuple = ()
    declared_cubic: bool = True
    alpha: float | None = None
    t: float = 0.0

    def __post_init__(self):
        if self.fiber_dim < 1:
            raise DomainError("fiber dimension must be >= 1")
        if not 0 <= self.index <= self.fiber_dim:
            raise DomainError(f"index {self.index} outside [0, {self.fiber_dim}]")
        for m in self.perturbation:
            if len(m.exponents) != self.fiber_dim:
                raise DomainError("monomial exponents must match the fibre dimension")

    @property
    def n(self) -> int:
        return self.fiber_dim - 1

    @property
    def signs(self) -> np.ndarray:
        return np.concatenate([-np.ones(self.index), np.ones(self.fiber_dim - self.index)])

    @property
    def standard(self) -> "FoldMap":
        return replace(self, perturbation=(), alpha=None, t=0.0)

    @property
    def cutoff(self) -> Cutoff | None:
        return None if self.alpha is None else make_cutoff(self.alpha)

    def _x(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.fiber_dim:
            raise DomainError(f"points must have {self.fiber_dim} fibre coordinates")
        return x

    def _p(self, x: np.ndarray) -> tuple:
        val = np.zeros(len(x))
        grad = np.zeros_like(x)
        hess = np.zeros((len(x), x.shape[1], x.shape[1]))
        for m in self.perturbation:
            val = val + m.value(x)
            grad = grad + m.grad(x)
            hess = hess + m.hess(x)
        return val, grad, hess

    def _weight(self, x: np.ndarray) -> tuple:
        """``w = 1 - t phi(|x|)`` and the radial derivatives of ``phi``."""
        n = len(x)
        if self.alpha is None or self.t == 0.0:
            return np.ones(n), np.zeros(n), np.zeros(n), np.linalg.norm(x, axis=1)
        r = np.linalg.norm(x, axis=1)
        cut = self.cutoff
        return 1.0 - self.t * cut(r), np.asarray(cut(r, 1)), np.asarray(cut(r, 2)), r

    def value(self, x) -> np.ndarray:
        x = self._x(x)
        # left to right, so the quadratic form is bitwise c - x_1^2 - ... + x_N^2
        std = np.full(len(x), self.c)
        for s, col in zip(self.signs, x.T):
            std = std + s * (col * col)
        if not self.perturbation:
            return std
        w, _, _, _ = self._weight(x)
        return std + w * self._p(x)[0]

    def grad(self, x) -> np.ndarray:
        x = self._x(x)
        std = 2.0 * self.signs * x
        if not self.perturbation:
            return std
        P, dP, _ = self._p(x)
        w, p1, _, r = self._weight(x)
        out = std + w[:, None] * dP
        active = p1 != 0.0
        if np.any(active):
            unit = x[active] / r[active, None]
            out[active] -= (self.t * p1[active] * P[active])[:, None] * unit
        return out

    def hess(self, x) -> np.ndarray:
        x = self._x(x)
        N = self.fiber_dim
        std = np.broadcast_to(np.diag(2.0 * self.signs), (len(x), N, N)).copy()
        if not self.perturbation:
            return std
        P, dP, HP = self._p(x)
        w, p1, p2, r = self._weight(x)
        out = std + w[:, None, None] * HP
        active = (p1 != 0.0) | (p2 != 0.0)
        if np.any(active):
            xa, ra = x[active], r[active]
            u = xa / ra[:, None]
            uu = u[:, :, None] * u[:, None, :]
            cross = u[:, :, None] * dP[active][:, None, :] + dP[active][:, :, None] * u[:, None, :]
            radial = p2[active, None, None] * uu + (p1[active] / ra)[:, None, None] * (np.eye(N) - uu)
            out[active] -= self.t * (p1[active, None, None] * cross + P[active, None, None] * radial)
        return out

    def perturbation_value(self, x) -> np.ndarray:
        x = self._x(x)
        return self._p(x)[0] if self.perturbation else np.zeros(len(x))

    def to_dict(self) -> dict:
        return {
            "base_dim": self.base_dim,
            "fiber_dim": self.fiber_dim,
            "index": self.index,
            "c": self.c,
            "perturbation": [m.to_dict() for m in self.perturbation],
            "declared_cubic": self.declared_cubic,
            "alpha": self.alpha,
            "t": self.t,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldMap":
        return cls(
            int(d.get("base_dim", 0)),
            int(d["fiber_dim"]),
            int(d["index"]),
            float(d.get("c", 0.0)),
            tuple(Monomial.from_dict(m) for m in d.get("perturbation", [])),
            bool(d.get("declared_cubic", True)),
            d.get("alpha"),
            float(d.get("t", 0.0)),
        )


def standard_fold(k: int, n: int, lam: int, c: float = 0.0) -> FoldMap:
    """``c - |x_-|^2 + |x_+|^2`` on ``R^{n+1}`` with ``lam`` negative directions."""
    if not 0 <= lam <= n + 1:
        raise DomainError(f"index {lam} outside [0, {n + 1}]")
    return FoldMap(k, n + 1, lam, float(c))


def perturbed_fold(k: int, n: int, lam: int, monomials, c: float = 0.0, declared_cubic: bool = True) -> FoldMap:
    mons = tuple(m if isinstance(m, Monomial) else Monomial.from_dict(m) for m in monomials)
    return replace(standard_fold(k, n, lam, c), perturbation=mons, declared_cubic=declared_cubic)


def deform(F: FoldMap, alpha: float, t: float) -> FoldMap:
    """``F_t = F_std + (1 - t phi_alpha(|x|)) (F - F_std)``."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if not 0.0 <= t <= 1.0:
        raise DomainError("t must lie in [0, 1]")
    if F.alpha is not None:
        raise DomainError("F is already a deformation")
    return replace(F, alpha=float(alpha), t=float(t))


def load_fold(source) -> FoldMap:
    """Fold from a JSON document or path: fibre data plus a monomial list."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            source = json.load(fh)
    d = dict(source)
    if "fiber_dim" not in d and "n" in d:
        d["fiber_dim"] = int(d["n"]) + 1
    return FoldMap.from_dict(d)


# --------------------------------------------------------------------------
# critical points
# --------------------------------------------------------------------------


@dataclass
class CriticalSearch:
    points: np.ndarray
    residuals: np.ndarray
    dropped: int

    def __len__(self) -> int:
        return len(self.points)

    def is_origin_only(self) -> bool:
        return len(self.points) == 1 and float(np.linalg.norm(self.points[0])) <= DEDUP_RADIUS


def _seed_grid(N: int, half: float, per_axis: int) -> np.ndarray:
    axis = np.linspace(-half, half, per_axis)
    mesh = np.meshgrid(*([axis] * N), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def critical_set(F: FoldMap, box: float = 0.5, per_axis: int = 9, extra_scales=(),
                 max_iter: int = 60) -> CriticalSearch:
    """Zeros of the fibre gradient in the cube ``[-box, box]^N``.

    Seeds come from a ``per_axis``-point grid on the cube plus one grid per
    entry of ``extra_scales`` (finer cubes around the origin).  Newton runs on
    all seeds at once; seeds that leave the cube or stall are dropped.
    """
    if per_axis < 9:
        raise DomainError("critical search needs at least 9 seeds per axis")
    if not box > 0:
        raise DomainError("box must be positive")
    N = F.fiber_dim
    seeds = [_seed_grid(N, box, per_axis)]
    for s in extra_scales:
        if 0 < s < box:
            seeds.append(_seed_grid(N, s, per_axis))
    x = np.concatenate(seeds)
    live = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(live)
        if not len(idx):
            break
        g = F.grad(x[idx])
        done = np.linalg.norm(g, axis=1) <= NEWTON_TOL
        H = F.hess(x[idx])
        step = np.zeros_like(g)
        ok = np.abs(np.linalg.det(H)) > 1e-300
        if np.any(ok):
            step[ok] = np.linalg.solve(H[ok], g[ok][:, :, None])[:, :, 0]
        x[idx] -= np.where(done[:, None], 0.0, step)
        stalled = ~ok & ~done
        outside = np.any(np.abs(x[idx]) > box * 1.5, axis=1)
        live[idx[stalled | outside]] = False
        live[idx[done]] = False
        if np.all(done | stalled | outside):
            break
    # a few extra Newton steps take converged points from 1e-10 to roundoff
    fin = np.all(np.isfinite(x), axis=1)
    for _ in range(3):
        H = F.hess(x[fin])
        ok = np.abs(np.linalg.det(H)) > 1e-300
        idx = np.flatnonzero(fin)[ok]
        if len(idx):
            x[idx] -= np.linalg.solve(H[ok], F.grad(x[idx])[:, :, None])[:, :, 0]
    g = F.grad(x)
    res = np.linalg.norm(g, axis=1)
    inside = np.all(np.abs(x) <= box, axis=1)
    good = (res <= NEWTON_TOL) & inside & np.all(np.isfinite(x), axis=1)
    dropped = int(np.count_nonzero((res > NEWTON_TOL) | ~np.all(np.isfinite(x), axis=1)))
    if dropped:
        log.debug("critical_set: %d seeds did not converge", dropped)
    pts, rs = [], []
    for xi, ri in zip(x[good], res[good]):
        if all(np.linalg.norm(xi - p) > DEDUP_RADIUS for p in pts):
            pts.append(xi)
            rs.append(ri)
    order = np.argsort([np.linalg.norm(p) for p in pts]) if pts else []
    pts = np.array([pts[i] for i in order]).reshape(-1, N)
    rs = np.array([rs[i] for i in order])
    return CriticalSearch(pts, rs, dropped)


# --------------------------------------------------------------------------
# deformation certificate
# --------------------------------------------------------------------------


def cubic_constant(F: FoldMap, box: float = 0.5, per_axis: int = 17) -> float:
    """Measured ``sup |P| / |x|^3`` over a grid in the cube (origin excluded)."""
    x = _seed_grid(F.fiber_dim, box, per_axis)
    r = np.linalg.norm(x, axis=1)
    keep = r > 0
    if not F.perturbation:
        return 0.0
    return float(np.max(np.abs(F.perturbation_value(x[keep])) / r[keep] ** 3))


def declared_cubic_constant(F: FoldMap, box: float = 0.5) -> float | None:
    """``sum |coefficient| R^(deg-3)`` with ``R`` the cube's corner radius, or None below degree 3.

    Each monomial satisfies ``|x^e| <= |x|^deg``, so this bounds ``|P| / |x|^3``
    on the cube whenever every degree is at least 3.
    """
    R = box * math.sqrt(F.fiber_dim)
    if any(m.degree < 3 for m in F.perturbation):
        return None
    return float(sum(abs(m.coefficient) * R ** (m.degree - 3) for m in F.perturbation))


def gradient_constant(F: FoldMap, box: float = 0.5, per_axis: int = 17) -> float:
    """Measured ``sup |grad P| / |x|^2``."""
    x = _seed_grid(F.fiber_dim, box, per_axis)
    r = np.linalg.norm(x, axis=1)
    keep = r > 0
    if not F.perturbation:
        return 0.0
    _, dP, _ = F._p(x[keep])
    return float(np.max(np.linalg.norm(dP, axis=1) / r[keep] ** 2))


def correction_gradient_constant(F: FoldMap, alpha: float, t: float, box: float = 0.5,
                                 per_axis: int = 17) -> float:
    """Measured ``sup |grad((1 - t phi) P)| / |x|^2`` for the deformed correction."""
    Ft = deform(F, alpha, t)
    x = _seed_grid(F.fiber_dim, box, per_axis)
    r = np.linalg.norm(x, axis=1)
    keep = r > 0
    x = x[keep]
    g = Ft.grad(x) - Ft.standard.grad(x)
    return float(np.max(np.linalg.norm(g, axis=1) / r[keep] ** 2))


@dataclass
class DeformationResult:
    alpha: float
    box: float
    t_samples: tuple
    critical_sets: list
    flags: dict
    cubic_constant: float = math.nan
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags[k] for k in
                   ("critical_set_preserved", "outside_unchanged", "standard_near_fold", "hessian_match"))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "box": self.box,
            "t_samples": list(self.t_samples),
            "critical_sets": [
                {"t": t, "points": [[float(v) for v in p] for p in cs.points],
                 "residuals": [float(v) for v in cs.residuals], "dropped": cs.dropped}
                for t, cs in zip(self.t_samples, self.critical_sets)
            ],
            "flags": self.flags,
            "passed": self.passed,
            "cubic_constant": self.cubic_constant,
            "detail": self.detail,
        }


def _ball_samples(rng: np.random.Generator, N: int, box: float, count: int) -> np.ndarray:
    return rng.uniform(-box, box, size=(count, N))


def verify_deformation(F: FoldMap, alpha: float, t_grid=DEFAULT_T_GRID, box: float = 0.5,
                       per_axis: int = 9, samples: int = 2000, seed: int = 42,
                       threads: int | None = None) -> DeformationResult:
    """Evaluate the four deformation properties for ``F`` at cutoff radius ``alpha``."""
    if not 0 < alpha <= box:
        raise DomainError("alpha must lie in (0, box]")
    N = F.fiber_dim
    scales = sorted({min(3.0 * alpha, box / 2), 1.5 * alpha, 0.75 * alpha})
    deformed = [deform(F, alpha, float(t)) for t in t_grid]
    crit = ordered_map(lambda Ft: critical_set(Ft, box, per_axis, scales), deformed, threads)
    preserved = all(cs.is_origin_only() for cs in crit)

    rng = np.random.default_rng(seed)
    x = _ball_samples(rng, N, box, samples)
    r = np.linalg.norm(x, axis=1)
    far, near = x[r > 2 * alpha], x[r < alpha]
    extra = rng.standard_normal((samples // 4, N))
    extra *= (alpha * rng.uniform(0, 1, len(extra)) / np.linalg.norm(extra, axis=1))[:, None]
    near = np.concatenate([near, extra])

    outside = all(
        np.array_equal(Ft.value(far), F.value(far)) and np.array_equal(Ft.grad(far), F.grad(far))
        for Ft in deformed
    )
    F1 = deform(F, alpha, 1.0)
    std = F.standard
    standard = bool(np.array_equal(F1.value(near), std.value(near))
                    and np.array_equal(F1.grad(near), std.grad(near))
                    and np.array_equal(F1.hess(near), std.hess(near)))
    target = np.diag(2.0 * F.signs)
    origin = np.zeros((1, N))
    hess_ok = all(np.array_equal(Ft.hess(origin)[0], target) for Ft in deformed)
    C = cubic_constant(F, box)
    declared = declared_cubic_constant(F, box)
    flags = {
        "critical_set_preserved": bool(preserved),
        "outside_unchanged": bool(outside),
        "standard_near_fold": standard,
        "hessian_match": bool(hess_ok),
        "cubic_bound": bool(F.declared_cubic and declared is not None and C <= CUBIC_SLACK * declared),
    }
    detail = {"far_samples": int(len(far)), "near_samples": int(len(near)),
              "critical_counts": [len(cs) for cs in crit],
              "declared_cubic_constant": declared}
    return DeformationResult(float(alpha), float(box), tuple(float(t) for t in t_grid), crit, flags, C, detail)


def alpha_bound(F: FoldMap, box: float = 0.5, max_halvings: int = 20, **kw) -> tuple:
    """Largest ``alpha`` in ``box/2, box/4, ...`` certified by ``verify_deformation``.

    Returns ``(alpha, result)``.
    """
    last = None
    for j in range(1, max_halvings + 1):
        alpha = box / 2**j
        res = verify_deformation(F, alpha, box=box, **kw)
        if res.passed:
            return alpha, res
        last = res
        # a Hessian mismatch is independent of alpha: no point descending further
        if not res.flags["hessian_match"]:
            break
    failed = sorted(k for k, v in last.flags.items() if not v) if last else []
    raise NoValidAlpha(f"no alpha in the dyadic descent from {box / 2:g} certifies (failing: {failed})")


# --------------------------------------------------------------------------
# compatible backgrounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MorsePair:
    fold: FoldMap
    background: np.ndarray

    def to_dict(self) -> dict:
        return {"fold": self.fold.to_dict(), "background": np.asarray(self.background).tolist()}


def canonical_background(F: FoldMap) -> np.ndarray:
    """``m = 2 I`` in Morse coordinates, the metric matching the fold's Hessian."""
    return 2.0 * np.eye(F.fiber_dim)


def compat_check(pair: MorsePair, rtol: float = 1e-12) -> bool:
    """``m`` splits the Hessian's eigenspaces orthogonally and equals ``+-d^2f`` on them."""
    m = np.asarray(pair.background, dtype=float)
    N = pair.fold.fiber_dim
    if m.shape != (N, N) or not np.allclose(m, m.T, rtol=0, atol=rtol * np.max(np.abs(m))):
        return False
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    H = pair.fold.hess(np.zeros((1, N)))[0]
    w, V = np.linalg.eigh(H)
    neg, pos = V[:, w < 0], V[:, w > 0]
    if neg.shape[1] + pos.shape[1] != N:
        return False
    scale = max(1.0, float(np.max(np.abs(m))))
    tol = rtol * scale * 10
    if np.max(np.abs(neg.T @ m @ pos), initial=0.0) > tol:
        return False
    if np.max(np.abs(pos.T @ (H - m) @ pos), initial=0.0) > tol:
        return False
    if np.max(np.abs(neg.T @ (H + m) @ neg), initial=0.0) > tol:
        return False
    return True


__all__ = [
    "CriticalSearch",
    "DeformationResult",
    "FoldMap",
    "Monomial",
    "MorsePair",
    "alpha_bound",
    "canonical_background",
    "compat_check",
    "correction_gradient_constant",
    "critical_set",
    "cubic_constant",
    "declared_cubic_constant",
    "deform",
    "gradient_constant",
    "load_fold",
    "perturbed_fold",
    "standard_fold",
    "verify_deformation",
]
