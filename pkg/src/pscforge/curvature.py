"""Scalar curvature: closed forms for warped ansatze and a finite-difference oracle.

Closed forms used here (unit round sphere fibres, flat base):

* single warped ``dt^2 + rho^2 ds^2_{k-1}``::

      R = -2(k-1) rho''/rho + (k-1)(k-2)(1 - rho'^2)/rho^2

* multiply warped over a flat base ``B`` with fibres ``S^{d_i}`` and warping
  functions ``f_i``::

      R = sum_i [-2 d_i Lap f_i / f_i + d_i(d_i-1)(1 - |grad f_i|^2)/f_i^2]
          - sum_{i != j} d_i d_j <grad f_i, grad f_j>/(f_i f_j)

  The doubly warped metric ``dt^2 + a^2 ds_p^2 + b^2 ds_q^2`` is the case of
  a one-dimensional base.

The oracle never sees these formulas: it differentiates a metric tensor field
on a coordinate chart and contracts the Riemann tensor.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DegenerateMetricError, DomainError, SingularityError
from .parallel import chunked_eval, min_reduce
from .smoothfn import ArrayLike, SineTerm, SmoothProfile

POSITIVITY_TOL = 1e-12
MIN_GRID = 64
ANGLE_MARGIN = 0.3


# --------------------------------------------------------------------------
# metric descriptors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SingleWarpedMetric:
    """``dt^2 + rho(t)^2 ds^2_{k-1}`` in total dimension ``k``."""

    k: int
    profile: SmoothProfile

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")

    @property
    def dim(self) -> int:
        return self.k


@dataclass(frozen=True)
class DoublyWarpedMetric:
    """``dt^2 + a(t)^2 ds_p^2 + b(t)^2 ds_q^2`` in dimension ``p + q + 1``."""

    p: int
    q: int
    a: SmoothProfile
    b: SmoothProfile

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise DomainError("sphere dimensions must be >= 0")
        if abs(self.a.domain_length - self.b.domain_length) > 1e-12 * max(1.0, self.a.domain_length):
            raise DomainError("warping functions must share a domain")

    @property
    def dim(self) -> int:
        return self.p + self.q + 1

    @property
    def domain_length(self) -> float:
        return self.a.domain_length

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "a": self.a.to_dict(), "b": self.b.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DoublyWarpedMetric":
        return cls(int(d["p"]), int(d["q"]), SmoothProfile.from_dict(d["a"]), SmoothProfile.from_dict(d["b"]))


@dataclass(frozen=True)
class FlatFactor:
    """Flat interval ``[0, length]`` (the ``D^1`` factor of a handle with p = 0)."""

    length: float

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class ProductMetric:
    """Riemannian product of two radial factors, sampled on ``(t_a, t_b)``."""

    first: Union[SingleWarpedMetric, FlatFactor]
    second: Union[SingleWarpedMetric, FlatFactor]

    @property
    def dim(self) -> int:
        return self.first.dim + self.second.dim


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------


def _closure_limit(profile: SmoothProfile, k: int) -> float:
    """Scalar curvature at the centre of a disk closure: ``k(k-1) omega^2``."""
    term = profile.pieces[0].terms[0] if len(profile.pieces[0].terms) == 1 else None
    if not isinstance(term, SineTerm) or not term.unit_speed:
        raise SingularityError("disk closure without an analytic sine piece")
    return k * (k - 1) * term.omega * term.omega


def scalar_single_warped(m: SingleWarpedMetric, t: ArrayLike) -> ArrayLike:
    """Scalar curvature of ``dt^2 + rho^2 ds^2_{k-1}`` at radius ``t``."""
    k, prof = m.k, m.profile
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    rho = np.asarray(prof.eval(t_arr, 0))
    out = np.empty_like(t_arr)
    zero = rho == 0.0
    if np.any(zero):
        if prof.closure != "disk" or np.any(t_arr[zero] != 0.0):
            raise SingularityError("warping function vanishes away from a disk centre")
        out[zero] = _closure_limit(prof, k)
    live = ~zero
    if np.any(live):
        tt, r = t_arr[live], rho[live]
        if np.any(r < 0):
            raise SingularityError("negative warping function")
        rdd = np.asarray(prof.eval(tt, 2))
        gap = np.asarray(prof.gap(tt))
        out[live] = -2.0 * (k - 1) * rdd / r + (k - 1) * (k - 2) * gap / (r * r)
    return out if np.ndim(t) else float(out[0])


def warped_scalar(base_lap: Sequence[np.ndarray], grad: Sequence[Sequence[np.ndarray]],
                  values: Sequence[np.ndarray], dims: Sequence[int]) -> np.ndarray:
    """Multiply warped formula over a flat base.

    ``values[i]``, ``base_lap[i]`` and ``grad[i]`` (a list of partials) are
    the warping function ``f_i``, its Laplacian and gradient components.
    """
    total = 0.0
    n = len(values)
    for i in range(n):
        d, f = dims[i], values[i]
        if d == 0:
            continue
        g2 = sum(c * c for c in grad[i])
        total = total - 2.0 * d * base_lap[i] / f + d * (d - 1) * (1.0 - g2) / (f * f)
    for i in range(n):
        for j in range(n):
            if i == j or dims[i] == 0 or dims[j] == 0:
                continue
            dot = sum(ci * cj for ci, cj in zip(grad[i], grad[j]))
            total = total - dims[i] * dims[j] * dot / (values[i] * values[j])
    return np.asarray(total, dtype=float)


def scalar_doubly_warped(m: DoublyWarpedMetric, t: ArrayLike) -> ArrayLike:
    """Scalar curvature of ``dt^2 + a^2 ds_p^2 + b^2 ds_q^2`` at interior ``t``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = np.asarray(m.a.eval(t_arr, 0)), np.asarray(m.b.eval(t_arr, 0))
    if (m.p and np.any(a <= 0)) or (m.q and np.any(b <= 0)):
        raise SingularityError("doubly warped metric evaluated where a warping function vanishes")
    p, q = m.p, m.q
    out = np.zeros_like(t_arr)
    if p:
        out += -2.0 * p * np.asarray(m.a.eval(t_arr, 2)) / a + p * (p - 1) * np.asarray(m.a.gap(t_arr)) / (a * a)
    if q:
        out += -2.0 * q * np.asarray(m.b.eval(t_arr, 2)) / b + q * (q - 1) * np.asarray(m.b.gap(t_arr)) / (b * b)
    if p and q:
        out -= 2.0 * p * q * np.asarray(m.a.eval(t_arr, 1)) * np.asarray(m.b.eval(t_arr, 1)) / (a * b)
    return out if np.ndim(t) else float(out[0])


def scalar_product(r1: ArrayLike, r2: ArrayLike) -> ArrayLike:
    """Scalar curvature of a Riemannian product is the sum of the factors'."""
    return r1 + r2


def factor_scalar(factor: Union[SingleWarpedMetric, FlatFactor], t: np.ndarray) -> np.ndarray:
    if isinstance(factor, FlatFactor):
        return np.zeros_like(np.asarray(t, dtype=float))
    return np.asarray(scalar_single_warped(factor, t))


def factor_length(factor: Union[SingleWarpedMetric, FlatFactor]) -> float:
    if isinstance(factor, FlatFactor):
        return factor.length
    return factor.profile.domain_length


def scalar_product_metric(m: ProductMetric, ta: ArrayLike, tb: ArrayLike) -> ArrayLike:
    return scalar_product(factor_scalar(m.first, np.asarray(ta)), factor_scalar(m.second, np.asarray(tb)))


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartMetricField:
    """Metric tensor field ``g_ij(x)`` on the coordinate box ``[lo, hi]``."""

    dim: int
    lo: tuple
    hi: tuple
    g: Callable[[np.ndarray], np.ndarray]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))


def _stencil_metric(chart: ChartMetricField, x: np.ndarray) -> np.ndarray:
    g = np.asarray(chart.g(x), dtype=float)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetricError(f"metric not positive-definite at {x}") from exc
    return g


def oracle_scalar(chart: ChartMetricField, x: Sequence[float], h: float | None = None) -> float:
    """Scalar curvature from central differences of the metric components.

    Uses ``R_iklm = 1/2 (g_im,kl + g_kl,im - g_il,km - g_km,il)
    + g_np (G^n_kl G^p_im - G^n_km G^p_il)`` and ``R = g^il g^km R_iklm``.
    Truncation error is O(h^2).
    """
    x = np.asarray(x, dtype=float)
    d = chart.dim
    if h is None:
        h = 1e-3 * chart.diameter
    lo, hi = np.asarray(chart.lo, float), np.asarray(chart.hi, float)
    if np.any(x - lo < 2 * h) or np.any(hi - x < 2 * h):
        raise DomainError("oracle point closer than 2h to the chart boundary")
    eye = np.eye(d) * h
    g0 = _stencil_metric(chart, x)
    plus = [_stencil_metric(chart, x + eye[k]) for k in range(d)]
    minus = [_stencil_metric(chart, x - eye[k]) for k in range(d)]
    dg = np.array([(plus[k] - minus[k]) / (2 * h) for k in range(d)])
    ddg = np.empty((d, d, d, d))
    for k in range(d):
        ddg[k, k] = (plus[k] - 2.0 * g0 + minus[k]) / (h * h)
        for l in range(k + 1, d):
            pp = _stencil_metric(chart, x + eye[k] + eye[l])
            pm = _stencil_metric(chart, x + eye[k] - eye[l])
            mp = _stencil_metric(chart, x - eye[k] + eye[l])
            mm = _stencil_metric(chart, x - eye[k] - eye[l])
            ddg[k, l] = ddg[l, k] = (pp - pm - mp + mm) / (4 * h * h)
    ginv = np.linalg.inv(g0)
    # first kind: gam_low[k, i, j] = 1/2 (g_jk,i + g_ik,j - g_ij,k)
    gam_low = 0.5 * (
        np.einsum("ijk->kij", dg) + np.einsum("jik->kij", dg) - dg
    )
    gam = np.einsum("mk,kij->mij", ginv, gam_low)
    riem = 0.5 * (
        np.einsum("klim->iklm", ddg)
        + np.einsum("imkl->iklm", ddg)
        - np.einsum("kmil->iklm", ddg)
        - np.einsum("ilkm->iklm", ddg)
    )
    riem += np.einsum("np,nkl,pim->iklm", g0, gam, gam) - np.einsum("np,nkm,pil->iklm", g0, gam, gam)
    return float(np.einsum("il,km,iklm->", ginv, ginv, riem))


def sphere_factor_diag(angles: np.ndarray) -> np.ndarray:
    """Diagonal of the unit round metric on ``S^m`` in hyperspherical angles."""
    m = len(angles)
    out = np.ones(m)
    s2 = np.sin(angles[:-1]) ** 2 if m > 1 else np.empty(0)
    out[1:] = np.cumprod(s2)
    return out


def multiply_warped_chart(base_dim: int, warps: Sequence[tuple], center: Sequence[float],
                          half_width: float | Sequence[float]) -> ChartMetricField:
    """Chart ``(base coords, u_1, ..., u_r)`` for a multiply warped metric.

    ``warps`` is a list of ``(f, m)``: ``f`` maps base coordinates to the
    warping factor of a unit ``S^m``.  The box is ``center +- half_width`` in
    the base.  Sphere directions use length coordinates
    ``u = f(center) (theta - pi/2)`` so the chart is roughly isotropic and a
    single finite-difference step suits every direction; the angles
    ``theta`` stay inside ``[0.3, pi - 0.3]``.
    """
    dims = [m for _, m in warps]
    d = base_dim + sum(dims)
    hw = np.broadcast_to(np.asarray(half_width, dtype=float), (base_dim,))
    c = np.asarray(center, dtype=float)
    lo, hi, scales = list(c - hw), list(c + hw), []
    for f, m in warps:
        if m == 0:
            scales.append(1.0)
            continue
        fc = abs(float(f(c))) or 1.0
        w = min(math.pi / 2 - ANGLE_MARGIN, float(np.mean(hw)) / fc)
        scales.append(fc)
        lo += [-w * fc] * m
        hi += [w * fc] * m
    lo, hi = tuple(lo), tuple(hi)

    def g(x: np.ndarray) -> np.ndarray:
        diag = [np.ones(base_dim)]
        pos = base_dim
        for (f, m), sc in zip(warps, scales):
            if m == 0:
                continue
            val = f(x[:base_dim]) / sc
            angles = math.pi / 2 + x[pos:pos + m] / sc
            diag.append(val * val * sphere_factor_diag(angles))
            pos += m
        return np.diag(np.concatenate(diag))

    return ChartMetricField(d, lo, hi, g)


def _local_half_width(values: Sequence[float]) -> float:
    positive = [abs(v) for v in values if v]
    return min([0.02] + [v / 32.0 for v in positive])


def single_warped_chart(m: SingleWarpedMetric, t: float, half_width: float | None = None) -> ChartMetricField:
    """Chart around radius ``t``; the default window is ``min(0.02, rho(t)/32)``.

    A narrow window keeps the default step ``1e-3 * diameter`` small next to
    the scale on which the profile's higher derivatives vary.
    """
    prof = m.profile
    if half_width is None:
        half_width = _local_half_width([prof.eval(t)])
    return multiply_warped_chart(1, [(lambda y: prof.eval(float(y[0]), 0), m.k - 1)], [t], half_width)


def doubly_warped_chart(m: DoublyWarpedMetric, t: float, half_width: float | None = None) -> ChartMetricField:
    if half_width is None:
        half_width = _local_half_width([m.a.eval(t) if m.p else 0.0, m.b.eval(t) if m.q else 0.0])
    return multiply_warped_chart(
        1,
        [(lambda y: m.a.eval(float(y[0]), 0), m.p), (lambda y: m.b.eval(float(y[0]), 0), m.q)],
        [t],
        half_width,
    )


def sphere_chart(n: int, radius: float = 1.0) -> ChartMetricField:
    """Round ``S^n`` of the given radius in hyperspherical angles."""
    lo = (ANGLE_MARGIN,) * n
    hi = (math.pi - ANGLE_MARGIN,) * n
    return ChartMetricField(n, lo, hi, lambda x: np.diag(radius * radius * sphere_factor_diag(x)))


def euclidean_chart(d: int, half_width: float = 1.0) -> ChartMetricField:
    return ChartMetricField(d, (-half_width,) * d, (half_width,) * d, lambda x: np.eye(d))


def product_chart(c1: ChartMetricField, c2: ChartMetricField) -> ChartMetricField:
    d1 = c1.dim

    def g(x: np.ndarray) -> np.ndarray:
        out = np.zeros((c1.dim + c2.dim,) * 2)
        out[:d1, :d1] = c1.g(x[:d1])
        out[d1:, d1:] = c2.g(x[d1:])
        return out

    return ChartMetricField(d1 + c2.dim, tuple(c1.lo) + tuple(c2.lo), tuple(c1.hi) + tuple(c2.hi), g)


def chart_midpoint(chart: ChartMetricField) -> np.ndarray:
    return 0.5 * (np.asarray(chart.lo) + np.asarray(chart.hi))


# --------------------------------------------------------------------------
# reports and scans
# --------------------------------------------------------------------------


@dataclass
class PscReport:
    """Minimum scalar curvature over a sample grid.

    ``samples`` holds the raw columns for CSV export; it is not part of the
    JSON document.
    """

    min_scalar: float
    argmin: tuple
    grid: dict
    nonpositive: int
    count: int
    regions: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def positive(self) -> bool:
        return self.nonpositive == 0 and self.min_scalar > POSITIVITY_TOL

    @property
    def degenerate(self) -> bool:
        return not self.positive

    def to_dict(self) -> dict:
        return {
            "min_scalar": self.min_scalar,
            "argmin": list(self.argmin),
            "grid": self.grid,
            "nonpositive": self.nonpositive,
            "count": self.count,
            "positive": self.positive,
            "regions": self.regions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = list(self.samples)
        if not cols:
            raise ValueError("report carries no samples")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(np.ravel(self.samples[c]) for c in cols)):
                w.writerow([repr(float(v)) for v in row])


def merge_reports(named: dict) -> PscReport:
    """Combine region reports into one (min over all, counts summed)."""
    best_name, best = None, None
    for name, rep in named.items():
        if best is None or rep.min_scalar < best.min_scalar:
            best_name, best = name, rep
    return PscReport(
        min_scalar=best.min_scalar,
        argmin=(best_name,) + tuple(best.argmin),
        grid={name: rep.grid for name, rep in named.items()},
        nonpositive=sum(r.nonpositive for r in named.values()),
        count=sum(r.count for r in named.values()),
        regions={name: r.min_scalar for name, r in named.items()},
    )


def report_from_values(values: np.ndarray, coords: Sequence[np.ndarray], grid: dict,
                       regions: dict | None = None, samples: dict | None = None) -> PscReport:
    flat = np.ravel(values)
    vmin, idx = min_reduce(flat)
    unr = np.unravel_index(idx, np.shape(values))
    argmin = tuple(float(c[i]) for c, i in zip(coords, unr))
    return PscReport(
        min_scalar=vmin,
        argmin=argmin,
        grid=grid,
        nonpositive=int(np.count_nonzero(flat <= POSITIVITY_TOL)),
        count=int(flat.size),
        regions=regions or {},
        samples=samples or {},
    )


def _piece_regions(profile: SmoothProfile, t: np.ndarray, r: np.ndarray, labels: dict | None) -> dict:
    idx = profile.piece_index(t)
    out = {}
    for i, piece in enumerate(profile.pieces):
        mask = idx == i
        if not np.any(mask):
            continue
        name = labels.get(i) if labels else None
        name = name or f"piece{i}:{piece.kind}"
        val = float(np.min(r[mask]))
        out[name] = min(val, out.get(name, val))
    return out


def min_scan(metric, grid: int = 512, threads: int | None = None, labels: dict | None = None) -> PscReport:
    """Grid minimum of scalar curvature for any supported metric descriptor."""
    if grid < MIN_GRID:
        raise DomainError(f"grid resolution must be >= {MIN_GRID}")
    if isinstance(metric, SingleWarpedMetric):
        prof = metric.profile
        L = prof.domain_length
        start = 0.0 if prof.closure == "disk" or prof.eval(0.0) > 0 else L / grid
        t = np.linspace(start, L, grid)
        if prof.end_closure == "disk":
            t = t[:-1]
        r = chunked_eval(lambda x: np.asarray(scalar_single_warped(metric, x)), t, threads)
        return report_from_values(
            r, [t], {"kind": "single", "k": metric.k, "n": int(len(t)), "t": [float(t[0]), float(t[-1])]},
            _piece_regions(prof, t, r, labels), {"t": t, "R": r},
        )
    if isinstance(metric, DoublyWarpedMetric):
        L = metric.domain_length
        t = L * np.arange(1, grid + 1) / (grid + 1)
        r = chunked_eval(lambda x: np.asarray(scalar_doubly_warped(metric, x)), t, threads)
        return report_from_values(
            r, [t], {"kind": "doubly", "p": metric.p, "q": metric.q, "n": grid, "open_interval": [0.0, L]},
            labels and _piece_regions(metric.b, t, r, labels) or {}, {"t": t, "R": r},
        )
    if isinstance(metric, ProductMetric):
        ta = _factor_grid(metric.first, grid)
        tb = _factor_grid(metric.second, grid)
        ra = chunked_eval(lambda x: factor_scalar(metric.first, x), ta, threads)
        rb = chunked_eval(lambda x: factor_scalar(metric.second, x), tb, threads)
        total = scalar_product(ra[:, None], rb[None, :])
        TA, TB = np.meshgrid(ta, tb, indexing="ij")
        return report_from_values(
            total, [ta, tb], {"kind": "product", "n": [len(ta), len(tb)]},
            {"first": float(ra.min()), "second": float(rb.min())},
            {"t_a": TA, "t_b": TB, "R": total},
        )
    raise TypeError(f"unsupported metric type {type(metric).__name__}")


def _factor_grid(factor, grid: int) -> np.ndarray:
    L = factor_length(factor)
    if isinstance(factor, SingleWarpedMetric) and factor.profile.end_closure == "disk":
        return np.linspace(0.0, L, grid + 1)[:-1]
    return np.linspace(0.0, L, grid)
