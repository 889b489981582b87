"""Piecewise-analytic radial profiles and cutoff functions.

A :class:`SmoothProfile` is an ordered list of pieces covering ``[0, L]``.
Each piece is a finite sum of analytic terms (sine, constant, polynomial in a
local coordinate), so evaluation on the analytic parts is exact rather than
interpolated.  Linear combinations of profiles with different node layouts
stay exact: the result lives on the union of breakpoints and each piece simply
carries the scaled terms of both inputs.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, IncompatibleProfilesError

ArrayLike = Union[float, np.ndarray]

JUNCTION_RTOL = 1e-10
_LAYOUT_ATOL = 1e-12


# --------------------------------------------------------------------------
# analytic terms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SineTerm:
    """``amplitude * sin(omega * t + phase)``."""

    amplitude: float
    omega: float
    phase: float = 0.0

    kind = "sine"

    def eval(self, t: ArrayLike, order: int) -> ArrayLike:
        arg = self.omega * t + self.phase
        if order == 0:
            return self.amplitude * np.sin(arg)
        if order == 1:
            return self.amplitude * self.omega * np.cos(arg)
        if order == 2:
            return -self.amplitude * self.omega * self.omega * np.sin(arg)
        raise DomainError(f"derivative order {order} not supported")

    def scaled(self, w: float) -> "SineTerm":
        return SineTerm(self.amplitude * w, self.omega, self.phase)

    def shifted(self, dt: float) -> "SineTerm":
        # f(t - dt)
        return SineTerm(self.amplitude, self.omega, self.phase - self.omega * dt)

    def reflected(self, length: float) -> "SineTerm":
        # f(length - t)
        return SineTerm(self.amplitude, -self.omega, self.omega * length + self.phase)

    @property
    def unit_speed(self) -> bool:
        return abs(abs(self.amplitude * self.omega) - 1.0) <= 1e-14

    def params(self) -> dict:
        return {"amplitude": self.amplitude, "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class ConstTerm:
    value: float

    kind = "constant"

    def eval(self, t: ArrayLike, order: int) -> ArrayLike:
        if order not in (0, 1, 2):
            raise DomainError(f"derivative order {order} not supported")
        v = self.value if order == 0 else 0.0
        if np.ndim(t):
            return np.full(np.shape(t), v)
        return v

    def scaled(self, w: float) -> "ConstTerm":
        return ConstTerm(self.value * w)

    def shifted(self, dt: float) -> "ConstTerm":
        return self

    def reflected(self, length: float) -> "ConstTerm":
        return self

    def params(self) -> dict:
        return {"value": self.value}


@dataclass(frozen=True)
class PolyTerm:
    """``sum_i c_i u**i`` with local coordinate ``u = (t - origin) / scale``."""

    coefficients: tuple
    origin: float
    scale: float = 1.0

    kind = "poly"

    def eval(self, t: ArrayLike, order: int) -> ArrayLike:
        if order not in (0, 1, 2):
            raise DomainError(f"derivative order {order} not supported")
        c = np.asarray(self.coefficients, dtype=float)
        for _ in range(order):
            c = c[1:] * np.arange(1, len(c))
        u = (np.asarray(t, dtype=float) - self.origin) / self.scale
        acc = np.zeros_like(u)
        for coef in c[::-1]:
            acc = acc * u + coef
        out = acc / self.scale**order
        return out if np.ndim(out) else float(out)

    def scaled(self, w: float) -> "PolyTerm":
        return PolyTerm(tuple(c * w for c in self.coefficients), self.origin, self.scale)

    def shifted(self, dt: float) -> "PolyTerm":
        return PolyTerm(self.coefficients, self.origin + dt, self.scale)

    def reflected(self, length: float) -> "PolyTerm":
        return PolyTerm(self.coefficients, length - self.origin, -self.scale)

    def params(self) -> dict:
        return {"coefficients": list(self.coefficients), "origin": self.origin, "scale": self.scale}


Term = Union[SineTerm, ConstTerm, PolyTerm]
_TERM_TYPES = {"sine": SineTerm, "constant": ConstTerm, "poly": PolyTerm}


def _term_from_dict(kind: str, params: dict) -> Term:
    if kind == "poly":
        return PolyTerm(tuple(params["coefficients"]), params["origin"], params.get("scale", 1.0))
    return _TERM_TYPES[kind](**params)


@dataclass(frozen=True)
class Piece:
    t0: float
    t1: float
    terms: tuple

    @property
    def kind(self) -> str:
        if len(self.terms) == 1:
            return self.terms[0].kind
        return "sum"

    def eval(self, t: ArrayLike, order: int) -> ArrayLike:
        acc = self.terms[0].eval(t, order)
        for term in self.terms[1:]:
            acc = acc + term.eval(t, order)
        return acc

    def gap(self, t: ArrayLike) -> ArrayLike:
        """``1 - rho'(t)**2`` without cancellation on unit-speed sine pieces."""
        if len(self.terms) == 1 and isinstance(self.terms[0], SineTerm) and self.terms[0].unit_speed:
            s = self.terms[0]
            k2 = (s.amplitude * s.omega) ** 2
            return (1.0 - k2) + k2 * np.sin(s.omega * t + s.phase) ** 2
        d = self.eval(t, 1)
        return 1.0 - d * d

    def to_dict(self) -> dict:
        if len(self.terms) == 1:
            term = self.terms[0]
            return {"t0": self.t0, "t1": self.t1, "kind": term.kind, "params": term.params()}
        return {
            "t0": self.t0,
            "t1": self.t1,
            "kind": "sum",
            "params": {"terms": [{"kind": x.kind, "params": x.params()} for x in self.terms]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Piece":
        if d["kind"] == "sum":
            terms = tuple(_term_from_dict(x["kind"], x["params"]) for x in d["params"]["terms"])
        else:
            terms = (_term_from_dict(d["kind"], d["params"]),)
        return cls(float(d["t0"]), float(d["t1"]), terms)


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothProfile:
    """Radial function ``rho`` on ``[0, domain_length]``.

    ``closure`` is ``"disk"`` when ``rho(0) = 0`` and ``rho'(0) = 1`` (the
    profile closes up a sphere factor at the origin) and ``"cylinder"`` when
    ``rho(0) > 0``.  ``end_closure`` plays the same role at ``t = L``, where a
    disk closure means ``rho(L) = 0`` and ``rho'(L) = -1``.
    """

    domain_length: float
    pieces: tuple
    closure: str = "cylinder"
    end_closure: str = "open"
    _breaks: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.pieces:
            raise DomainError("profile needs at least one piece")
        if self.domain_length <= 0:
            raise DomainError("domain_length must be positive")
        if self.closure not in ("disk", "cylinder"):
            raise DomainError(f"unknown closure {self.closure!r}")
        if self.end_closure not in ("disk", "open"):
            raise DomainError(f"unknown end closure {self.end_closure!r}")
        if abs(self.pieces[0].t0) > _LAYOUT_ATOL or abs(self.pieces[-1].t1 - self.domain_length) > _LAYOUT_ATOL * max(1.0, self.domain_length):
            raise DomainError("pieces must cover [0, domain_length]")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if abs(a.t1 - b.t0) > _LAYOUT_ATOL * max(1.0, self.domain_length):
                raise DomainError("pieces must be contiguous")
            if a.t1 <= a.t0:
                raise DomainError("empty piece")
        object.__setattr__(self, "_breaks", tuple(p.t0 for p in self.pieces[1:]))

    # -- evaluation --------------------------------------------------------

    @property
    def breakpoints(self) -> tuple:
        return self._breaks

    def _check(self, t: np.ndarray) -> None:
        tol = 1e-12 * max(1.0, self.domain_length)
        if np.any(t < -tol) or np.any(t > self.domain_length + tol):
            raise DomainError(f"t outside [0, {self.domain_length}]")

    def _dispatch(self, t: ArrayLike, fn) -> ArrayLike:
        if np.ndim(t) == 0:
            tf = float(t)
            self._check(np.asarray(tf))
            idx = bisect.bisect_right(self._breaks, tf)
            return float(fn(self.pieces[idx], tf))
        ta = np.asarray(t, dtype=float)
        self._check(ta)
        idx = np.searchsorted(np.asarray(self._breaks), ta, side="right")
        out = np.empty_like(ta)
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = fn(self.pieces[i], ta[mask])
        return out

    def eval(self, t: ArrayLike, order: int = 0) -> ArrayLike:
        """Value (order 0), first or second derivative at ``t``."""
        if order not in (0, 1, 2):
            raise DomainError(f"derivative order {order} not supported")
        return self._dispatch(t, lambda piece, x: piece.eval(x, order))

    __call__ = eval

    def gap(self, t: ArrayLike) -> ArrayLike:
        """``1 - rho'(t)**2``, computed stably on unit-speed sine pieces."""
        return self._dispatch(t, lambda piece, x: piece.gap(x))

    def piece_index(self, t: ArrayLike) -> np.ndarray:
        return np.searchsorted(np.asarray(self._breaks), np.asarray(t, dtype=float), side="right")

    # -- structure ----------------------------------------------------------

    @property
    def sine_amplitude(self) -> float | None:
        """Amplitude ``delta`` of a leading ``delta*sin(t/delta)`` piece, if any."""
        first = self.pieces[0]
        if len(first.terms) == 1 and isinstance(first.terms[0], SineTerm):
            s = first.terms[0]
            if s.phase == 0.0 and s.unit_speed:
                return s.amplitude
        return None

    def junction_mismatch(self) -> list:
        """Jump in value, first and second derivative at every interior node."""
        out = []
        for left, right in zip(self.pieces, self.pieces[1:]):
            x = right.t0
            row = {"t": x}
            for order in (0, 1, 2):
                lv, rv = float(left.eval(x, order)), float(right.eval(x, order))
                scale = max(1.0, abs(lv), abs(rv))
                row[f"d{order}"] = abs(lv - rv) / scale
            out.append(row)
        return out

    def is_c2(self, rtol: float = JUNCTION_RTOL) -> bool:
        return all(max(r["d0"], r["d1"], r["d2"]) <= rtol for r in self.junction_mismatch())

    def reflected(self) -> "SmoothProfile":
        """Profile ``t -> rho(L - t)``; swaps the start and end closures."""
        L = self.domain_length
        pieces = tuple(
            Piece(L - p.t1, L - p.t0, tuple(term.reflected(L) for term in p.terms))
            for p in reversed(self.pieces)
        )
        pieces = _snap(pieces, L)
        return SmoothProfile(
            L,
            pieces,
            closure="disk" if self.end_closure == "disk" else "cylinder",
            end_closure="disk" if self.closure == "disk" else "open",
        )

    def restricted(self, length: float) -> "SmoothProfile":
        """Truncate or extend the final piece so the domain becomes ``[0, length]``."""
        if length <= 0:
            raise DomainError("length must be positive")
        kept = []
        for p in self.pieces:
            if p.t0 >= length:
                break
            kept.append(p)
        last = kept[-1]
        kept[-1] = Piece(last.t0, length, last.terms)
        end = self.end_closure if abs(length - self.domain_length) <= _LAYOUT_ATOL else "open"
        return SmoothProfile(length, tuple(kept), self.closure, end)

    def shifted_concat(self, other: "SmoothProfile") -> "SmoothProfile":
        """Concatenate ``other`` after this profile (``other`` shifted by ``L``)."""
        L = self.domain_length
        moved = tuple(
            Piece(p.t0 + L, p.t1 + L, tuple(term.shifted(L) for term in p.terms)) for p in other.pieces
        )
        total = L + other.domain_length
        return SmoothProfile(total, _snap(self.pieces + moved, total), self.closure, other.end_closure)

    def to_dict(self) -> dict:
        return {
            "domain_length": self.domain_length,
            "closure": self.closure,
            "end_closure": self.end_closure,
            "pieces": [p.to_dict() for p in self.pieces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothProfile":
        return cls(
            float(d["domain_length"]),
            tuple(Piece.from_dict(p) for p in d["pieces"]),
            d.get("closure", "cylinder"),
            d.get("end_closure", "open"),
        )


def _snap(pieces: Sequence[Piece], length: float) -> tuple:
    """Make piece boundaries exactly contiguous after arithmetic on nodes."""
    out = []
    prev = 0.0
    for i, p in enumerate(pieces):
        t1 = length if i == len(pieces) - 1 else p.t1
        out.append(Piece(prev, t1, p.terms))
        prev = t1
    return tuple(out)


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------


def sine_profile(delta: float, length: float | None = None) -> SmoothProfile:
    """``delta * sin(t / delta)`` on ``[0, length]`` (default: up to ``delta*pi``)."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    L = delta * math.pi if length is None else length
    end = "disk" if abs(L - delta * math.pi) <= _LAYOUT_ATOL else "open"
    return SmoothProfile(L, (Piece(0.0, L, (SineTerm(delta, 1.0 / delta),)),), "disk", end)


def cosine_profile(radius: float, length: float | None = None) -> SmoothProfile:
    """``radius * cos(t / radius)`` on ``[0, length]`` (default: up to ``radius*pi/2``)."""
    if radius <= 0:
        raise DomainError("radius must be positive")
    L = radius * math.pi / 2 if length is None else length
    end = "disk" if abs(L - radius * math.pi / 2) <= _LAYOUT_ATOL else "open"
    return SmoothProfile(L, (Piece(0.0, L, (SineTerm(radius, 1.0 / radius, math.pi / 2),)),), "cylinder", end)


def constant_profile(value: float, length: float) -> SmoothProfile:
    if value <= 0:
        raise DomainError("constant profile must be positive")
    return SmoothProfile(length, (Piece(0.0, length, (ConstTerm(value),)),))


def quintic_hermite(t0: float, t1: float, start: Sequence[float], end: Sequence[float]) -> PolyTerm:
    """Quintic matching value, first and second derivative at both ends."""
    w = t1 - t0
    if w <= 0:
        raise DomainError("empty Hermite segment")
    y0, d0, s0 = start[0], start[1] * w, start[2] * w * w
    y1, d1, s1 = end[0], end[1] * w, end[2] * w * w
    dy = y1 - y0
    coeffs = (
        y0,
        d0,
        0.5 * s0,
        10 * dy - 6 * d0 - 4 * d1 - 1.5 * s0 + 0.5 * s1,
        -15 * dy + 8 * d0 + 7 * d1 + 1.5 * s0 - s1,
        6 * dy - 3 * d0 - 3 * d1 - 0.5 * s0 + 0.5 * s1,
    )
    return PolyTerm(tuple(float(c) for c in coeffs), t0, w)


def hermite_spline(
    knots: Sequence[float],
    values: Sequence[float],
    slopes: Sequence[float],
    curvatures: Sequence[float],
    closure: str = "cylinder",
) -> SmoothProfile:
    """C^2 piecewise-quintic profile through the given jets."""
    knots = [float(k) for k in knots]
    if knots[0] != 0.0:
        raise DomainError("spline knots must start at 0")
    pieces = []
    for i in range(len(knots) - 1):
        term = quintic_hermite(
            knots[i], knots[i + 1],
            (values[i], slopes[i], curvatures[i]),
            (values[i + 1], slopes[i + 1], curvatures[i + 1]),
        )
        pieces.append(Piece(knots[i], knots[i + 1], (term,)))
    return SmoothProfile(knots[-1], tuple(pieces), closure)


def _merge_terms(terms: Sequence) -> tuple:
    """Collect like terms so that, e.g., a blend of two equal-radius sine caps
    is again a single sine term (the disk-closure limit relies on that)."""
    sines: dict = {}
    polys: dict = {}
    const = 0.0
    for term in terms:
        if isinstance(term, ConstTerm):
            const += term.value
        elif isinstance(term, SineTerm):
            key = (term.omega, term.phase)
            sines[key] = sines.get(key, 0.0) + term.amplitude
        else:
            key = (term.origin, term.scale)
            old = polys.get(key, ())
            n = max(len(old), len(term.coefficients))
            pad = lambda c: tuple(c) + (0.0,) * (n - len(c))
            polys[key] = tuple(x + y for x, y in zip(pad(old), pad(term.coefficients)))
    out: list = [SineTerm(amp, om, ph) for (om, ph), amp in sines.items() if amp != 0.0]
    out += [PolyTerm(c, o, sc) for (o, sc), c in polys.items() if any(c)]
    if const != 0.0 or not out:
        out.append(ConstTerm(const))
    return tuple(out)


def combine(profiles: Sequence[SmoothProfile], weights: Sequence[float]) -> SmoothProfile:
    """Exact pointwise linear combination on the common refinement of nodes.

    All inputs must share the domain length; closure flags of the result are
    taken from the first profile (callers combining mixed closures are
    responsible for their meaning).
    """
    if len(profiles) != len(weights) or not profiles:
        raise IncompatibleProfilesError("need one weight per profile")
    L = profiles[0].domain_length
    for p in profiles[1:]:
        if abs(p.domain_length - L) > _LAYOUT_ATOL * max(1.0, L):
            raise IncompatibleProfilesError("domain lengths differ")
    nodes = sorted({0.0, L, *(b for p in profiles for b in p.breakpoints)})
    merged = [nodes[0]]
    for x in nodes[1:]:
        if x - merged[-1] > _LAYOUT_ATOL * max(1.0, L):
            merged.append(x)
    merged[-1] = L
    pieces = []
    for a, b in zip(merged, merged[1:]):
        mid = 0.5 * (a + b)
        scaled = []
        for prof, w in zip(profiles, weights):
            if w == 0.0:
                continue
            piece = prof.pieces[bisect.bisect_right(prof.breakpoints, mid)]
            scaled.extend(term.scaled(w) for term in piece.terms)
        pieces.append(Piece(a, b, _merge_terms(scaled)))
    return SmoothProfile(L, tuple(pieces), profiles[0].closure, profiles[0].end_closure)


def convex_combine(p1: SmoothProfile, p2: SmoothProfile, lam: float) -> SmoothProfile:
    """``lam * p1 + (1 - lam) * p2`` for profiles sharing radius and node layout."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    d1, d2 = p1.sine_amplitude, p2.sine_amplitude
    if d1 is None or d2 is None or d1 != d2:
        raise IncompatibleProfilesError(f"sine radii differ or are missing ({d1} vs {d2})")
    if abs(p1.domain_length - p2.domain_length) > _LAYOUT_ATOL:
        raise IncompatibleProfilesError("domain lengths differ")
    b1, b2 = p1.breakpoints, p2.breakpoints
    if len(b1) != len(b2) or any(abs(x - y) > _LAYOUT_ATOL for x, y in zip(b1, b2)):
        raise IncompatibleProfilesError("node layouts differ")
    if lam == 1.0:
        return p1
    if lam == 0.0:
        return p2
    return combine([p1, p2], [lam, 1.0 - lam])


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------


def smoothstep(u: ArrayLike, order: int = 0) -> ArrayLike:
    """Quintic smoothstep ``6u^5 - 15u^4 + 10u^3`` clamped to ``[0, 1]``."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    uc = np.clip(u, 0.0, 1.0)
    if order == 0:
        out = uc * uc * uc * (uc * (6.0 * uc - 15.0) + 10.0)
    elif order == 1:
        out = np.where(inside, 30.0 * uc * uc * (1.0 - uc) ** 2, 0.0)
    elif order == 2:
        out = np.where(inside, 60.0 * uc * (1.0 - uc) * (1.0 - 2.0 * uc), 0.0)
    else:
        raise DomainError(f"derivative order {order} not supported")
    return out if out.ndim else float(out)


SMOOTHSTEP_MAX_SLOPE = 1.875


@dataclass(frozen=True)
class Cutoff:
    """Nonincreasing ``phi`` with ``phi = 1`` below ``alpha`` and ``0`` above ``2 alpha``."""

    alpha: float

    def __call__(self, s: ArrayLike, order: int = 0) -> ArrayLike:
        return self.eval(s, order)

    def eval(self, s: ArrayLike, order: int = 0) -> ArrayLike:
        u = (np.asarray(s, dtype=float) - self.alpha) / self.alpha
        if order == 0:
            out = 1.0 - smoothstep(u, 0)
        else:
            out = -smoothstep(u, order) / self.alpha**order
        return out

    @property
    def slope_bound(self) -> float:
        """Exact ``sup |phi'|``."""
        return SMOOTHSTEP_MAX_SLOPE / self.alpha


def make_cutoff(alpha: float) -> Cutoff:
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    return Cutoff(float(alpha))


__all__ = [
    "ArrayLike",
    "ConstTerm",
    "Cutoff",
    "Piece",
    "PolyTerm",
    "SineTerm",
    "SmoothProfile",
    "combine",
    "constant_profile",
    "convex_combine",
    "cosine_profile",
    "hermite_spline",
    "make_cutoff",
    "quintic_hermite",
    "sine_profile",
    "smoothstep",
]
