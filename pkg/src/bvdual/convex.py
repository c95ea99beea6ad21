"""Exact one-dimensional convex calculus on piecewise linear-quadratic functions.

A ``PLQConvexFn`` is a closed proper convex function on the real line given by
quadratic pieces ``a*x**2 + b*x + c`` (``a >= 0``) between breakpoints, and
``+inf`` outside a closed domain interval.  Conjugates, recession functions and
subdifferentials of such functions are computed exactly, piece by piece, which
is what makes them usable as ground truth in duality checks.

Multidimensional integrands are separable sums of one-dimensional pieces
(``SeparableConvexFn``); all calculus rules apply coordinatewise.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

# Construction-time consistency tolerance.  Generators build functions from
# derivative data, so seams agree to rounding error only.
_SEAM_TOL = 1e-9


class ImproperFunctionError(ValueError):
    """Raised when an input does not describe a closed proper convex function."""


def _piece_val(piece: tuple[float, float, float], x: float) -> float:
    a, b, c = piece
    return (a * x + b) * x + c


def _piece_slope(piece: tuple[float, float, float], x: float) -> float:
    a, b, _ = piece
    return 2.0 * a * x + b


@dataclass(frozen=True)
class PLQConvexFn:
    """Closed proper convex piecewise linear-quadratic function on the line.

    ``pieces[i]`` is the coefficient triple on the i-th interval of the domain
    ``[lo, hi]`` split at ``breakpoints``; there is always exactly one more
    piece than breakpoints.  Values at a breakpoint resolve to the min of the
    two adjacent pieces, which keeps the function closed under rounding.
    """

    breakpoints: tuple[float, ...]
    pieces: tuple[tuple[float, float, float], ...]
    lo: float = -INF
    hi: float = INF

    def __post_init__(self) -> None:
        if not (self.lo <= self.hi):
            raise ImproperFunctionError(f"empty domain [{self.lo}, {self.hi}]")
        if math.isinf(self.lo) and self.lo > 0 or math.isinf(self.hi) and self.hi < 0:
            raise ImproperFunctionError("domain endpoints reversed at infinity")
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ImproperFunctionError("need exactly len(breakpoints)+1 pieces")
        if self.lo == self.hi and not math.isfinite(self.lo):
            raise ImproperFunctionError("degenerate domain at infinity")
        for coeffs in self.pieces:
            a, b, c = coeffs
            if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(c)):
                raise ImproperFunctionError(f"non-finite piece coefficients {coeffs}")
            if a < 0.0:
                raise ImproperFunctionError(f"concave piece {coeffs}")
        edges = (self.lo, *self.breakpoints, self.hi)
        for u, w in zip(edges, edges[1:]):
            if not u < w and not (u == w == self.lo == self.hi):
                raise ImproperFunctionError("breakpoints must be strictly increasing inside the domain")
        # continuity and slope monotonicity across interior breakpoints
        for i, beta in enumerate(self.breakpoints):
            left, right = self.pieces[i], self.pieces[i + 1]
            vl, vr = _piece_val(left, beta), _piece_val(right, beta)
            scale = 1.0 + abs(vl) + abs(vr)
            if abs(vl - vr) > _SEAM_TOL * scale:
                raise ImproperFunctionError(f"discontinuous at breakpoint {beta}: {vl} vs {vr}")
            sl, sr = _piece_slope(left, beta), _piece_slope(right, beta)
            if sr < sl - _SEAM_TOL * (1.0 + abs(sl) + abs(sr)):
                raise ImproperFunctionError(f"slope decreases at breakpoint {beta}: {sl} -> {sr}")

    # -- evaluation ---------------------------------------------------------

    def _piece_index(self, x: float) -> int:
        # left piece when x sits exactly on a breakpoint
        return bisect_left(self.breakpoints, x)

    def value(self, x: float) -> float:
        """f(x); ``+inf`` outside the domain."""
        if x < self.lo or x > self.hi:
            return INF
        if self.lo == self.hi:
            return _piece_val(self.pieces[0], x)
        i = self._piece_index(x)
        v = _piece_val(self.pieces[i], x)
        if i < len(self.breakpoints) and self.breakpoints[i] == x:
            v = min(v, _piece_val(self.pieces[i + 1], x))
        return v

    __call__ = value

    def domain(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def edges(self) -> tuple[float, ...]:
        return (self.lo, *self.breakpoints, self.hi)

    def inf(self) -> tuple[float, float | None]:
        """Exact infimum and a minimizer (``None`` when the inf is -inf)."""
        best = INF
        arg: float | None = None
        edges = self.edges()
        for i, (a, b, _) in enumerate(self.pieces):
            left, right = edges[i], edges[i + 1]
            cands: list[float] = []
            if a > 0.0:
                v = -b / (2.0 * a)
                if left <= v <= right:
                    cands.append(v)
            if math.isfinite(left):
                cands.append(left)
            if math.isfinite(right):
                cands.append(right)
            if a == 0.0:
                if b > 0.0 and not math.isfinite(left):
                    return -INF, None
                if b < 0.0 and not math.isfinite(right):
                    return -INF, None
                if b == 0.0 and not cands:
                    cands.append(0.0)
            for x in cands:
                v = _piece_val(self.pieces[i], x)
                if v < best:
                    best, arg = v, x
        return best, arg

    def tilt(self, y: float) -> "PLQConvexFn":
        """The function x -> f(x) - y*x (still closed proper convex)."""
        return PLQConvexFn(
            self.breakpoints,
            tuple((a, b - y, c) for a, b, c in self.pieces),
            self.lo,
            self.hi,
        )

    def scale(self, w: float) -> "PLQConvexFn":
        """The function w*f for w > 0."""
        if w <= 0.0:
            raise ValueError("scale factor must be positive")
        return PLQConvexFn(
            self.breakpoints,
            tuple((w * a, w * b, w * c) for a, b, c in self.pieces),
            self.lo,
            self.hi,
        )


# -- constructors used throughout the test-bed and the gallery --------------


def quadratic(curv: float = 0.5, slope: float = 0.0, const: float = 0.0) -> PLQConvexFn:
    """curv*x**2 + slope*x + const on the whole line."""
    return PLQConvexFn((), ((curv, slope, const),))


def linear(slope: float, const: float = 0.0) -> PLQConvexFn:
    return PLQConvexFn((), ((0.0, slope, const),))


def absolute(weight: float = 1.0) -> PLQConvexFn:
    """weight*|x|."""
    return PLQConvexFn((0.0,), ((0.0, -weight, 0.0), (0.0, weight, 0.0)))


def indicator(lo: float, hi: float) -> PLQConvexFn:
    """0 on [lo, hi], +inf outside."""
    return PLQConvexFn((), ((0.0, 0.0, 0.0),), lo, hi)


def point_indicator(p: float, value: float = 0.0) -> PLQConvexFn:
    return PLQConvexFn((), ((0.0, 0.0, value),), p, p)


def huber(threshold: float = 1.0) -> PLQConvexFn:
    """Quadratic inside [-threshold, threshold], linear outside."""
    t = threshold
    return PLQConvexFn(
        (-t, t),
        ((0.0, -t, -t * t / 2.0), (0.5, 0.0, 0.0), (0.0, t, -t * t / 2.0)),
    )


# -- conjugate / recession / subdifferential ---------------------------------


def conjugate(f: PLQConvexFn) -> PLQConvexFn:
    """Exact convex conjugate f*(y) = sup_x (x*y - f(x)).

    The subdifferential graph of a piecewise linear-quadratic function is a
    monotone polyline; walking it left to right yields the conjugate piece by
    piece: quadratic pieces invert to quadratic pieces, kinks and finite
    domain endpoints become linear pieces, linear pieces become breakpoints.
    """
    if f.lo == f.hi:  # point indicator plus constant: conjugate is affine
        return PLQConvexFn((), ((0.0, f.lo, -f.value(f.lo)),))

    events: list[tuple[float, float, tuple[float, float, float]]] = []
    edges = f.edges()

    if math.isfinite(f.lo):
        s = _piece_slope(f.pieces[0], f.lo)
        events.append((-INF, s, (0.0, f.lo, -f.value(f.lo))))
    for i, (a, b, c) in enumerate(f.pieces):
        left, right = edges[i], edges[i + 1]
        if a > 0.0:
            s_left = _piece_slope(f.pieces[i], left) if math.isfinite(left) else -INF
            s_right = _piece_slope(f.pieces[i], right) if math.isfinite(right) else INF
            events.append((s_left, s_right, (1.0 / (4.0 * a), -b / (2.0 * a), b * b / (4.0 * a) - c)))
        if i + 1 < len(f.pieces):
            beta = edges[i + 1]
            s_left = _piece_slope(f.pieces[i], beta)
            s_right = _piece_slope(f.pieces[i + 1], beta)
            if s_right > s_left:
                events.append((s_left, s_right, (0.0, beta, -f.value(beta))))
    if math.isfinite(f.hi):
        s = _piece_slope(f.pieces[-1], f.hi)
        events.append((s, INF, (0.0, f.hi, -f.value(f.hi))))

    events = [e for e in events if e[0] < e[1]]
    if not events:
        # f is affine on an unbounded domain: conjugate is a point indicator
        _, b, c = f.pieces[0]
        return PLQConvexFn((), ((0.0, 0.0, -c),), b, b)

    lo_star, hi_star = events[0][0], events[-1][1]
    pieces: list[tuple[float, float, float]] = []
    bps: list[float] = []
    for k, (s_left, s_right, coeffs) in enumerate(events):
        if pieces and coeffs == pieces[-1]:
            continue  # merge identical adjacent pieces
        if k > 0:
            bps.append(s_left)
        pieces.append(coeffs)
    return PLQConvexFn(tuple(bps), tuple(pieces), lo_star, hi_star)


def recession(f: PLQConvexFn) -> PLQConvexFn:
    """Horizon function: the asymptotic slope profile of f.

    Computed directly from the outermost pieces (the limit of difference
    quotients), not through the conjugate, so the support-function identity
    with the conjugate's domain stays an independent cross-check.
    """
    if math.isfinite(f.hi):
        plus = INF  # growth blocked to the right
    else:
        a, b, _ = f.pieces[-1]
        plus = INF if a > 0.0 else b
    if math.isfinite(f.lo):
        minus = INF
    else:
        a, b, _ = f.pieces[0]
        minus = INF if a > 0.0 else -b

    lo = 0.0 if minus == INF else -INF
    hi = 0.0 if plus == INF else INF
    if lo == hi:
        return point_indicator(0.0)
    neg_slope = 0.0 if minus == INF else -minus
    pos_slope = 0.0 if plus == INF else plus
    if lo == 0.0:
        return PLQConvexFn((), ((0.0, pos_slope, 0.0),), 0.0, INF)
    if hi == 0.0:
        return PLQConvexFn((), ((0.0, neg_slope, 0.0),), -INF, 0.0)
    if neg_slope == pos_slope:
        return linear(pos_slope)
    return PLQConvexFn((0.0,), ((0.0, neg_slope, 0.0), (0.0, pos_slope, 0.0)))


@dataclass(frozen=True)
class SubdiffSet:
    """Per-coordinate closed intervals of subgradient slopes; possibly empty.

    ``intervals[i] is None`` encodes an empty i-th factor, which makes the
    whole set empty.
    """

    intervals: tuple[tuple[float, float] | None, ...]

    @property
    def is_empty(self) -> bool:
        return any(iv is None for iv in self.intervals)

    def contains(self, y: Sequence[float] | float, tol: float = 0.0) -> bool:
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        if self.is_empty or len(ys) != len(self.intervals):
            return False
        for yi, iv in zip(ys, self.intervals):
            assert iv is not None
            lo, hi = iv
            if yi < lo - tol or yi > hi + tol:
                return False
        return True

    def interval(self) -> tuple[float, float]:
        """The single interval of a one-dimensional set."""
        if len(self.intervals) != 1 or self.intervals[0] is None:
            raise ValueError("not a nonempty one-dimensional subdifferential")
        return self.intervals[0]


def subdifferential(f: PLQConvexFn, x: float) -> SubdiffSet:
    """Exact subdifferential of f at x as a closed slope interval."""
    if x < f.lo or x > f.hi:
        return SubdiffSet((None,))
    if f.lo == f.hi:
        return SubdiffSet(((-INF, INF),))
    lo_slope: float
    hi_slope: float
    if x == f.lo:
        lo_slope, hi_slope = -INF, _piece_slope(f.pieces[0], x)
    elif x == f.hi:
        lo_slope, hi_slope = _piece_slope(f.pieces[-1], x), INF
    else:
        i = f._piece_index(x)
        if i < len(f.breakpoints) and f.breakpoints[i] == x:
            lo_slope = _piece_slope(f.pieces[i], x)
            hi_slope = _piece_slope(f.pieces[i + 1], x)
        else:
            lo_slope = hi_slope = _piece_slope(f.pieces[i], x)
    return SubdiffSet(((lo_slope, hi_slope),))


def fenchel_gap(f: PLQConvexFn, x: float, y: float, f_star: PLQConvexFn | None = None) -> float:
    """f(x) + f*(y) - x*y; nonnegative, zero exactly at subgradient pairs.

    Tiny negative rounding residues (below 1e-12 at the problem's scale) are
    clipped to zero.
    """
    fx = f.value(x)
    fs = (f_star if f_star is not None else conjugate(f)).value(y)
    if math.isinf(fx) or math.isinf(fs):
        return INF
    g = fx + fs - x * y
    if g < 0.0 and g > -1e-12 * (1.0 + abs(fx) + abs(fs) + abs(x * y)):
        return 0.0
    return g


def grid_legendre(
    points: Sequence[float], values: Sequence[float], queries: Sequence[float]
) -> np.ndarray:
    """Sampled Legendre transform: max_i (q*x_i - f(x_i)) for each query q.

    A lower bound on the true conjugate that tightens monotonically as the
    sample set is refined.
    """
    xs = np.asarray(points, dtype=float)
    vs = np.asarray(values, dtype=float)
    qs = np.asarray(queries, dtype=float)
    if xs.ndim != 1 or xs.size < 2:
        raise ValueError("need at least two sample points")
    if np.any(np.diff(xs) <= 0.0):
        raise ValueError("sample points must be strictly increasing")
    if not np.all(np.isfinite(vs)):
        raise ValueError("sample values must be finite")
    return np.max(np.outer(qs, xs) - vs[None, :], axis=1)


# -- separable composition to R^d -------------------------------------------


@dataclass(frozen=True)
class SeparableConvexFn:
    """Separable sum of one-dimensional convex pieces, one per coordinate."""

    components: tuple[PLQConvexFn, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ImproperFunctionError("need at least one component")

    @property
    def dim(self) -> int:
        return len(self.components)

    def value(self, x: Sequence[float] | float) -> float:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if xs.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got shape {xs.shape}")
        total = 0.0
        for fi, xi in zip(self.components, xs):
            v = fi.value(float(xi))
            if v == INF:
                return INF
            total += v
        return total

    __call__ = value

    def conjugate(self) -> "SeparableConvexFn":
        return SeparableConvexFn(tuple(conjugate(fi) for fi in self.components))

    def recession(self) -> "SeparableConvexFn":
        return SeparableConvexFn(tuple(recession(fi) for fi in self.components))

    def subdifferential(self, x: Sequence[float] | float) -> SubdiffSet:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        ivs = []
        for fi, xi in zip(self.components, xs):
            ivs.append(subdifferential(fi, float(xi)).intervals[0])
        return SubdiffSet(tuple(ivs))

    def domain_box(self) -> tuple[tuple[float, float], ...]:
        return tuple(fi.domain() for fi in self.components)

    def inf(self) -> tuple[float, np.ndarray | None]:
        vals, args = [], []
        for fi in self.components:
            v, a = fi.inf()
            if v == -INF:
                return -INF, None
            vals.append(v)
            args.append(a)
        return float(sum(vals)), np.array(args, dtype=float)

    def scale(self, w: float) -> "SeparableConvexFn":
        return SeparableConvexFn(tuple(fi.scale(w) for fi in self.components))


def separable(*components: PLQConvexFn) -> SeparableConvexFn:
    return SeparableConvexFn(tuple(components))


def normal_cone_contains(f: SeparableConvexFn, x: Sequence[float] | float, direction: Sequence[float] | float, tol: float = 1e-9) -> bool:
    """Whether ``direction`` lies in the normal cone of ``cl dom f`` at x.

    For a separable function the domain is a box, so the cone test is a
    per-coordinate sign check against the active bounds.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ds = np.atleast_1d(np.asarray(direction, dtype=float))
    for fi, xi, di in zip(f.components, xs, ds):
        lo, hi = fi.domain()
        if xi < lo - tol or xi > hi + tol:
            return False
        at_lo = xi <= lo + tol
        at_hi = xi >= hi - tol
        if di > tol and not at_hi:
            return False
        if di < -tol and not at_lo:
            return False
    return True
