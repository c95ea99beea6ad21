"""Derivative-free concave maximization used by the certification oracles.

The oracles certify closed-form values by direct numerical optimization, so
this engine deliberately treats objectives as black boxes built from small
additive terms: coarse per-coordinate probing, golden-section line searches,
cyclic sweeps, multi-start, and a refinement loop that accepts a value only
once two successive refinement levels agree.  Nothing in here knows about
conjugates, decompositions or any other closed-form structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INF = math.inf
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SearchResult:
    value: float
    point: np.ndarray
    diverged: bool = False
    ray: tuple[int, float] | None = None  # (coordinate, direction) certifying divergence
    evaluations: int = 0


class TermObjective:
    """Additive objective with per-coordinate boxes and delta evaluation.

    Each term depends on a small tuple of coordinates; changing one coordinate
    only re-evaluates the terms touching it.  Term order is fixed at build
    time and all reductions run in that order, so evaluation is deterministic.
    """

    def __init__(self, boxes: Sequence[tuple[float, float]]):
        self.boxes = [(float(lo), float(hi)) for lo, hi in boxes]
        self.n = len(self.boxes)
        self._term_vars: list[tuple[int, ...]] = []
        self._term_funs: list[Callable[..., float]] = []
        self._touching: list[list[int]] = [[] for _ in range(self.n)]
        self.z = np.zeros(self.n)
        self._term_vals: list[float] = []
        self.total = 0.0
        self.evals = 0

    def add_term(self, var_ids: Sequence[int], fun: Callable[..., float]) -> None:
        t = len(self._term_vars)
        self._term_vars.append(tuple(var_ids))
        self._term_funs.append(fun)
        for j in var_ids:
            self._touching[j].append(t)

    def clamp(self, z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float)
        for j, (lo, hi) in enumerate(self.boxes):
            out[j] = min(max(out[j], lo), hi)
        return out

    def set_state(self, z: np.ndarray) -> float:
        self.z = np.array(z, dtype=float)
        self._term_vals = [
            fun(*(self.z[j] for j in ids))
            for ids, fun in zip(self._term_vars, self._term_funs)
        ]
        self.total = math.fsum(self._term_vals)
        return self.total

    def peek(self, j: int, t: float) -> float:
        """Objective value with coordinate ``j`` moved to ``t``."""
        self.evals += 1
        old_j = self.z[j]
        self.z[j] = t
        delta = 0.0
        for ti in self._touching[j]:
            ids = self._term_vars[ti]
            delta += self._term_funs[ti](*(self.z[k] for k in ids)) - self._term_vals[ti]
        self.z[j] = old_j
        return self.total + delta

    def commit(self, j: int, t: float) -> None:
        self.z[j] = t
        for ti in self._touching[j]:
            ids = self._term_vars[ti]
            self._term_vals[ti] = self._term_funs[ti](*(self.z[k] for k in ids))
        self.total = math.fsum(self._term_vals)


def golden_max(fun: Callable[[float], float], lo: float, hi: float, xtol: float) -> tuple[float, float]:
    """Maximize a concave function on [lo, hi]; returns (argmax, value).

    Endpoints are probed explicitly so constrained maxima are not lost to the
    interior-only golden recursion.
    """
    if hi <= lo:
        return lo, fun(lo)
    best_x, best_v = lo, fun(lo)
    v_hi = fun(hi)
    if v_hi > best_v:
        best_x, best_v = hi, v_hi
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    for x, v in ((c, fc), (d, fd)):
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def _slice_max(
    fun: Callable[[float], float],
    center: float,
    lo: float,
    hi: float,
    xtol: float,
    div_threshold: float,
    n_probe: int = 7,
) -> tuple[float, float, bool]:
    """Maximize one concave coordinate slice; flags divergent slices.

    Expands a finite search window until the maximizer stops hitting the
    window edge or the value passes the divergence threshold.
    """
    span = 4.0
    while True:
        wlo, whi = max(lo, center - span), min(hi, center + span)
        if whi < wlo:
            wlo = whi = min(max(center, lo), hi)
        # coarse probe, then golden around the best neighborhood
        if whi > wlo and n_probe >= 3:
            grid = np.linspace(wlo, whi, n_probe)
            vals = [fun(float(g)) for g in grid]
            k = int(np.argmax(vals))
            glo = grid[max(0, k - 1)]
            ghi = grid[min(n_probe - 1, k + 1)]
        else:
            glo, ghi = wlo, whi
        x, v = golden_max(fun, float(glo), float(ghi), xtol)
        hit_left = (x - wlo) <= 2.0 * xtol and wlo > lo
        hit_right = (whi - x) <= 2.0 * xtol and whi < hi
        if not (hit_left or hit_right):
            return x, v, False
        if v > div_threshold:
            return x, v, True
        span *= 8.0
        if span > 1e15:
            return x, v, True


def coordinate_ascent(
    obj: TermObjective,
    starts: Sequence[np.ndarray],
    *,
    xtol: float = 1e-9,
    gain_tol: float = 1e-13,
    div_threshold: float = 1e12,
    max_sweeps: int = 80,
) -> SearchResult:
    """Multi-start cyclic coordinate maximization over a box."""
    best_v = -INF
    best_z: np.ndarray | None = None
    for z0 in starts:
        z = obj.clamp(np.asarray(z0, dtype=float))
        v = obj.set_state(z)
        for _ in range(max_sweeps):
            improved = False
            for j in range(obj.n):
                lo, hi = obj.boxes[j]
                x, vx, div = _slice_max(
                    lambda t: obj.peek(j, t), obj.z[j], lo, hi, xtol, div_threshold
                )
                if div:
                    direction = 1.0 if x >= obj.z[j] else -1.0
                    return SearchResult(INF, np.array(obj.z), True, (j, direction), obj.evals)
                if vx > v + gain_tol * (1.0 + abs(v)):
                    obj.commit(j, x)
                    v = obj.total
                    improved = True
            v = obj.set_state(obj.z)  # refresh running sums
            if not improved:
                break
        if v > best_v:
            best_v, best_z = v, np.array(obj.z)
    assert best_z is not None, "no starts supplied"
    return SearchResult(best_v, best_z, False, None, obj.evals)


def refined_maximize(
    build: Callable[[], TermObjective],
    starts: Sequence[np.ndarray],
    *,
    tol: float = 1e-6,
    xtol0: float = 1e-7,
    div_threshold: float = 1e12,
    max_levels: int = 4,
) -> SearchResult:
    """Run coordinate ascent at successively finer line-search tolerances.

    The value is accepted once two successive levels agree within 0.1*tol,
    warm-starting each level at the previous maximizer.
    """
    obj = build()
    xtol = xtol0
    prev: SearchResult | None = None
    level_starts = list(starts)
    for _ in range(max_levels):
        res = coordinate_ascent(obj, level_starts, xtol=xtol, div_threshold=div_threshold)
        if res.diverged:
            return res
        if prev is not None and abs(res.value - prev.value) <= 0.1 * tol * (1.0 + abs(res.value)):
            return res if res.value >= prev.value else prev
        prev = res
        level_starts = [res.point] + list(starts)
        xtol /= 10.0
    assert prev is not None
    return prev


def default_starts(
    boxes: Sequence[tuple[float, float]],
    rng: np.random.Generator,
    n_random: int = 4,
    span: float = 2.0,
    extra: Sequence[np.ndarray] = (),
) -> list[np.ndarray]:
    """Deterministic start battery: supplied points, zero, and seeded noise."""
    n = len(boxes)

    def clamp(z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float)
        for j, (lo, hi) in enumerate(boxes):
            mid = 0.0
            if math.isfinite(lo) and math.isfinite(hi):
                mid = 0.5 * (lo + hi)
            elif math.isfinite(lo):
                mid = lo + 1.0
            elif math.isfinite(hi):
                mid = hi - 1.0
            out[j] = min(max(out[j] if math.isfinite(out[j]) else mid, lo), hi)
        return out

    starts = [clamp(np.asarray(e, dtype=float)) for e in extra]
    starts.append(clamp(np.zeros(n)))
    for _ in range(n_random):
        starts.append(clamp(rng.uniform(-span, span, size=n)))
    return starts
