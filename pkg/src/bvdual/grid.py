"""Single-scenario side: BV paths on a time grid, measures, and duality checks.

Conventions fixed here make every discrete identity exact rather than
approximate:

* a path is left continuous, so its value on cell ``(t_{k-1}, t_k]`` is the
  running value ``s_{k-1}`` and its jump at ``t_k`` lands after ``t_k``;
* a dual function is right continuous and sampled at grid times;
* the reference measure carries one positive weight per cell and gives no
  mass to points, so a finite list of flagged instants can host singular
  atoms;
* the increment of a dual function at a flagged instant is treated as a
  singular atom in its derivative measure, and at an unflagged instant as
  density spread over the cell ending there.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bvdual.convex import (
    INF,
    SeparableConvexFn,
    conjugate,
    normal_cone_contains,
)

__all__ = [
    "TimeGrid",
    "ReferenceMeasure",
    "BVPath",
    "GridMeasure",
    "DualFunction",
    "DetInstance",
    "pairing",
    "total_variation",
    "cell_of",
    "lebesgue_decompose",
    "recombine",
    "measure_functional",
    "path_integral",
    "derivative_measure",
    "bolza_value_det",
    "instance_conjugate",
    "pointwise_infimum_value",
    "subgradient_report_det",
]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times t_0 = 0 < ... < t_N; cells (t_{k-1}, t_k]."""

    times: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) < 2:
            raise ValueError("need at least one cell")
        if self.times[0] != 0.0:
            raise ValueError("grid must start at 0")
        if any(u >= w for u, w in zip(self.times, self.times[1:])):
            raise ValueError("grid times must be strictly increasing")

    @property
    def n_cells(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return self.times[-1]


@dataclass(frozen=True)
class ReferenceMeasure:
    """Strictly positive cell weights; the discrete stand-in for an atomless
    measure with full support."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(w <= 0.0 or not math.isfinite(w) for w in self.weights):
            raise ValueError("cell weights must be positive and finite")


class BVPath:
    """Left-continuous piecewise-constant path: initial value plus jumps.

    ``running(k)`` is the value held on ``(t_k, t_{k+1}]``; ``running(N)`` is
    the terminal value past the horizon.
    """

    def __init__(
        self,
        x0: Sequence[float] | float,
        jumps: Sequence[Sequence[float]] | np.ndarray,
        running_values: np.ndarray | None = None,
    ):
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.jumps = np.atleast_2d(np.asarray(jumps, dtype=float))
        if self.jumps.shape[1] != self.x0.shape[0]:
            self.jumps = self.jumps.reshape(-1, self.x0.shape[0])
        if running_values is None:
            running_values = self.x0[None, :] + np.cumsum(self.jumps, axis=0)
        self.running_values = np.atleast_2d(np.asarray(running_values, dtype=float))

    @classmethod
    def from_values(
        cls, x0: Sequence[float] | float, values: Sequence[Sequence[float]] | np.ndarray
    ) -> "BVPath":
        """Path holding exactly the given running values (one row per jump).

        Avoids rebuilding boundary-exact values through cumulative sums,
        which can drift one ulp outside a closed domain.
        """
        x0a = np.atleast_1d(np.asarray(x0, dtype=float))
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        if vals.shape[1] != x0a.shape[0]:
            vals = vals.reshape(-1, x0a.shape[0])
        jumps = np.diff(np.vstack([x0a[None, :], vals]), axis=0)
        return cls(x0a, jumps, running_values=vals)

    @property
    def dim(self) -> int:
        return int(self.x0.shape[0])

    @property
    def n_jumps(self) -> int:
        return int(self.jumps.shape[0])

    def running(self, k: int) -> np.ndarray:
        return self.running_values[k]

    @property
    def terminal(self) -> np.ndarray:
        return self.running_values[-1]

    def value_at(self, grid: TimeGrid, t: float) -> np.ndarray:
        """Path value at time t under left continuity."""
        if t <= grid.times[0]:
            return self.x0
        k = cell_of(grid, t)
        return self.running_values[k - 1]


class DualFunction:
    """Right-continuous dual data: pre-initial vector plus grid samples."""

    def __init__(self, vminus: Sequence[float] | float, values: Sequence[Sequence[float]] | np.ndarray):
        self.vminus = np.atleast_1d(np.asarray(vminus, dtype=float))
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.values.shape[1] != self.vminus.shape[0]:
            self.values = self.values.reshape(-1, self.vminus.shape[0])
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.vminus)):
            raise ValueError("dual values must be finite")

    @property
    def dim(self) -> int:
        return int(self.vminus.shape[0])


@dataclass(frozen=True)
class GridMeasure:
    """Signed vector measure: per-cell density against the reference weights
    plus finitely many atoms at reference-null instants."""

    density: np.ndarray  # (n_cells, d)
    atoms: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "density", np.atleast_2d(np.asarray(self.density, dtype=float)))
        object.__setattr__(
            self,
            "atoms",
            tuple((float(tau), np.atleast_1d(np.asarray(m, dtype=float))) for tau, m in self.atoms),
        )

    @property
    def dim(self) -> int:
        return int(self.density.shape[1])


def cell_of(grid: TimeGrid, tau: float) -> int:
    """1-based index of the cell covering tau, boundary instants going left."""
    if tau < grid.times[0] or tau > grid.times[-1]:
        raise ValueError(f"instant {tau} outside [0, {grid.times[-1]}]")
    return max(1, bisect_left(grid.times, tau))


def pairing(v: DualFunction, x: BVPath) -> float:
    """v_pre . x_0 plus the Stieltjes sum of v against the jumps of x."""
    if v.values.shape != x.jumps.shape:
        raise ValueError(f"shape mismatch: dual {v.values.shape} vs path jumps {x.jumps.shape}")
    return float(v.vminus @ x.x0 + np.sum(v.values * x.jumps))


def total_variation(x: BVPath) -> float:
    """Sum of Euclidean jump norms."""
    return float(np.sum(np.linalg.norm(x.jumps, axis=1)))


def lebesgue_decompose(
    theta: GridMeasure,
    mu: ReferenceMeasure,
    flagged: Sequence[float],
    grid: TimeGrid,
) -> tuple[np.ndarray, tuple[tuple[float, np.ndarray, float], ...]]:
    """Split theta into its density part and normalized singular atoms.

    Returns the per-cell density and atoms as (instant, unit direction,
    total-variation weight) triples.  Atoms are only admitted at flagged
    instants; anything else is a modelling error, not a measure to decompose.
    """
    if len(mu.weights) != theta.density.shape[0]:
        raise ValueError("density/cell count mismatch")
    flags = set(float(t) for t in flagged)
    singular = []
    for tau, m in theta.atoms:
        if tau not in flags:
            raise ValueError(f"singular atom at unflagged instant {tau}")
        norm = float(np.linalg.norm(m))
        if norm > 0.0:
            singular.append((tau, m / norm, norm))
    return np.array(theta.density, dtype=float), tuple(singular)


def recombine(
    density: np.ndarray, singular: Sequence[tuple[float, np.ndarray, float]]
) -> GridMeasure:
    """Inverse of :func:`lebesgue_decompose`."""
    atoms = tuple((tau, direction * weight) for tau, direction, weight in singular)
    return GridMeasure(np.array(density, dtype=float), atoms)


def measure_functional(
    fns: Sequence[SeparableConvexFn],
    theta: GridMeasure,
    mu: ReferenceMeasure,
    grid: TimeGrid,
) -> float:
    """Integral of a convex family against a measure.

    The density part is integrated cell by cell against the reference
    weights; each singular atom enters through the horizon (recession)
    function of the covering cell's integrand, which is the exact price of
    concentrated mass.
    """
    if len(fns) != grid.n_cells or len(mu.weights) != grid.n_cells:
        raise ValueError("family/measure/grid cell counts differ")
    total = 0.0
    for k in range(grid.n_cells):
        v = fns[k].value(theta.density[k])
        if v == INF:
            return INF
        total += v * mu.weights[k]
    for tau, m in theta.atoms:
        if not np.any(m != 0.0):
            continue
        k = cell_of(grid, tau)
        v = fns[k - 1].recession().value(m)
        if v == INF:
            return INF
        total += v
    return total


def path_integral(
    fns: Sequence[SeparableConvexFn], x: BVPath, mu: ReferenceMeasure
) -> float:
    """Running cost of a path: cell values priced by the cell integrands."""
    n = len(mu.weights)
    if len(fns) != n:
        raise ValueError("family/measure cell counts differ")
    if x.n_jumps != n + 1:
        raise ValueError("path has wrong number of jump slots for this grid")
    total = 0.0
    for k in range(n):
        # value held on cell k+1 is the running value after jump k
        v = fns[k].value(x.running(k))
        if v == INF:
            return INF
        total += v * mu.weights[k]
    return total


def derivative_measure(
    v: DualFunction,
    grid: TimeGrid,
    mu: ReferenceMeasure,
    flagged: Sequence[float],
    *,
    negate: bool = False,
) -> GridMeasure:
    """Derivative measure of a right-continuous dual function.

    The increment over cell k is singular when t_k is a flagged instant and
    absolutely continuous (density against the cell weight) otherwise.
    """
    flags = set(float(t) for t in flagged)
    n = grid.n_cells
    sign = -1.0 if negate else 1.0
    density = np.zeros((n, v.dim))
    atoms: list[tuple[float, np.ndarray]] = []
    for k in range(1, n + 1):
        inc = sign * (v.values[k] - v.values[k - 1])
        if grid.times[k] in flags:
            if np.any(inc != 0.0):
                atoms.append((grid.times[k], inc))
        else:
            density[k - 1] = inc / mu.weights[k - 1]
    return GridMeasure(density, tuple(atoms))


# ---------------------------------------------------------------------------
# instances


@dataclass
class DetInstance:
    """Single-scenario generalized Bolza data on a grid.

    ``h`` prices the running value cell by cell, ``k0``/``kT`` the initial
    and terminal values.  Flagged instants are where singular dual mass may
    live.  The certificate (an affine minorant of every cell integrand) and
    the interior feasibility witness are the standing assumptions that make
    the duality formulas valid; both are checked exactly on load.
    """

    grid: TimeGrid
    mu: ReferenceMeasure
    h: tuple[SeparableConvexFn, ...]
    k0: SeparableConvexFn
    kT: SeparableConvexFn
    flagged: tuple[float, ...] = ()
    witness: BVPath | None = None
    witness_radius: float = 0.0
    witness_bound: tuple[float, ...] = ()
    cert_slopes: np.ndarray | None = None  # (n_cells, d)
    cert_alpha: float = 0.0
    k0_slope: np.ndarray | None = None
    kT_slope: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.k0.dim

    def conjugate_family(self) -> tuple[SeparableConvexFn, ...]:
        return tuple(f.conjugate() for f in self.h)

    def validate(self) -> None:
        n, d = self.grid.n_cells, self.dim
        if len(self.mu.weights) != n or len(self.h) != n:
            raise ValueError("cell data length mismatch")
        if any(f.dim != d for f in self.h) or self.kT.dim != d:
            raise ValueError("integrand dimensions differ")
        times = set(self.grid.times[1:])
        for tau in self.flagged:
            if tau not in times:
                raise ValueError(f"flagged instant {tau} is not a positive grid time")
        if self.cert_slopes is not None:
            slopes = np.atleast_2d(np.asarray(self.cert_slopes, dtype=float))
            if self.cert_alpha < 0.0:
                raise ValueError("certificate offset must be nonnegative")
            for k in range(n):
                low = 0.0
                for i, fi in enumerate(self.h[k].components):
                    v, _ = fi.tilt(float(slopes[k, i])).inf()
                    if v == -INF:
                        raise ValueError(f"certificate slope fails on cell {k + 1}")
                    low += v
                if low < -self.cert_alpha - 1e-9:
                    raise ValueError(
                        f"affine minorant violated on cell {k + 1}: inf {low} < -{self.cert_alpha}"
                    )
        if self.witness is not None:
            if self.witness_radius <= 0.0:
                raise ValueError("witness radius must be positive")
            if len(self.witness_bound) != n:
                raise ValueError("witness bound must give one value per cell")
            r = self.witness_radius
            for k in range(n):
                s = self.witness.running(k)
                hi_val = 0.0
                for i, fi in enumerate(self.h[k].components):
                    lo_dom, hi_dom = fi.domain()
                    if s[i] - r < lo_dom - 1e-12 or s[i] + r > hi_dom + 1e-12:
                        raise ValueError(f"witness ball leaves the domain on cell {k + 1}")
                    # clip probes into the domain: s +- r may sit one ulp outside
                    a = min(max(s[i] - r, lo_dom), hi_dom)
                    b = min(max(s[i] + r, lo_dom), hi_dom)
                    hi_val += max(fi.value(a), fi.value(b))
                if hi_val > self.witness_bound[k] + 1e-9:
                    raise ValueError(f"witness bound too small on cell {k + 1}")
            if self.k0.value(self.witness.x0) == INF or self.kT.value(self.witness.terminal) == INF:
                raise ValueError("witness endpoints infeasible")
        for fn, slope, name in ((self.k0, self.k0_slope, "k0"), (self.kT, self.kT_slope, "kT")):
            if slope is None:
                continue
            sl = np.atleast_1d(np.asarray(slope, dtype=float))
            for i, fi in enumerate(fn.components):
                v, _ = fi.tilt(float(sl[i])).inf()
                if v == -INF:
                    raise ValueError(f"{name} conjugate improper at declared slope")


def bolza_value_det(inst: DetInstance, x: BVPath) -> float:
    """Running cost plus endpoint costs of a path."""
    run = path_integral(inst.h, x, inst.mu)
    if run == INF:
        return INF
    v0 = inst.k0.value(x.x0)
    vT = inst.kT.value(x.terminal)
    if v0 == INF or vT == INF:
        return INF
    return run + v0 + vT


def pointwise_infimum_value(inst: DetInstance) -> float:
    """Cellwise infima integrated against the reference weights."""
    total = 0.0
    for k in range(inst.grid.n_cells):
        v, _ = inst.h[k].inf()
        if v == -INF:
            return -INF
        total += v * inst.mu.weights[k]
    return total


def instance_conjugate(
    inst: DetInstance,
    v: DualFunction,
    h_star: tuple[SeparableConvexFn, ...] | None = None,
) -> float:
    """Closed-form value of the support problem sup_x {<v, x> - cost(x)}.

    Evaluates the measure functional of the conjugated cell family at the
    negated derivative measure of v, plus conjugate endpoint charges.
    """
    stars = h_star if h_star is not None else inst.conjugate_family()
    neg_dv = derivative_measure(v, inst.grid, inst.mu, inst.flagged, negate=True)
    j = measure_functional(stars, neg_dv, inst.mu, inst.grid)
    if j == INF:
        return INF
    a = inst.k0.conjugate().value(v.vminus - v.values[0])
    b = inst.kT.conjugate().value(v.values[-1])
    if a == INF or b == INF:
        return INF
    return j + a + b


@dataclass
class ConditionRecord:
    name: str
    location: str
    ok: bool
    detail: str = ""


@dataclass
class OptimalityReport:
    """Pointwise subgradient conditions next to the aggregate duality gap."""

    conditions: list[ConditionRecord]
    primal_value: float
    dual_value: float
    pairing_value: float
    gap: float
    gap_tol: float

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.conditions)

    @property
    def gap_closed(self) -> bool:
        return math.isfinite(self.gap) and self.gap <= self.gap_tol

    @property
    def consistent(self) -> bool:
        return self.all_ok == self.gap_closed

    def failing(self) -> list[ConditionRecord]:
        return [c for c in self.conditions if not c.ok]


def subgradient_report_det(
    inst: DetInstance,
    x: BVPath,
    v: DualFunction,
    *,
    gap_tol: float = 1e-8,
    cond_tol: float = 1e-9,
) -> OptimalityReport:
    """Check the pointwise optimality system of a primal/dual pair.

    Cell condition: minus the density of the dual derivative is a subgradient
    of the cell integrand at the running value.  Atom condition: the negated
    singular mass points into the normal cone of the integrand's domain at
    the path value.  Endpoints pair with the conjugate charges.  All four
    families hold exactly when the duality gap vanishes.
    """
    primal = bolza_value_det(inst, x)
    if primal == INF:
        raise ValueError("infeasible path: its cost is +inf")
    conds: list[ConditionRecord] = []
    flags = set(inst.flagged)
    for k in range(1, inst.grid.n_cells + 1):
        s = x.running(k - 1)
        inc = v.values[k] - v.values[k - 1]
        if inst.grid.times[k] in flags:
            dens = np.zeros(inst.dim)
            m = -inc
            ok = normal_cone_contains(inst.h[k - 1], s, m, tol=cond_tol)
            conds.append(
                ConditionRecord(
                    "singular-normal-cone",
                    f"t={inst.grid.times[k]}",
                    bool(ok),
                    f"mass {m} at path value {s}",
                )
            )
        else:
            dens = -inc / inst.mu.weights[k - 1]
        ok = inst.h[k - 1].subdifferential(s).contains(dens, tol=cond_tol)
        conds.append(
            ConditionRecord(
                "cell-subgradient", f"cell {k}", bool(ok), f"slope {dens} at {s}"
            )
        )
    y0 = v.vminus - v.values[0]
    conds.append(
        ConditionRecord(
            "initial-subgradient",
            "t=0",
            bool(inst.k0.subdifferential(x.x0).contains(y0, tol=cond_tol)),
            f"slope {y0} at {x.x0}",
        )
    )
    yT = v.values[-1]
    conds.append(
        ConditionRecord(
            "terminal-subgradient",
            "t=T+",
            bool(inst.kT.subdifferential(x.terminal).contains(yT, tol=cond_tol)),
            f"slope {yT} at {x.terminal}",
        )
    )
    dual = instance_conjugate(inst, v)
    pair = pairing(v, x)
    gap = INF if dual == INF else primal + dual - pair
    return OptimalityReport(conds, primal, dual, pair, gap, gap_tol)
