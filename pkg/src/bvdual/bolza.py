"""Generalized Bolza functionals on scenario trees and their dual formulas.

The total cost of an adapted BV path is its running cost against an adapted
reference measure plus initial and terminal charges.  Its support function
over dual pairs evaluates in closed form: conjugated cell integrands at the
negated compensator increments of the dual process (density against the cell
weights at unflagged instants, horizon functions of singular mass at flagged
ones), plus conjugate endpoint charges.  The martingale part of the dual
never enters the closed form; the certifying oracle in :mod:`bvdual.oracle`
never splits the dual at all, which keeps the two routes independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bvdual.convex import (
    INF,
    PLQConvexFn,
    SeparableConvexFn,
    conjugate,
    normal_cone_contains,
)
from bvdual.grid import ConditionRecord, DetInstance, OptimalityReport, ReferenceMeasure, TimeGrid
from bvdual.quasimartingale import compensator_increments, mean_variation
from bvdual.tree import (
    AdaptedProcess,
    RandomWeights,
    RawProcess,
    ScenarioTree,
    TreeDual,
    TreePath,
    path_dual_pairing,
    pathwise_total_variation,
)

__all__ = [
    "BolzaInstance",
    "bolza_value",
    "dual_value_formula",
    "optimality_report",
    "jensen_pair",
    "horizon_value",
    "horizon_quotient",
    "is_coercive",
    "component_coercive",
    "var_lower_bound",
    "witness_cost_bound",
    "detect_shape",
    "support_function_value",
    "endpoint_only_value",
]


@dataclass
class BolzaInstance:
    """Tree, reference weights, integrands, and the standing assumptions.

    ``h[n]`` prices the cell starting at node n's time (depth <= N-1), so the
    running integrand is known at the cell's left endpoint.  ``k0`` lives on
    the time-0 atoms and ``kT`` on the leaves.  ``flagged`` lists the grid
    times where dual mass concentrates into singular atoms.

    The affine-minorant certificate and the interior feasibility witness are
    validated exactly; they are what licenses the closed-form conjugate.
    """

    tree: ScenarioTree
    grid: TimeGrid
    mu: RandomWeights
    h: dict[int, SeparableConvexFn]
    k0: dict[int, SeparableConvexFn]
    kT: dict[int, SeparableConvexFn]
    flagged: tuple[float, ...] = ()
    witness: TreePath | None = None
    witness_radius: float = 0.0
    witness_bound: dict[int, float] = field(default_factory=dict)
    cert_slopes: dict[int, np.ndarray] = field(default_factory=dict)
    cert_alpha: float = 0.0
    k0_slopes: dict[int, np.ndarray] = field(default_factory=dict)
    kT_slopes: dict[int, np.ndarray] = field(default_factory=dict)
    duals: dict[str, TreeDual] = field(default_factory=dict)
    primals: dict[str, TreePath] = field(default_factory=dict)
    raws: dict[str, RawProcess] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._h_star: dict[int, SeparableConvexFn] | None = None

    @property
    def dim(self) -> int:
        return next(iter(self.k0.values())).dim

    @property
    def cell_nodes(self) -> list[int]:
        return [n for n in range(self.tree.n_nodes) if self.tree.depth[n] < self.tree.n_periods]

    def flagged_depths(self) -> set[int]:
        lookup = {t: k for k, t in enumerate(self.grid.times)}
        return {lookup[t] for t in self.flagged}

    def conjugate_family(self) -> dict[int, SeparableConvexFn]:
        if self._h_star is None:
            self._h_star = {n: f.conjugate() for n, f in self.h.items()}
        return self._h_star

    def validate(self) -> None:
        tree, d = self.tree, self.dim
        if self.grid.n_cells != tree.n_periods:
            raise ValueError("grid cells and tree periods differ")
        cells = set(self.cell_nodes)
        if set(self.h) != cells:
            raise ValueError("running integrand must cover exactly the cell nodes")
        if set(self.k0) != set(tree.roots):
            raise ValueError("initial charge must cover exactly the time-0 atoms")
        if set(self.kT) != set(tree.leaves):
            raise ValueError("terminal charge must cover exactly the leaves")
        if any(f.dim != d for f in self.h.values()) or any(f.dim != d for f in self.kT.values()):
            raise ValueError("integrand dimensions differ")
        times = set(self.grid.times[1:])
        for t in self.flagged:
            if t not in times:
                raise ValueError(f"flagged instant {t} is not a positive grid time")
        for n, slopes in self.cert_slopes.items():
            sl = np.atleast_1d(np.asarray(slopes, dtype=float))
            low = 0.0
            for i, fi in enumerate(self.h[n].components):
                vi, _ = fi.tilt(float(sl[i])).inf()
                if vi == -INF:
                    raise ValueError(f"certificate slope fails at node {n}")
                low += vi
            if low < -self.cert_alpha - 1e-9:
                raise ValueError(f"affine minorant violated at node {n}")
        if self.cert_slopes and set(self.cert_slopes) != cells:
            raise ValueError("certificate must cover exactly the cell nodes")
        if self.witness is not None:
            if self.witness_radius <= 0.0:
                raise ValueError("witness radius must be positive")
            if set(self.witness_bound) != cells:
                raise ValueError("witness bound must cover exactly the cell nodes")
            r = self.witness_radius
            for n in self.cell_nodes:
                s = self.witness.cells[n]
                hi_val = 0.0
                for i, fi in enumerate(self.h[n].components):
                    lo_dom, hi_dom = fi.domain()
                    if s[i] - r < lo_dom - 1e-12 or s[i] + r > hi_dom + 1e-12:
                        raise ValueError(f"witness ball leaves the domain at node {n}")
                    # clip probes into the domain: s +- r may sit one ulp outside
                    a = min(max(s[i] - r, lo_dom), hi_dom)
                    b = min(max(s[i] + r, lo_dom), hi_dom)
                    hi_val += max(fi.value(a), fi.value(b))
                if hi_val > self.witness_bound[n] + 1e-9:
                    raise ValueError(f"witness bound too small at node {n}")
            for rt in tree.roots:
                if self.k0[rt].value(self.witness.initial[rt]) == INF:
                    raise ValueError(f"witness initial value infeasible on atom {rt}")
            for leaf in tree.leaves:
                if self.kT[leaf].value(self.witness.terminal[leaf]) == INF:
                    raise ValueError(f"witness terminal value infeasible on leaf {leaf}")
        for table, fns, name in (
            (self.k0_slopes, self.k0, "initial"),
            (self.kT_slopes, self.kT, "terminal"),
        ):
            for n, slopes in table.items():
                sl = np.atleast_1d(np.asarray(slopes, dtype=float))
                for i, fi in enumerate(fns[n].components):
                    vi, _ = fi.tilt(float(sl[i])).inf()
                    if vi == -INF:
                        raise ValueError(f"{name} conjugate improper at its declared slope (node {n})")

    def to_deterministic(self) -> DetInstance:
        """Single-scenario instances reduce to the grid-side machinery."""
        tree = self.tree
        if tree.n_leaves != 1:
            raise ValueError("only single-scenario instances reduce to a grid instance")
        path = tree.paths[0]
        from bvdual.grid import BVPath  # local import to keep module load light

        witness = None
        if self.witness is not None:
            running = np.vstack(
                [self.witness.cells[n] for n in path[:-1]]
                + [self.witness.terminal[path[-1]]]
            )
            witness = BVPath.from_values(self.witness.initial[path[0]], running)
        return DetInstance(
            grid=self.grid,
            mu=ReferenceMeasure(tuple(self.mu.w[n] for n in path[:-1])),
            h=tuple(self.h[n] for n in path[:-1]),
            k0=self.k0[path[0]],
            kT=self.kT[path[-1]],
            flagged=self.flagged,
            witness=witness,
            witness_radius=self.witness_radius,
            witness_bound=tuple(self.witness_bound.get(n, 0.0) for n in path[:-1]),
            cert_slopes=(
                np.array([self.cert_slopes[n] for n in path[:-1]]) if self.cert_slopes else None
            ),
            cert_alpha=self.cert_alpha,
            k0_slope=self.k0_slopes.get(path[0]),
            kT_slope=self.kT_slopes.get(path[-1]),
        )


def bolza_value(inst: BolzaInstance, x: TreePath) -> float:
    """Expected running cost plus endpoint charges of an adapted path."""
    tree = inst.tree
    total = 0.0
    for n in inst.cell_nodes:
        v = inst.h[n].value(x.cells[n])
        if v == INF:
            return INF
        total += float(tree.prob[n]) * v * inst.mu.w[n]
    for r in tree.roots:
        v = inst.k0[r].value(x.initial[r])
        if v == INF:
            return INF
        total += float(tree.prob[r]) * v
    for leaf in tree.leaves:
        v = inst.kT[leaf].value(x.terminal[leaf])
        if v == INF:
            return INF
        total += float(tree.prob[leaf]) * v
    return total


def witness_cost_bound(inst: BolzaInstance) -> float:
    """Upper bound on the witness cost from the declared cell bounds."""
    if inst.witness is None:
        raise ValueError("instance has no witness")
    tree = inst.tree
    total = 0.0
    for n in inst.cell_nodes:
        total += float(tree.prob[n]) * inst.witness_bound[n] * inst.mu.w[n]
    for r in tree.roots:
        total += float(tree.prob[r]) * inst.k0[r].value(inst.witness.initial[r])
    for leaf in tree.leaves:
        total += float(tree.prob[leaf]) * inst.kT[leaf].value(inst.witness.terminal[leaf])
    return total


def dual_value_formula(inst: BolzaInstance, v: TreeDual) -> float:
    """Closed-form support value of the total cost at a dual pair.

    The dual derivative measure is the compensator-increment measure of the
    process: increments landing at unflagged instants act as density over the
    cell they close, increments at flagged instants as singular atoms priced
    by the horizon function of the conjugated cell integrand.
    """
    tree = inst.tree
    stars = inst.conjugate_family()
    flagged = inst.flagged_depths()
    inc = compensator_increments(v.process)
    total = 0.0
    for n in inst.cell_nodes:
        p = float(tree.prob[n])
        w = inst.mu.w[n]
        if tree.depth[n] + 1 in flagged:
            val = stars[n].value(np.zeros(inst.dim))
            if val == INF:
                return INF
            total += p * w * val
            mass = -inc[n]
            if np.any(mass != 0.0):
                sing = stars[n].recession().value(mass)
                if sing == INF:
                    return INF
                total += p * sing
        else:
            val = stars[n].value(-inc[n] / w)
            if val == INF:
                return INF
            total += p * w * val
    for r in tree.roots:
        val = inst.k0[r].conjugate().value(v.vminus[r] - v.process.values[r])
        if val == INF:
            return INF
        total += float(tree.prob[r]) * val
    for leaf in tree.leaves:
        val = inst.kT[leaf].conjugate().value(v.process.values[leaf])
        if val == INF:
            return INF
        total += float(tree.prob[leaf]) * val
    return total


def var_lower_bound(inst: BolzaInstance, v: TreeDual) -> float:
    """Lower bound <witness, v> - alpha + radius * Var(v) on the dual value.

    The bound comes from perturbing the witness inside its feasibility ball
    with paths vanishing at both ends; it is how unbounded mean variation
    would force the dual value to +inf under refinement.
    """
    if inst.witness is None:
        raise ValueError("instance has no witness")
    alpha = witness_cost_bound(inst)
    base = path_dual_pairing(inst.witness, v)
    return base - alpha + inst.witness_radius * mean_variation(v.process)


def optimality_report(
    inst: BolzaInstance,
    x: TreePath,
    v: TreeDual,
    *,
    gap_tol: float = 1e-8,
    cond_tol: float = 1e-9,
) -> OptimalityReport:
    """Pointwise subgradient system of a primal/dual pair plus the duality gap.

    Per cell node: minus the compensator increment over the cell weight must
    subdifferentiate the cell integrand at the running value; at flagged
    instants the density is zero and the negated atom must point into the
    domain's normal cone at the path value there.  Endpoints pair with the
    initial and terminal charges.  All conditions hold exactly when the gap
    closes.
    """
    primal = bolza_value(inst, x)
    if primal == INF:
        raise ValueError("infeasible path: its cost is +inf")
    tree = inst.tree
    flagged = inst.flagged_depths()
    inc = compensator_increments(v.process)
    conds: list[ConditionRecord] = []
    for n in inst.cell_nodes:
        s = x.cells[n]
        if tree.depth[n] + 1 in flagged:
            dens = np.zeros(inst.dim)
            mass = -inc[n]
            ok = normal_cone_contains(inst.h[n], s, mass, tol=cond_tol)
            conds.append(
                ConditionRecord(
                    "singular-normal-cone",
                    f"node {n} @ t={inst.grid.times[tree.depth[n] + 1]}",
                    bool(ok),
                    f"mass {mass} at {s}",
                )
            )
        else:
            dens = -inc[n] / inst.mu.w[n]
        ok = inst.h[n].subdifferential(s).contains(dens, tol=cond_tol)
        conds.append(
            ConditionRecord("cell-subgradient", f"node {n}", bool(ok), f"slope {dens} at {s}")
        )
    for r in tree.roots:
        y0 = v.vminus[r] - v.process.values[r]
        conds.append(
            ConditionRecord(
                "initial-subgradient",
                f"atom {r}",
                bool(inst.k0[r].subdifferential(x.initial[r]).contains(y0, tol=cond_tol)),
                f"slope {y0} at {x.initial[r]}",
            )
        )
    for leaf in tree.leaves:
        yT = v.process.values[leaf]
        conds.append(
            ConditionRecord(
                "terminal-subgradient",
                f"leaf {leaf}",
                bool(inst.kT[leaf].subdifferential(x.terminal[leaf]).contains(yT, tol=cond_tol)),
                f"slope {yT} at {x.terminal[leaf]}",
            )
        )
    dual = dual_value_formula(inst, v)
    pair = path_dual_pairing(x, v)
    gap = INF if dual == INF else primal + dual - pair
    return OptimalityReport(conds, primal, dual, pair, gap, gap_tol)


# ---------------------------------------------------------------------------
# projections under the running cost (conditional Jensen)


def jensen_pair(
    inst: BolzaInstance, raw: RawProcess, variant: str = "optional"
) -> tuple[float, float]:
    """Running cost of a raw process and of its projection.

    ``optional``: the time-k value is held on the cell starting at t_k and
    projected on the time-k atom.  ``predictable``: the time-k value is held
    on the cell ending at t_k (left-continuous reading) and projected one
    step ahead, on the atom where that cell's integrand lives.  Either way
    the integrand is constant on the conditioning atom, which is exactly what
    makes the projected cost no larger.
    """
    if not inst.cert_slopes:
        raise ValueError("affine-minorant certificate required for projection bounds")
    if variant not in ("optional", "predictable"):
        raise ValueError(f"unknown variant {variant!r}")
    tree = inst.tree
    shift = 0 if variant == "optional" else 1
    lhs = 0.0
    rhs = 0.0
    for n in inst.cell_nodes:
        k = tree.depth[n] + shift
        w = inst.mu.w[n]
        proj = np.zeros(inst.dim)
        mass = 0.0
        for li in tree.leaves_through[n]:
            p = float(tree.prob[tree.leaves[li]])
            val = inst.h[n].value(raw.values[li, k])
            if val == INF:
                lhs = INF
            elif lhs != INF:
                lhs += p * val * w
            proj += p * raw.values[li, k]
            mass += p
        proj /= mass
        val = inst.h[n].value(proj)
        if val == INF:
            rhs = INF
        elif rhs != INF:
            rhs += float(tree.prob[n]) * val * w
    return lhs, rhs


# ---------------------------------------------------------------------------
# horizon (recession) behavior and coercivity


def horizon_value(inst: BolzaInstance, x: TreePath) -> float:
    """Closed-form growth rate of the total cost along direction x."""
    tree = inst.tree
    total = 0.0
    for n in inst.cell_nodes:
        v = inst.h[n].recession().value(x.cells[n])
        if v == INF:
            return INF
        total += float(tree.prob[n]) * v * inst.mu.w[n]
    for r in tree.roots:
        v = inst.k0[r].recession().value(x.initial[r])
        if v == INF:
            return INF
        total += float(tree.prob[r]) * v
    for leaf in tree.leaves:
        v = inst.kT[leaf].recession().value(x.terminal[leaf])
        if v == INF:
            return INF
        total += float(tree.prob[leaf]) * v
    return total


def scale_path(x: TreePath, alpha: float) -> TreePath:
    return TreePath(x.tree, alpha * x.initial, alpha * x.cells, alpha * x.terminal)


def add_paths(x: TreePath, y: TreePath) -> TreePath:
    return TreePath(x.tree, x.initial + y.initial, x.cells + y.cells, x.terminal + y.terminal)


def horizon_quotient(inst: BolzaInstance, x: TreePath, alpha: float) -> float:
    """(cost(witness + alpha x) - cost(witness)) / alpha; nondecreasing in
    alpha with the horizon value as its limit."""
    if inst.witness is None:
        raise ValueError("instance has no witness")
    base = bolza_value(inst, inst.witness)
    moved = bolza_value(inst, add_paths(inst.witness, scale_path(x, alpha)))
    if moved == INF:
        return INF
    return (moved - base) / alpha


def component_coercive(f: PLQConvexFn) -> bool:
    """Growth beyond every slope: the conjugate has the whole line as domain."""
    lo, hi = conjugate(f).domain()
    return lo == -INF and hi == INF


def is_coercive(inst: BolzaInstance) -> bool:
    """All integrand components grow superlinearly in every direction."""
    fns = list(inst.h.values()) + list(inst.k0.values()) + list(inst.kT.values())
    return all(component_coercive(c) for f in fns for c in f.components)


# ---------------------------------------------------------------------------
# special shapes


def detect_shape(inst: BolzaInstance) -> str:
    """Classify the running integrand: 'finite', 'indicator', 'zero', 'general'.

    'finite' means every cell component is real-valued on the whole line;
    'indicator' means every cell integrand vanishes on its (not necessarily
    full) domain; 'zero' is both at once, leaving endpoint charges only.
    """
    all_finite = True
    all_indicator = True
    for f in inst.h.values():
        for c in f.components:
            lo, hi = c.domain()
            if not (lo == -INF and hi == INF):
                all_finite = False
            if any(piece != (0.0, 0.0, 0.0) for piece in c.pieces):
                all_indicator = False
    if all_finite and all_indicator:
        return "zero"
    if all_finite:
        return "finite"
    if all_indicator:
        return "indicator"
    return "general"


def support_function_value(inst: BolzaInstance, v: TreeDual) -> float:
    """Indicator-shape closed form: support functions of the domain boxes at
    the negated increments (flagged or not; homogeneity erases the weights),
    plus conjugate endpoint charges."""
    if detect_shape(inst) not in ("indicator", "zero"):
        raise ValueError("support-function form needs an indicator running integrand")
    tree = inst.tree
    inc = compensator_increments(v.process)
    total = 0.0
    for n in inst.cell_nodes:
        box = inst.h[n].domain_box()
        val = 0.0
        for (lo, hi), mi in zip(box, -inc[n]):
            if mi > 0.0:
                if hi == INF:
                    return INF
                val += hi * mi
            elif mi < 0.0:
                if lo == -INF:
                    return INF
                val += lo * mi
        total += float(tree.prob[n]) * val
    for r in tree.roots:
        ev = inst.k0[r].conjugate().value(v.vminus[r] - v.process.values[r])
        if ev == INF:
            return INF
        total += float(tree.prob[r]) * ev
    for leaf in tree.leaves:
        ev = inst.kT[leaf].conjugate().value(v.process.values[leaf])
        if ev == INF:
            return INF
        total += float(tree.prob[leaf]) * ev
    return total


def endpoint_only_value(inst: BolzaInstance, v: TreeDual) -> float:
    """Zero-shape closed form: finite only for martingale dual processes,
    where the value reduces to the conjugate endpoint charges."""
    if detect_shape(inst) != "zero":
        raise ValueError("endpoint-only form needs a vanishing running integrand")
    inc = compensator_increments(v.process)
    for n in inst.cell_nodes:
        if np.linalg.norm(inc[n]) > 0.0:
            return INF
    tree = inst.tree
    total = 0.0
    for r in tree.roots:
        ev = inst.k0[r].conjugate().value(v.vminus[r] - v.process.values[r])
        if ev == INF:
            return INF
        total += float(tree.prob[r]) * ev
    for leaf in tree.leaves:
        ev = inst.kT[leaf].conjugate().value(v.process.values[leaf])
        if ev == INF:
            return INF
        total += float(tree.prob[leaf]) * ev
    return total
