"""Independent brute-force oracles for the closed-form duality values.

Every oracle here works directly on primal coefficients: it evaluates costs
and pairings scenario by scenario and maximizes (or minimizes) them with the
derivative-free engine of :mod:`bvdual.search`.  No conjugates, no
martingale/compensator splitting, no summation by parts; agreement with the
closed forms is therefore evidence, not tautology.

Flagged instants add one extra primal coefficient per covering atom: the
value the path holds on a vanishing straddle around the instant, charged only
through the domain of the running integrand.  That coefficient is the
discrete remnant of paths that dodge concentrated dual mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from bvdual.bolza import BolzaInstance
from bvdual.convex import INF, SeparableConvexFn
from bvdual.grid import BVPath, DetInstance, DualFunction, pointwise_infimum_value
from bvdual.search import SearchResult, TermObjective, default_starts, golden_max, refined_maximize
from bvdual.tree import TreeDual, TreePath

__all__ = [
    "OracleValue",
    "dual_value_search_det",
    "dual_value_search",
    "InterchangeReport",
    "interchange_report_det",
    "interchange_report",
]

DIVERGENCE_THRESHOLD = 1e12


@dataclass
class OracleValue:
    """Certified search value; +inf values carry the certifying ray."""

    value: float
    diverged: bool = False
    ray: str = ""
    evaluations: int = 0


# ---------------------------------------------------------------------------
# conjugate oracles


def _finish(res: SearchResult, names: list[str]) -> OracleValue:
    if res.diverged:
        j, sign = res.ray if res.ray is not None else (0, 1.0)
        arrow = "+" if sign > 0 else "-"
        return OracleValue(INF, True, f"{names[j]} -> {arrow}inf", res.evaluations)
    return OracleValue(res.value, False, "", res.evaluations)


def dual_value_search_det(
    inst: DetInstance,
    v: DualFunction,
    *,
    seed: int = 0,
    tol: float = 1e-6,
    n_random_starts: int = 4,
) -> OracleValue:
    """Maximize <v, x> - cost(x) over path coefficients on a grid instance."""
    n, d = inst.grid.n_cells, inst.dim
    names: list[str] = []
    boxes: list[tuple[float, float]] = []
    idx_x0 = []
    for i in range(d):
        idx_x0.append(len(boxes))
        names.append(f"x0[{i}]")
        boxes.append(inst.k0.components[i].domain())
    idx_s = np.zeros((n + 1, d), dtype=int)
    for k in range(n + 1):
        fam = inst.h[k] if k < n else inst.kT
        for i in range(d):
            idx_s[k, i] = len(boxes)
            names.append(f"s{k}[{i}]")
            boxes.append(fam.components[i].domain())
    straddles = []  # (grid index j, coord i, var index)
    flag_idx = [k for k in range(1, n + 1) if inst.grid.times[k] in set(inst.flagged)]
    for j in flag_idx:
        for i in range(d):
            straddles.append((j, i, len(boxes)))
            names.append(f"excursion@t{j}[{i}]")
            boxes.append(inst.h[j - 1].components[i].domain())

    vm, vv, w = v.vminus, v.values, inst.mu.weights

    def build() -> TermObjective:
        obj = TermObjective(boxes)
        for i in range(d):
            obj.add_term([idx_x0[i]], lambda x, c=float(vm[i]): c * x)
            obj.add_term(
                [idx_x0[i]], lambda x, f=inst.k0.components[i]: -f.value(x)
            )
        for k in range(n + 1):
            for i in range(d):
                prev = idx_x0[i] if k == 0 else idx_s[k - 1, i]
                obj.add_term(
                    [int(idx_s[k, i]), int(prev)],
                    lambda s, p, c=float(vv[k, i]): c * (s - p),
                )
        for k in range(n):
            for i in range(d):
                obj.add_term(
                    [int(idx_s[k, i])],
                    lambda s, f=inst.h[k].components[i], wk=float(w[k]): -wk * f.value(s),
                )
        for i in range(d):
            obj.add_term(
                [int(idx_s[n, i])], lambda s, f=inst.kT.components[i]: -f.value(s)
            )
        for j, i, xi in straddles:
            # arrive just before the flagged instant, depart at it
            obj.add_term(
                [int(xi), int(idx_s[j - 1, i])],
                lambda q, s, a=float(vv[j - 1, i]), b=float(vv[j, i]): a * (q - s) + b * (s - q),
            )
        return obj

    extra = []
    if inst.witness is not None:
        z = np.zeros(len(boxes))
        z[idx_x0] = inst.witness.x0
        for k in range(n + 1):
            z[idx_s[k]] = inst.witness.running(k)
        for j, i, xi in straddles:
            z[xi] = inst.witness.running(j - 1)[i]
        extra.append(z)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    starts = default_starts(boxes, rng, n_random=n_random_starts, extra=extra)
    res = refined_maximize(build, starts, tol=tol, div_threshold=DIVERGENCE_THRESHOLD)
    return _finish(res, names)


def dual_value_search(
    inst: BolzaInstance,
    v: TreeDual,
    *,
    seed: int = 0,
    tol: float = 1e-6,
    n_random_starts: int = 4,
    fix_initial: bool = False,
) -> OracleValue:
    """Maximize <x, v> - cost(x) over adapted path coefficients.

    The pairing is evaluated directly from the raw dual samples against the
    path's jumps (plus straddle excursions at flagged instants); the
    conditional averaging that the closed form performs analytically happens
    here only through the probability-weighted sums.
    """
    tree = inst.tree
    d = inst.dim
    flagged = inst.flagged_depths()
    names: list[str] = []
    boxes: list[tuple[float, float]] = []

    idx_init = {}
    for r in tree.roots:
        for i in range(d):
            idx_init[(r, i)] = len(boxes)
            names.append(f"x0@atom{r}[{i}]")
            boxes.append((0.0, 0.0) if fix_initial else inst.k0[r].components[i].domain())
    idx_cell = {}
    for nnode in inst.cell_nodes:
        for i in range(d):
            idx_cell[(nnode, i)] = len(boxes)
            names.append(f"cell@node{nnode}[{i}]")
            boxes.append(inst.h[nnode].components[i].domain())
    idx_term = {}
    for leaf in tree.leaves:
        for i in range(d):
            idx_term[(leaf, i)] = len(boxes)
            names.append(f"xT@leaf{leaf}[{i}]")
            boxes.append(inst.kT[leaf].components[i].domain())
    idx_str = {}
    for nnode in inst.cell_nodes:
        if tree.depth[nnode] + 1 in flagged:
            for i in range(d):
                idx_str[(nnode, i)] = len(boxes)
                names.append(f"excursion@node{nnode}[{i}]")
                boxes.append(inst.h[nnode].components[i].domain())

    vproc = v.process.values
    vm = v.vminus

    def value_slot(nnode: int, i: int) -> int:
        if tree.depth[nnode] == tree.n_periods:
            return idx_term[(nnode, i)]
        return idx_cell[(nnode, i)]

    def build() -> TermObjective:
        obj = TermObjective(boxes)
        for r in tree.roots:
            p = float(tree.prob[r])
            for i in range(d):
                obj.add_term([idx_init[(r, i)]], lambda x, c=p * float(vm[r, i]): c * x)
                obj.add_term(
                    [idx_init[(r, i)]],
                    lambda x, f=inst.k0[r].components[i], p=p: -p * f.value(x),
                )
        for nnode in range(tree.n_nodes):
            p = float(tree.prob[nnode])
            for i in range(d):
                cur = value_slot(nnode, i)
                prev = (
                    idx_init[(nnode, i)]
                    if tree.depth[nnode] == 0
                    else idx_cell[(tree.parent[nnode], i)]
                )
                obj.add_term(
                    [cur, prev], lambda s, q, c=p * float(vproc[nnode, i]): c * (s - q)
                )
        for nnode in inst.cell_nodes:
            p = float(tree.prob[nnode])
            wn = float(inst.mu.w[nnode])
            for i in range(d):
                obj.add_term(
                    [idx_cell[(nnode, i)]],
                    lambda s, f=inst.h[nnode].components[i], c=p * wn: -c * f.value(s),
                )
        for leaf in tree.leaves:
            p = float(tree.prob[leaf])
            for i in range(d):
                obj.add_term(
                    [idx_term[(leaf, i)]],
                    lambda s, f=inst.kT[leaf].components[i], p=p: -p * f.value(s),
                )
        for (nnode, i), xi in idx_str.items():
            for c in tree.children[nnode]:
                pc = float(tree.prob[c])
                obj.add_term(
                    [xi, idx_cell[(nnode, i)]],
                    lambda q, s, a=pc * float(vproc[nnode, i]), b=pc * float(vproc[c, i]): a
                    * (q - s)
                    + b * (s - q),
                )
        return obj

    extra = []
    if inst.witness is not None:
        z = np.zeros(len(boxes))
        for (r, i), j in idx_init.items():
            z[j] = 0.0 if fix_initial else inst.witness.initial[r, i]
        for (nnode, i), j in idx_cell.items():
            z[j] = inst.witness.cells[nnode, i]
        for (leaf, i), j in idx_term.items():
            z[j] = inst.witness.terminal[leaf, i]
        for (nnode, i), j in idx_str.items():
            z[j] = inst.witness.cells[nnode, i]
        extra.append(z)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    starts = default_starts(boxes, rng, n_random=n_random_starts, extra=extra)
    res = refined_maximize(build, starts, tol=tol, div_threshold=DIVERGENCE_THRESHOLD)
    return _finish(res, names)


# ---------------------------------------------------------------------------
# interchange of minimization and integration


@dataclass
class InterchangeReport:
    """LHS(B) over a budget ladder next to the pointwise-infimum RHS."""

    budgets: list[float]
    lhs: list[float]
    rhs: float
    infeasible: list[bool]

    @property
    def monotone(self) -> bool:
        pairs = zip(self.lhs, self.lhs[1:])
        return all(b <= a + 1e-12 for a, b in pairs)

    @property
    def final_gap(self) -> float:
        return self.lhs[-1] - self.rhs if math.isfinite(self.lhs[-1]) else INF

    def converged(self, tol: float = 1e-6) -> bool:
        return self.final_gap <= tol


class _TVChain:
    """Budgeted total-variation minimization over chained cell values.

    ``links`` lists (a, b) variable-block pairs whose Euclidean distance is
    charged to every scenario containing the link; the budget applies per
    scenario.  Coordinate steps stay feasible by construction: the feasible
    interval of one coordinate is found by bisection on the convex
    worst-scenario variation.
    """

    def __init__(
        self,
        blocks: list[list[tuple[float, float]]],  # per block: per-coord boxes
        costs: list[list[Callable[[float], float]]],  # per block/coord 1D cost
        scenario_links: list[list[tuple[int, int]]],  # per scenario: block index pairs
        budget: float,
    ):
        self.boxes = blocks
        self.costs = costs
        self.links = scenario_links
        self.budget = budget
        self.d = len(blocks[0])
        self.touching: list[list[int]] = [[] for _ in range(len(blocks))]
        for si, chain in enumerate(scenario_links):
            for a, b in chain:
                if si not in self.touching[a]:
                    self.touching[a].append(si)
                if si not in self.touching[b]:
                    self.touching[b].append(si)

    def chain_tv(self, z: np.ndarray, scenario: int) -> float:
        return float(
            sum(np.linalg.norm(z[a] - z[b]) for a, b in self.links[scenario])
        )

    def feasible(self, z: np.ndarray, tol: float = 1e-9) -> bool:
        return all(self.chain_tv(z, s) <= self.budget + tol for s in range(len(self.links)))

    def cost(self, z: np.ndarray) -> float:
        total = 0.0
        for bi, per_coord in enumerate(self.costs):
            for i, fn in enumerate(per_coord):
                val = fn(float(z[bi, i]))
                if val == INF:
                    return INF
                total += val
        return total

    def _coord_interval(self, z: np.ndarray, bi: int, i: int) -> tuple[float, float]:
        """Feasible range of one coordinate given the rest of the point.

        The worst-scenario variation is convex in the coordinate, so its
        budget sublevel set is an interval; each side is located by doubling
        steps followed by bisection.
        """
        lo_box, hi_box = self.boxes[bi][i]
        if not self.touching[bi]:
            return lo_box, hi_box
        base = float(z[bi, i])

        def worst(u: float) -> float:
            old = z[bi, i]
            z[bi, i] = u
            try:
                return max(self.chain_tv(z, s) for s in self.touching[bi])
            finally:
                z[bi, i] = old

        if worst(base) > self.budget + 1e-9:
            return base, base

        def boundary(side: float) -> float:
            edge = hi_box if side > 0 else lo_box
            pos, step = base, 1.0
            while (pos - edge) * side < 0.0:
                cand = min(edge, pos + step) if side > 0 else max(edge, pos - step)
                if worst(cand) <= self.budget:
                    pos = cand
                    step *= 2.0
                else:
                    good, bad = pos, cand
                    for _ in range(50):
                        mid = 0.5 * (good + bad)
                        if worst(mid) <= self.budget:
                            good = mid
                        else:
                            bad = mid
                    return good
            return pos

        return boundary(-1.0), boundary(+1.0)

    def minimize(self, z0: np.ndarray, *, xtol: float = 1e-10, max_sweeps: int = 60) -> tuple[float, np.ndarray]:
        z = np.array(z0, dtype=float)
        best = self.cost(z)
        if best == INF:
            return INF, z
        for _ in range(max_sweeps):
            improved = False
            for bi in range(len(self.boxes)):
                for i in range(self.d):
                    lo, hi = self._coord_interval(z, bi, i)
                    fn = self.costs[bi][i]
                    other = best - fn(float(z[bi, i]))
                    x, neg = golden_max(lambda u: -fn(u), lo, hi, xtol)
                    if other + (-neg) < best - 1e-13 * (1.0 + abs(best)):
                        z[bi, i] = x
                        best = self.cost(z)
                        improved = True
            # pairwise diagonal moves unstick budget-saturated corners
            n_blocks = len(self.boxes)
            for a in range(n_blocks):
                for b in range(a + 1, n_blocks):
                    for i in range(self.d):
                        improved |= self._pair_move(z, a, b, i, +1.0, xtol)
                        improved |= self._pair_move(z, a, b, i, -1.0, xtol)
            best = self.cost(z)
            if not improved:
                break
        return best, z

    def _pair_move(self, z: np.ndarray, a: int, b: int, i: int, sign: float, xtol: float) -> bool:
        direction = np.zeros_like(z)
        direction[a, i] = 1.0
        direction[b, i] = sign

        def ok(t: float) -> bool:
            zz = z + t * direction
            for bi in (a, b):
                lo_box, hi_box = self.boxes[bi][i]
                if zz[bi, i] < lo_box or zz[bi, i] > hi_box:
                    return False
            # rounding slack: opposite moves cancel only to machine precision
            return self.feasible(zz, tol=1e-11 * (1.0 + self.budget))

        def boundary(side: float) -> float:
            step = 1.0
            while step > 1e-12 and not ok(side * step):
                step /= 2.0
            if step <= 1e-12:
                return 0.0
            t = side * step
            while abs(t) < 1e6 and ok(t + side * step):
                t += side * step
                step *= 2.0
            good, bad = t, t + side * step
            for _ in range(45):
                mid = 0.5 * (good + bad)
                if ok(mid):
                    good = mid
                else:
                    bad = mid
            return good

        t_hi = boundary(+1.0)
        t_lo = boundary(-1.0)

        def line_cost(t: float) -> float:
            zz = z + t * direction
            return self.cost(zz)

        before = self.cost(z)
        t, neg = golden_max(lambda t: -line_cost(t), t_lo, t_hi, xtol)
        if -neg < before - 1e-13 * (1.0 + abs(before)) and ok(t):
            z += t * direction
            return True
        return False


def _feasibility_floor(
    block_boxes: list[list[tuple[float, float]]],
    scenario_links: list[list[tuple[int, int]]],
) -> float:
    """Lower bound on any feasible chain variation from domain-box gaps."""
    worst = 0.0
    d = len(block_boxes[0])
    for chain in scenario_links:
        for i in range(d):
            need = 0.0
            for a, b in chain:
                lo_a, hi_a = block_boxes[a][i]
                lo_b, hi_b = block_boxes[b][i]
                gap = max(lo_b - hi_a, lo_a - hi_b, 0.0)
                need += gap
            worst = max(worst, need)
    return worst


def _constant_start(
    block_boxes: list[list[tuple[float, float]]],
    costs: list[list[Callable[[float], float]]],
) -> np.ndarray | None:
    """Best constant value per coordinate, when the domains intersect."""
    n_blocks, d = len(block_boxes), len(block_boxes[0])
    out = np.zeros((n_blocks, d))
    for i in range(d):
        lo = max(b[i][0] for b in block_boxes)
        hi = min(b[i][1] for b in block_boxes)
        if lo > hi:
            return None
        lo = max(lo, -1e6)
        hi = min(hi, 1e6)

        def total(u: float) -> float:
            return sum(costs[bi][i](u) for bi in range(n_blocks))

        x, _ = golden_max(lambda u: -total(u), lo, hi, 1e-10)
        out[:, i] = x
    return out


def _min_tv_start(
    block_boxes: list[list[tuple[float, float]]],
    order: list[list[int]],
) -> np.ndarray:
    """Feasible path of (chainwise) minimal total variation through the boxes.

    Forward reach intervals followed by a backward clamp give the classic
    minimal-movement path per coordinate; on trees, blocks shared between
    chains keep their first assignment and later chains clamp from there.
    """
    n_blocks, d = len(block_boxes), len(block_boxes[0])
    out = np.zeros((n_blocks, d))
    assigned = [False] * n_blocks
    for chain in order:
        for i in range(d):
            fresh = [bi for bi in chain if not assigned[bi]]
            if not fresh:
                continue
            prefix = [bi for bi in chain if assigned[bi]]
            reach: list[tuple[float, float]] = []
            if prefix:
                v = out[prefix[-1], i]
                cur = (v, v)
            else:
                cur = block_boxes[fresh[0]][i]
                reach.append(cur)
            for bi in fresh[0 if prefix else 1 :]:
                lo, hi = block_boxes[bi][i]
                a, b = max(cur[0], lo), min(cur[1], hi)
                if a <= b:
                    cur = (a, b)
                elif hi < cur[0]:
                    cur = (hi, hi)
                else:
                    cur = (lo, lo)
                reach.append(cur)
            # backward clamp to concrete positions
            a, b = reach[-1]
            if a == -INF and b == INF:
                pos = 0.0
            elif a == -INF:
                pos = min(b, 0.0)
            elif b == INF:
                pos = max(a, 0.0)
            else:
                pos = 0.5 * (a + b)
            for bi, (a, b) in zip(reversed(fresh), reversed(reach)):
                pos = min(max(pos, a), b)
                out[bi, i] = pos
        for bi in chain:
            assigned[bi] = True
    return out


def _clamp_start(
    block_boxes: list[list[tuple[float, float]]],
    costs: list[list[Callable[[float], float]]],
    order: list[list[int]],
) -> np.ndarray:
    """Greedy pass: per-block 1D minimizers clamped toward the predecessor."""
    n_blocks, d = len(block_boxes), len(block_boxes[0])
    out = np.zeros((n_blocks, d))
    done = [False] * n_blocks
    for chain in order:
        prev: int | None = None
        for bi in chain:
            if not done[bi]:
                for i in range(d):
                    lo, hi = block_boxes[bi][i]
                    if prev is None:
                        x, _ = golden_max(
                            lambda u: -costs[bi][i](u), max(lo, -1e6), min(hi, 1e6), 1e-9
                        )
                    else:
                        x = min(max(out[prev, i], lo), hi)
                    out[bi, i] = x
                done[bi] = True
            prev = bi
    return out


def _run_interchange(
    block_boxes: list[list[tuple[float, float]]],
    costs: list[list[Callable[[float], float]]],
    scenario_links: list[list[tuple[int, int]]],
    chains: list[list[int]],
    budgets: Sequence[float],
    rhs: float,
    extra_starts: list[np.ndarray],
    seed: int,
) -> InterchangeReport:
    floor = _feasibility_floor(block_boxes, scenario_links)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lhs: list[float] = []
    infeasible: list[bool] = []
    warm: np.ndarray | None = None
    const = _constant_start(block_boxes, costs)
    clamp = _clamp_start(block_boxes, costs, chains)
    mintv = _min_tv_start(block_boxes, chains)
    for budget in budgets:
        if budget < floor - 1e-12:
            lhs.append(INF)
            infeasible.append(True)
            continue
        problem = _TVChain(block_boxes, costs, scenario_links, float(budget))
        starts: list[np.ndarray] = []
        if warm is not None:
            starts.append(warm)
        for cand in ([const] if const is not None else []) + [clamp, mintv] + extra_starts:
            starts.append(np.array(cand))
        for _ in range(2):
            z = np.array(clamp) + rng.normal(scale=0.25, size=np.shape(clamp))
            for bi in range(len(block_boxes)):
                for i in range(len(block_boxes[0])):
                    lo, hi = block_boxes[bi][i]
                    z[bi, i] = min(max(z[bi, i], lo), hi)
            starts.append(z)
        best, best_z = INF, None
        for z0 in starts:
            if not problem.feasible(z0):
                continue
            val, z = problem.minimize(z0)
            if val < best:
                best, best_z = val, z
        lhs.append(best)
        infeasible.append(best == INF)
        if best_z is not None:
            warm = best_z
    return InterchangeReport(list(map(float, budgets)), lhs, rhs, infeasible)


def interchange_report_det(
    inst: DetInstance, budgets: Sequence[float], *, seed: int = 0
) -> InterchangeReport:
    """Budgeted minimization of the running cost on a grid instance.

    The endpoint slots are free (and cost nothing here), so the variation
    budget binds only on moves between consecutive cell values.
    """
    if inst.witness is None:
        raise ValueError("interchange needs a validated interior witness")
    n, d = inst.grid.n_cells, inst.dim
    block_boxes = [[inst.h[k].components[i].domain() for i in range(d)] for k in range(n)]
    costs = [
        [
            (lambda u, f=inst.h[k].components[i], w=float(inst.mu.weights[k]): w * f.value(u))
            for i in range(d)
        ]
        for k in range(n)
    ]
    links = [[(k, k + 1) for k in range(n - 1)]]
    chains = [list(range(n))]
    witness_cells = np.array([inst.witness.running(k) for k in range(n)])
    rhs = pointwise_infimum_value(inst)
    return _run_interchange(
        block_boxes, costs, links, chains, budgets, rhs, [witness_cells], seed
    )


def interchange_report(
    inst: BolzaInstance, budgets: Sequence[float], *, seed: int = 0
) -> InterchangeReport:
    """Budgeted minimization of the expected running cost on a tree.

    One block per cell node; the variation budget binds pathwise, scenario by
    scenario, on moves between a node's cell value and its children's.
    """
    if inst.witness is None:
        raise ValueError("interchange needs a validated interior witness")
    tree = inst.tree
    d = inst.dim
    cell_nodes = inst.cell_nodes
    block_of = {nnode: bi for bi, nnode in enumerate(cell_nodes)}
    block_boxes = [
        [inst.h[nnode].components[i].domain() for i in range(d)] for nnode in cell_nodes
    ]
    costs = [
        [
            (
                lambda u, f=inst.h[nnode].components[i], c=float(tree.prob[nnode])
                * float(inst.mu.w[nnode]): c * f.value(u)
            )
            for i in range(d)
        ]
        for nnode in cell_nodes
    ]
    links = []
    chains = []
    for path in tree.paths:
        chain = [block_of[nnode] for nnode in path[:-1]]
        links.append([(a, b) for a, b in zip(chain, chain[1:])])
        chains.append(chain)
    rhs = 0.0
    for nnode in cell_nodes:
        val, _ = inst.h[nnode].inf()
        if val == -INF:
            rhs = -INF
            break
        rhs += float(tree.prob[nnode]) * float(inst.mu.w[nnode]) * val
    witness_cells = np.array([inst.witness.cells[nnode] for nnode in cell_nodes])
    return _run_interchange(
        block_boxes, costs, links, chains, budgets, rhs, [witness_cells], seed
    )
