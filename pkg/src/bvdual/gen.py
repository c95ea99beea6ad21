"""Seeded generators for random functions, trees, processes and instances.

Everything is driven by a ``numpy.random.Generator``, so suites are
reproducible from a single integer seed.  Convex functions are built by
integrating a nondecreasing piecewise-linear derivative, which makes the
convexity and continuity invariants hold by construction rather than by
rejection.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from bvdual.bolza import BolzaInstance
from bvdual.convex import (
    INF,
    PLQConvexFn,
    SeparableConvexFn,
    indicator,
    linear,
    separable,
    subdifferential,
)
from bvdual.grid import BVPath, DetInstance, DualFunction, ReferenceMeasure, TimeGrid
from bvdual.quasimartingale import compensator_increments
from bvdual.tree import AdaptedProcess, RandomWeights, RawProcess, ScenarioTree, TreeDual, TreePath

__all__ = [
    "random_plq",
    "boundary_min_plq",
    "clip_domain",
    "random_separable",
    "random_tree",
    "random_adapted",
    "random_raw",
    "random_tree_path",
    "random_dual",
    "random_det_instance",
    "random_bolza_instance",
    "optimal_pair",
    "det_optimal_pair",
]


def random_plq(
    rng: np.random.Generator,
    *,
    max_breaks: int = 3,
    kind: str | None = None,
    coercive: bool = False,
    ensure_kink: bool = False,
    span: float = 2.5,
) -> PLQConvexFn:
    """Random closed proper convex piecewise linear-quadratic function.

    ``kind`` forces the domain shape ('full', 'left', 'right', 'bounded');
    ``coercive`` forces superlinear growth in every unbounded direction;
    ``ensure_kink`` redraws until the function has a genuine kink or a curved
    piece, so subgradients interior to the conjugate's domain exist.
    """
    if ensure_kink:
        for _ in range(50):
            f = random_plq(rng, max_breaks=max_breaks, kind=kind, coercive=coercive, span=span)
            if _has_interior_slope(f):
                return f
        raise RuntimeError("could not draw a function with an interior slope")
    if kind is None:
        kind = rng.choice(["full", "left", "right", "bounded"], p=[0.4, 0.15, 0.15, 0.3])
    lo, hi = -INF, INF
    if kind in ("left", "bounded"):  # 'left' means bounded on the left
        lo = float(rng.uniform(-span, span - 1.0))
    if kind in ("right", "bounded"):
        hi = float(rng.uniform((lo if math.isfinite(lo) else -span) + 0.6, span + 1.0))
    inner_lo = lo if math.isfinite(lo) else -span
    inner_hi = hi if math.isfinite(hi) else span
    m = int(rng.integers(0, max_breaks + 1))
    bps: list[float] = []
    for b in sorted(rng.uniform(inner_lo + 0.05, inner_hi - 0.05, size=m)):
        if not bps or b - bps[-1] > 0.08:
            bps.append(float(b))
    curvs = [0.0 if rng.uniform() < 0.35 else float(rng.uniform(0.1, 1.2)) for _ in range(len(bps) + 1)]
    if coercive:
        if not math.isfinite(lo) and curvs[0] == 0.0:
            curvs[0] = float(rng.uniform(0.2, 1.2))
        if not math.isfinite(hi) and curvs[-1] == 0.0:
            curvs[-1] = float(rng.uniform(0.2, 1.2))
    edges = [lo, *bps, hi]
    ref = lo if math.isfinite(lo) else (bps[0] if bps else 0.0)
    d_ref = float(rng.uniform(-1.5, 1.5))
    val_ref = float(rng.uniform(-1.0, 1.0))
    pieces: list[tuple[float, float, float]] = []
    a0 = curvs[0]
    b0 = d_ref - 2.0 * a0 * ref
    c0 = val_ref - (a0 * ref + b0) * ref
    pieces.append((a0, b0, c0))
    for i, beta in enumerate(bps):
        a_prev, b_prev, c_prev = pieces[i]
        left_slope = 2.0 * a_prev * beta + b_prev
        left_val = (a_prev * beta + b_prev) * beta + c_prev
        jump = 0.0 if rng.uniform() < 0.5 else float(rng.uniform(0.0, 1.2))
        a_i = curvs[i + 1]
        b_i = left_slope + jump - 2.0 * a_i * beta
        c_i = left_val - (a_i * beta + b_i) * beta
        pieces.append((a_i, b_i, c_i))
    return PLQConvexFn(tuple(bps), tuple(pieces), lo, hi)


def _has_interior_slope(f: PLQConvexFn) -> bool:
    """Whether some subgradient lies strictly inside the conjugate's domain.

    True when the function has a curved piece on a nondegenerate interval or
    a breakpoint with a positive slope jump; bounded domains qualify too,
    since their conjugates are finite everywhere.
    """
    lo, hi = f.domain()
    if math.isfinite(lo) and math.isfinite(hi):
        return True
    edges = f.edges()
    for i, (a, _, _) in enumerate(f.pieces):
        if a > 0.0 and edges[i] < edges[i + 1]:
            return True
    for i, beta in enumerate(f.breakpoints):
        a0, b0, _ = f.pieces[i]
        a1, b1, _ = f.pieces[i + 1]
        if (2.0 * a1 * beta + b1) - (2.0 * a0 * beta + b0) > 0.0:
            return True
    return False


def anchor_and_slope(f: PLQConvexFn, rng: np.random.Generator) -> tuple[float, float]:
    """Pick a point and one of its subgradients well inside the conjugate's
    domain, so that one-ulp noise cannot push conjugate evaluations to +inf.

    Falls back to an arbitrary finite subgradient when the function has no
    interior slope (affine pieces only on an unbounded domain)."""
    lo, hi = f.domain()
    bounded = math.isfinite(lo) and math.isfinite(hi)
    edges = f.edges()
    candidates: list[tuple[float, float]] = []
    for i, (a, b, _) in enumerate(f.pieces):
        left = edges[i] if math.isfinite(edges[i]) else edges[i + 1] - 2.0
        right = edges[i + 1] if math.isfinite(edges[i + 1]) else edges[i] + 2.0
        if not math.isfinite(left):
            left, right = -1.0, 1.0
        if (a > 0.0 or bounded) and right > left:
            s = float(left + (0.25 + 0.5 * rng.uniform()) * (right - left))
            candidates.append((s, 2.0 * a * s + b))
    for i, beta in enumerate(f.breakpoints):
        a0, b0, _ = f.pieces[i]
        a1, b1, _ = f.pieces[i + 1]
        s_lo = 2.0 * a0 * beta + b0
        s_hi = 2.0 * a1 * beta + b1
        if s_hi > s_lo:
            g = float(s_lo + (0.25 + 0.5 * rng.uniform()) * (s_hi - s_lo))
            candidates.append((beta, g))
    if candidates:
        return candidates[int(rng.integers(0, len(candidates)))]
    anchor = _interior_anchor(f, 0.0)
    return anchor, _finite_subgradient(f, anchor, rng)


def boundary_min_plq(rng: np.random.Generator) -> tuple[PLQConvexFn, float]:
    """Component minimized on a flat stretch ending at its right endpoint.

    Returns the function and the endpoint, where the zero slope belongs to
    the subdifferential and the outward normal direction is +1; used to seed
    instances whose optimal pairs carry singular dual mass.
    """
    hi = float(rng.uniform(0.3, 1.5))
    knee = hi - float(rng.uniform(0.3, 0.8))
    lo = knee - float(rng.uniform(0.5, 1.5))
    slope = -float(rng.uniform(0.3, 1.5))
    level = float(rng.uniform(-0.5, 0.5))
    dec = (0.0, slope, level - slope * knee)
    flat = (0.0, 0.0, level)
    return PLQConvexFn((knee,), (dec, flat), lo, hi), hi


def clip_domain(f: PLQConvexFn, lo: float, hi: float) -> PLQConvexFn:
    """Restrict f to [lo, hi] inside its domain (a pointwise majorant of f)."""
    lo = max(lo, f.lo)
    hi = min(hi, f.hi)
    if lo > hi:
        raise ValueError("empty restriction")
    edges = f.edges()
    keep = [i for i, beta in enumerate(f.breakpoints) if lo < beta < hi]
    bps = tuple(f.breakpoints[i] for i in keep)
    first = f._piece_index(lo) if lo > f.lo else 0
    pieces = []
    idx = first
    pieces.append(f.pieces[idx])
    for i in keep:
        pieces.append(f.pieces[i + 1])
    if lo == hi:
        return PLQConvexFn((), (pieces[0],), lo, hi)
    return PLQConvexFn(bps, tuple(pieces), lo, hi)


def random_separable(rng: np.random.Generator, d: int, **kw) -> SeparableConvexFn:
    return separable(*(random_plq(rng, **kw) for _ in range(d)))


def random_tree(
    rng: np.random.Generator, periods: int, max_branching: int = 3
) -> ScenarioTree:
    """Random tree with exact rational probabilities and varying branching."""
    records: list[tuple[int, int | None, int, Fraction]] = [(0, None, 0, Fraction(1))]
    frontier = [0]
    next_id = 1
    for depth in range(1, periods + 1):
        new_frontier = []
        for par in frontier:
            b = int(rng.integers(1, max_branching + 1))
            weights = [int(rng.integers(1, 5)) for _ in range(b)]
            total = sum(weights)
            for wgt in weights:
                records.append((next_id, par, depth, records[par][3] * Fraction(wgt, total)))
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return ScenarioTree(records)


def random_adapted(rng: np.random.Generator, tree: ScenarioTree, d: int = 1, scale: float = 1.0) -> AdaptedProcess:
    return AdaptedProcess(tree, rng.normal(scale=scale, size=(tree.n_nodes, d)))


def random_raw(rng: np.random.Generator, tree: ScenarioTree, d: int = 1, scale: float = 1.0) -> RawProcess:
    return RawProcess(tree, rng.normal(scale=scale, size=(tree.n_leaves, tree.n_periods + 1, d)))


def random_tree_path(rng: np.random.Generator, tree: ScenarioTree, d: int = 1, scale: float = 1.0) -> TreePath:
    return TreePath(
        tree,
        rng.normal(scale=scale, size=(tree.n_nodes, d)),
        rng.normal(scale=scale, size=(tree.n_nodes, d)),
        rng.normal(scale=scale, size=(tree.n_nodes, d)),
    )


def random_dual(rng: np.random.Generator, tree: ScenarioTree, d: int = 1, scale: float = 1.0) -> TreeDual:
    return TreeDual(
        tree,
        rng.normal(scale=scale, size=(tree.n_nodes, d)),
        AdaptedProcess(tree, rng.normal(scale=scale, size=(tree.n_nodes, d))),
    )


# ---------------------------------------------------------------------------
# instances


def _interior_anchor(f: PLQConvexFn, radius: float) -> float:
    """A point whose radius-ball stays inside the domain."""
    lo, hi = f.domain()
    _, arg = f.inf()
    anchor = arg if arg is not None else 0.0
    lo_ok = lo + radius if math.isfinite(lo) else -1e6
    hi_ok = hi - radius if math.isfinite(hi) else 1e6
    if lo_ok > hi_ok:
        raise ValueError("domain too small for the requested radius")
    return float(min(max(anchor, lo_ok), hi_ok))


def _ball_max(f: PLQConvexFn, center: float, radius: float) -> float:
    lo, hi = f.domain()
    a = min(max(center - radius, lo), hi)
    b = min(max(center + radius, lo), hi)
    return max(f.value(a), f.value(b))


def _finite_subgradient(f: PLQConvexFn, x: float, rng: np.random.Generator) -> float:
    lo, hi = subdifferential(f, x).interval()
    if math.isfinite(lo) and math.isfinite(hi):
        return float(lo + (hi - lo) * rng.uniform()) if hi > lo else float(lo)
    if math.isfinite(lo):
        return float(lo)
    if math.isfinite(hi):
        return float(hi)
    return 0.0


def _witness_radius(fns: list[SeparableConvexFn]) -> float:
    r = 0.2
    for f in fns:
        for c in f.components:
            lo, hi = c.domain()
            width = hi - lo
            if math.isfinite(width):
                r = min(r, 0.25 * width)
    return max(r, 1e-3)


def _component_for_shape(rng: np.random.Generator, shape: str) -> PLQConvexFn:
    if shape == "finite":
        return random_plq(rng, kind="full", ensure_kink=True)
    if shape == "indicator":
        lo = float(rng.uniform(-2.0, 0.5))
        return indicator(lo, lo + float(rng.uniform(0.8, 2.0)))
    if shape == "zero":
        return linear(0.0)
    if shape == "coercive":
        return random_plq(rng, coercive=True, ensure_kink=True)
    return random_plq(rng, ensure_kink=True)


def random_det_instance(
    rng: np.random.Generator,
    *,
    n_cells: int = 4,
    d: int = 1,
    n_flags: int = 0,
    shape: str = "general",
) -> DetInstance:
    """Random validated single-scenario instance.

    With ``n_flags > 0``, the flagged cells get components minimized at their
    right domain endpoint so that optimal pairs with singular dual mass exist.
    """
    times = tuple(float(k) / n_cells for k in range(n_cells + 1))
    grid = TimeGrid(times)
    mu = ReferenceMeasure(tuple(float(rng.uniform(0.4, 1.2)) for _ in range(n_cells)))
    flag_cells: list[int] = []
    if n_flags > 0:
        flag_cells = sorted(
            int(k) for k in rng.choice(np.arange(1, n_cells + 1), size=min(n_flags, n_cells), replace=False)
        )
    h = []
    boundary_pts: dict[int, float] = {}
    for k in range(1, n_cells + 1):
        comps = []
        for i in range(d):
            if k in flag_cells and i == 0:
                comp, pt = boundary_min_plq(rng)
                boundary_pts[k] = pt
                comps.append(comp)
            elif k in flag_cells:
                # zero density must subdifferentiate here, so the minimum
                # has to be attained
                comps.append(random_plq(rng, coercive=True))
            else:
                comps.append(_component_for_shape(rng, shape))
        h.append(separable(*comps))
    k0 = random_separable(rng, d, kind="full", ensure_kink=True)
    kT = random_separable(rng, d, kind="full", ensure_kink=True)
    radius = _witness_radius(h)
    wit_cells = np.array(
        [[_interior_anchor(h[k].components[i], radius) for i in range(d)] for k in range(n_cells)]
    )
    x0 = np.array([_interior_anchor(k0.components[i], 0.0) for i in range(d)])
    xT = np.array([_interior_anchor(kT.components[i], 0.0) for i in range(d)])
    jumps = np.zeros((n_cells + 1, d))
    jumps[0] = wit_cells[0] - x0
    for k in range(1, n_cells):
        jumps[k] = wit_cells[k] - wit_cells[k - 1]
    jumps[n_cells] = xT - wit_cells[n_cells - 1]
    witness = BVPath(x0, jumps)
    bounds = tuple(
        sum(_ball_max(h[k].components[i], wit_cells[k, i], radius) for i in range(d)) + 0.01
        for k in range(n_cells)
    )
    cert = np.array(
        [[_finite_subgradient(h[k].components[i], wit_cells[k, i], rng) for i in range(d)] for k in range(n_cells)]
    )
    alpha = 0.0
    for k in range(n_cells):
        low = sum(h[k].components[i].tilt(cert[k, i]).inf()[0] for i in range(d))
        alpha = max(alpha, -low)
    inst = DetInstance(
        grid=grid,
        mu=mu,
        h=tuple(h),
        k0=k0,
        kT=kT,
        flagged=tuple(times[k] for k in flag_cells),
        witness=witness,
        witness_radius=radius,
        witness_bound=bounds,
        cert_slopes=cert,
        cert_alpha=alpha + 0.01,
        k0_slope=np.array([_finite_subgradient(k0.components[i], x0[i], rng) for i in range(d)]),
        kT_slope=np.array([_finite_subgradient(kT.components[i], xT[i], rng) for i in range(d)]),
    )
    inst.validate()
    inst._boundary_points = boundary_pts  # used by det_optimal_pair
    return inst


def random_bolza_instance(
    rng: np.random.Generator,
    *,
    periods: int = 2,
    max_branching: int = 3,
    d: int = 1,
    n_flags: int = 0,
    shape: str = "general",
    tree: ScenarioTree | None = None,
) -> BolzaInstance:
    """Random validated tree instance; see :func:`random_det_instance`."""
    tree = tree if tree is not None else random_tree(rng, periods, max_branching)
    n = tree.n_periods
    grid = TimeGrid(tuple(float(k) / n for k in range(n + 1)))
    w = np.ones(tree.n_nodes)
    for node in range(tree.n_nodes):
        if tree.depth[node] < n:
            w[node] = float(rng.uniform(0.4, 1.2))
    mu = RandomWeights(tree, w)
    flag_depths: list[int] = []
    if n_flags > 0:
        flag_depths = sorted(
            int(k) for k in rng.choice(np.arange(1, n + 1), size=min(n_flags, n), replace=False)
        )
    h: dict[int, SeparableConvexFn] = {}
    boundary_pts: dict[int, float] = {}
    cell_nodes = [node for node in range(tree.n_nodes) if tree.depth[node] < n]
    for node in cell_nodes:
        comps = []
        for i in range(d):
            if tree.depth[node] + 1 in flag_depths and i == 0:
                comp, pt = boundary_min_plq(rng)
                boundary_pts[node] = pt
                comps.append(comp)
            elif tree.depth[node] + 1 in flag_depths:
                comps.append(random_plq(rng, coercive=True))
            else:
                comps.append(_component_for_shape(rng, shape))
        h[node] = separable(*comps)
    k0 = {r: random_separable(rng, d, kind="full", ensure_kink=True) for r in tree.roots}
    kT = {leaf: random_separable(rng, d, kind="full", ensure_kink=True) for leaf in tree.leaves}
    radius = _witness_radius(list(h.values()))
    cells = np.zeros((tree.n_nodes, d))
    for node in cell_nodes:
        for i in range(d):
            cells[node, i] = _interior_anchor(h[node].components[i], radius)
    initial = np.zeros((tree.n_nodes, d))
    for r in tree.roots:
        for i in range(d):
            initial[r, i] = _interior_anchor(k0[r].components[i], 0.0)
    terminal = np.zeros((tree.n_nodes, d))
    for leaf in tree.leaves:
        for i in range(d):
            terminal[leaf, i] = _interior_anchor(kT[leaf].components[i], 0.0)
    witness = TreePath(tree, initial, cells, terminal)
    bounds = {
        node: sum(_ball_max(h[node].components[i], cells[node, i], radius) for i in range(d)) + 0.01
        for node in cell_nodes
    }
    cert = {
        node: np.array(
            [_finite_subgradient(h[node].components[i], cells[node, i], rng) for i in range(d)]
        )
        for node in cell_nodes
    }
    alpha = 0.0
    for node in cell_nodes:
        low = sum(h[node].components[i].tilt(float(cert[node][i])).inf()[0] for i in range(d))
        alpha = max(alpha, -low)
    inst = BolzaInstance(
        tree=tree,
        grid=grid,
        mu=mu,
        h=h,
        k0=k0,
        kT=kT,
        flagged=tuple(grid.times[k] for k in flag_depths),
        witness=witness,
        witness_radius=radius,
        witness_bound=bounds,
        cert_slopes=cert,
        cert_alpha=alpha + 0.01,
        k0_slopes={
            r: np.array([_finite_subgradient(k0[r].components[i], initial[r, i], rng) for i in range(d)])
            for r in tree.roots
        },
        kT_slopes={
            leaf: np.array(
                [_finite_subgradient(kT[leaf].components[i], terminal[leaf, i], rng) for i in range(d)]
            )
            for leaf in tree.leaves
        },
    )
    inst.validate()
    inst._boundary_points = boundary_pts
    return inst


# ---------------------------------------------------------------------------
# optimal pairs by backward construction


def optimal_pair(
    rng: np.random.Generator, inst: BolzaInstance, *, atom_scale: float = 0.7
) -> tuple[TreePath, TreeDual]:
    """Primal/dual pair satisfying the whole pointwise optimality system.

    The primal sits at interior cell anchors (or at the designated boundary
    point of flagged cells); the dual is built backward from terminal
    subgradients, shifting each node by its subgradient charge, so that every
    optimality condition holds by construction and the duality gap vanishes.
    """
    tree = inst.tree
    d = inst.dim
    flagged = inst.flagged_depths()
    boundary = getattr(inst, "_boundary_points", {})
    cells = np.zeros((tree.n_nodes, d))
    slopes = np.zeros((tree.n_nodes, d))
    for node in inst.cell_nodes:
        for i in range(d):
            fi = inst.h[node].components[i]
            if tree.depth[node] + 1 in flagged:
                # zero density must subdifferentiate at the flagged cell value
                if i == 0 and node in boundary:
                    cells[node, i] = boundary[node]
                else:
                    cells[node, i] = _interior_anchor(fi, 0.0)
                slopes[node, i] = 0.0
            else:
                cells[node, i], slopes[node, i] = anchor_and_slope(fi, rng)
    initial = np.zeros((tree.n_nodes, d))
    terminal = np.zeros((tree.n_nodes, d))
    vproc = np.zeros((tree.n_nodes, d))
    for leaf in tree.leaves:
        for i in range(d):
            fi = inst.kT[leaf].components[i]
            terminal[leaf, i] = _interior_anchor(fi, 0.0)
            vproc[leaf, i] = _finite_subgradient(fi, terminal[leaf, i], rng)
    for node in sorted(inst.cell_nodes, key=lambda m: -tree.depth[m]):
        p = float(tree.prob[node])
        exp_next = np.zeros(d)
        for c in tree.children[node]:
            exp_next += float(tree.prob[c]) * vproc[c]
        exp_next /= p
        if tree.depth[node] + 1 in flagged:
            shift = np.zeros(d)
            if node in boundary:
                shift[0] = atom_scale  # outward normal +1 at the boundary point
            vproc[node] = exp_next + shift
        else:
            vproc[node] = exp_next + slopes[node] * inst.mu.w[node]
    vminus = np.zeros((tree.n_nodes, d))
    for r in tree.roots:
        for i in range(d):
            initial[r, i], y0 = anchor_and_slope(inst.k0[r].components[i], rng)
            vminus[r, i] = vproc[r, i] + y0
    x = TreePath(tree, initial, cells, terminal)
    v = TreeDual(tree, vminus, AdaptedProcess(tree, vproc))
    return x, v


def det_optimal_pair(
    rng: np.random.Generator, inst: DetInstance, *, atom_scale: float = 0.7
) -> tuple[BVPath, DualFunction]:
    """Single-scenario version of :func:`optimal_pair`."""
    n, d = inst.grid.n_cells, inst.dim
    flags = set(inst.flagged)
    boundary = getattr(inst, "_boundary_points", {})
    cells = np.zeros((n, d))
    slopes = np.zeros((n, d))
    for k in range(n):
        for i in range(d):
            fi = inst.h[k].components[i]
            if inst.grid.times[k + 1] in flags:
                if i == 0 and (k + 1) in boundary:
                    cells[k, i] = boundary[k + 1]
                else:
                    cells[k, i] = _interior_anchor(fi, 0.0)
                slopes[k, i] = 0.0
            else:
                cells[k, i], slopes[k, i] = anchor_and_slope(fi, rng)
    xT = np.array([_interior_anchor(inst.kT.components[i], 0.0) for i in range(d)])
    values = np.zeros((n + 1, d))
    values[n] = [_finite_subgradient(inst.kT.components[i], xT[i], rng) for i in range(d)]
    for k in range(n - 1, -1, -1):
        if inst.grid.times[k + 1] in flags:
            shift = np.zeros(d)
            if (k + 1) in boundary:
                shift[0] = atom_scale
            values[k] = values[k + 1] + shift
        else:
            values[k] = values[k + 1] + slopes[k] * inst.mu.weights[k]
    x0 = np.zeros(d)
    y0 = np.zeros(d)
    for i in range(d):
        x0[i], y0[i] = anchor_and_slope(inst.k0.components[i], rng)
    vminus = values[0] + y0
    running = np.vstack([cells, xT[None, :]])
    return BVPath.from_values(x0, running), DualFunction(vminus, values)
