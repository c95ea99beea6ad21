"""Finite filtered probability spaces as scenario trees.

Nodes at depth k are the atoms of the time-t_k sigma-algebra, so a process is
adapted exactly when it is a function of the node: adaptedness is structural,
not checked pointwise.  The filtration is constant between grid times, which
fixes the discrete conventions for paths (cell values known at the cell's
left endpoint) and duals (right-continuous, sampled at grid times).

Probabilities may be exact integer ratios; filtration identities then hold
without rounding.  All expectation sums reduce in node-id order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Sequence

import numpy as np

from bvdual.convex import INF

__all__ = [
    "ScenarioTree",
    "AdaptedProcess",
    "RawProcess",
    "StoppingTime",
    "RandomWeights",
    "TreeMeasure",
    "TreePath",
    "TreeDual",
    "optional_projection",
    "predictable_projection",
    "validate_optional_weights",
    "r1_norm",
    "m_infty_norm",
    "pairing_process_measure",
    "path_dual_pairing",
    "pathwise_total_variation",
    "embedding_pairing",
    "embedding_adjoint",
    "enumerate_stopping_times",
    "enumerate_predictable_stopping_times",
]

Prob = Fraction | float


class ScenarioTree:
    """Rooted forest of filtration atoms with one depth level per grid time.

    ``records`` is a sequence of (id, parent_id_or_None, depth, probability)
    rows with ids 0..M-1.  Depth-0 nodes are the time-0 atoms; their
    probabilities sum to one, and every node's children carry exactly the
    parent's mass.
    """

    def __init__(self, records: Sequence[tuple[int, int | None, int, Prob]]):
        m = len(records)
        ids = [r[0] for r in records]
        if sorted(ids) != list(range(m)):
            raise ValueError("node ids must be 0..M-1")
        self.parent = [-1] * m
        self.depth = [0] * m
        self.prob: list[Prob] = [Fraction(0)] * m
        for nid, par, dep, p in records:
            self.parent[nid] = -1 if par is None else int(par)
            self.depth[nid] = int(dep)
            if (isinstance(p, Fraction) and p <= 0) or (not isinstance(p, Fraction) and p <= 0.0):
                raise ValueError(f"node {nid}: probability must be positive")
            self.prob[nid] = p
        self.children: list[list[int]] = [[] for _ in range(m)]
        for nid in range(m):
            par = self.parent[nid]
            if par >= 0:
                if self.depth[nid] != self.depth[par] + 1:
                    raise ValueError(f"node {nid}: depth must be parent depth + 1")
                self.children[par].append(nid)
            elif self.depth[nid] != 0:
                raise ValueError(f"node {nid}: only depth-0 nodes may lack a parent")
        self.n_nodes = m
        self.n_periods = max(self.depth)
        self.roots = [n for n in range(m) if self.parent[n] < 0]
        self.leaves = [n for n in range(m) if not self.children[n]]
        for n in self.leaves:
            if self.depth[n] != self.n_periods:
                raise ValueError(f"leaf {n} at depth {self.depth[n]}, expected {self.n_periods}")
        root_mass = sum(self.prob[r] for r in self.roots)
        if not _prob_close(root_mass, Fraction(1)):
            raise ValueError(f"time-0 masses sum to {root_mass}, expected 1")
        for n in range(m):
            if self.children[n]:
                mass = sum(self.prob[c] for c in self.children[n])
                if not _prob_close(mass, self.prob[n]):
                    raise ValueError(f"node {n}: children mass {mass} != {self.prob[n]}")
        self.p = np.array([float(q) for q in self.prob])
        # scenario = leaf; cache root->leaf node paths and leaves through a node
        self.paths: list[tuple[int, ...]] = []
        for leaf in self.leaves:
            path = [leaf]
            while self.parent[path[-1]] >= 0:
                path.append(self.parent[path[-1]])
            self.paths.append(tuple(reversed(path)))
        self.leaves_through: list[list[int]] = [[] for _ in range(m)]
        for li, path in enumerate(self.paths):
            for n in path:
                self.leaves_through[n].append(li)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def nodes_at(self, depth: int) -> list[int]:
        return [n for n in range(self.n_nodes) if self.depth[n] == depth]

    def cond_exp(self, values: np.ndarray, node: int, depth: int) -> np.ndarray:
        """E[time-``depth`` leaf values | atom of ``node``] for raw (L, d) data."""
        acc = np.zeros(values.shape[-1])
        for li in self.leaves_through[node]:
            acc += float(self.prob[self.leaves[li]]) * values[li]
        return acc / float(self.prob[node])

    @classmethod
    def from_branching(cls, branching: Sequence[int]) -> "ScenarioTree":
        """Uniform tree with the given number of children per level."""
        records: list[tuple[int, int | None, int, Prob]] = [(0, None, 0, Fraction(1))]
        frontier = [0]
        next_id = 1
        for depth, b in enumerate(branching, start=1):
            new_frontier = []
            for par in frontier:
                share = Fraction(records[par][3], b) if isinstance(records[par][3], Fraction) else records[par][3] / b
                for _ in range(b):
                    records.append((next_id, par, depth, share))
                    new_frontier.append(next_id)
                    next_id += 1
            frontier = new_frontier
        return cls(records)


def _prob_close(a: Prob, b: Prob) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= 1e-12


@dataclass
class AdaptedProcess:
    """One value per node: the process value at the node's grid time."""

    tree: ScenarioTree
    values: np.ndarray  # (n_nodes, d)

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.tree.n_nodes:
            raise ValueError("need one value row per node")

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def at(self, node: int) -> np.ndarray:
        return self.values[node]


@dataclass
class RawProcess:
    """Per-scenario time series, not necessarily adapted."""

    tree: ScenarioTree
    values: np.ndarray  # (n_leaves, n_periods + 1, d)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        self.values = v
        want = (self.tree.n_leaves, self.tree.n_periods + 1)
        if self.values.shape[:2] != want:
            raise ValueError(f"raw values shaped {self.values.shape[:2]}, expected {want}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("raw values must be finite")

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    def is_adapted(self, tol: float = 0.0) -> bool:
        for n in range(self.tree.n_nodes):
            k = self.tree.depth[n]
            rows = [self.values[li, k] for li in self.tree.leaves_through[n]]
            for r in rows[1:]:
                if np.any(np.abs(r - rows[0]) > tol):
                    return False
        return True


class StoppingTime:
    """Stop/continue decision per node; once stopped, stopped forever.

    Equivalently the antichain of first-stop nodes; scenarios missing the
    antichain never stop.
    """

    def __init__(self, tree: ScenarioTree, first_stop: Iterable[int]):
        self.tree = tree
        self.first_stop = frozenset(int(n) for n in first_stop)
        for n in self.first_stop:
            par = tree.parent[n]
            while par >= 0:
                if par in self.first_stop:
                    raise ValueError("stop set must be an antichain")
                par = tree.parent[par]
        self._stop_depth: list[int | None] = []
        for path in tree.paths:
            hit = [tree.depth[n] for n in path if n in self.first_stop]
            self._stop_depth.append(hit[0] if hit else None)

    def time_index(self, scenario: int) -> int | None:
        """First stop depth on the scenario, or None for never."""
        return self._stop_depth[scenario]

    def is_predictable(self) -> bool:
        """Announced one step ahead: stopping is decided per sibling group."""
        groups = [self.tree.roots] + [c for c in self.tree.children if c]
        for group in groups:
            inside = [n in self.first_stop for n in group]
            if any(inside) and not all(inside):
                return False
        return True


def enumerate_stopping_times(tree: ScenarioTree) -> Iterator[StoppingTime]:
    """All stopping times of a (small) tree, as first-stop antichains."""

    def antichains(n: int) -> list[tuple[int, ...]]:
        # stop at n, or combine any choice (including none) below each child
        combos: list[tuple[int, ...]] = [()]
        for c in tree.children[n]:
            choices = antichains(c)
            combos = [base + pick for base in combos for pick in choices]
        return [(n,)] + combos

    acc: list[tuple[int, ...]] = [()]
    for r in tree.roots:
        choices = antichains(r)
        acc = [base + pick for base in acc for pick in choices]
    seen = set()
    for combo in acc:
        key = frozenset(combo)
        if key not in seen:
            seen.add(key)
            yield StoppingTime(tree, key)


def enumerate_predictable_stopping_times(tree: ScenarioTree) -> Iterator[StoppingTime]:
    """Stopping times whose stop decision is constant on sibling groups."""

    def group_choices(group: list[int]) -> list[tuple[int, ...]]:
        out = [tuple(group)]
        subs = []
        for n in group:
            if tree.children[n]:
                subs.append(group_choices(tree.children[n]))
            else:
                subs.append([()])
        combos: list[tuple[int, ...]] = [()]
        for choices in subs:
            combos = [base + pick for base in combos for pick in choices]
        return out + combos

    seen = set()
    for combo in group_choices(list(tree.roots)):
        key = frozenset(combo)
        if key not in seen:
            seen.add(key)
            yield StoppingTime(tree, key)


def optional_projection(raw: RawProcess, tree: ScenarioTree) -> AdaptedProcess:
    """Nodewise conditional average of the raw time-k values."""
    if raw.tree is not tree:
        raise ValueError("raw process belongs to a different tree")
    out = np.zeros((tree.n_nodes, raw.dim))
    for n in range(tree.n_nodes):
        out[n] = tree.cond_exp(raw.values[:, tree.depth[n], :], n, tree.depth[n])
    return AdaptedProcess(tree, out)


def predictable_projection(raw: RawProcess, tree: ScenarioTree) -> AdaptedProcess:
    """Time-k values averaged on the parent atom (one-step announcement).

    At depth 0 the pre-initial sigma-algebra coincides with the initial one,
    so root values average on the root atom itself.
    """
    if raw.tree is not tree:
        raise ValueError("raw process belongs to a different tree")
    out = np.zeros((tree.n_nodes, raw.dim))
    for n in range(tree.n_nodes):
        anchor = tree.parent[n] if tree.parent[n] >= 0 else n
        out[n] = tree.cond_exp(raw.values[:, tree.depth[n], :], anchor, tree.depth[n])
    return AdaptedProcess(tree, out)


def validate_optional_weights(
    weights: np.ndarray, tree: ScenarioTree, tol: float = 1e-12
) -> bool:
    """Check E[sum_k v_k w_k] = E[sum_k (ov)_k w_k] on spanning indicators.

    ``weights`` is a per-scenario, per-cell array (n_leaves, n_periods);
    the identity for every indicator of a single (scenario, cell) slot is
    equivalent to the weights being adapted.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (tree.n_leaves, tree.n_periods):
        raise ValueError("weights must be (n_leaves, n_periods)")
    pleaf = np.array([float(tree.prob[tree.leaves[li]]) for li in range(tree.n_leaves)])
    for li in range(tree.n_leaves):
        for k in range(tree.n_periods):
            lhs = pleaf[li] * w[li, k]
            node = tree.paths[li][k]
            pn = float(tree.prob[node])
            rhs = sum(pleaf[lj] * (pleaf[li] / pn) * w[lj, k] for lj in tree.leaves_through[node])
            if abs(lhs - rhs) > tol * (1.0 + abs(lhs) + abs(rhs)):
                return False
    return True


def r1_norm(v: AdaptedProcess) -> float:
    """sup over stopping times of E |v at the stop|, by backward recursion.

    The recursion is the optimal-stopping envelope of |v| with a zero reward
    for never stopping; on a finite tree it equals the exhaustive supremum.
    """
    tree = v.tree
    value = np.zeros(tree.n_nodes)
    for n in sorted(range(tree.n_nodes), key=lambda m: -tree.depth[m]):
        stop = float(np.linalg.norm(v.values[n]))
        if tree.children[n]:
            go = sum(float(tree.prob[c]) * value[c] for c in tree.children[n]) / float(tree.prob[n])
            value[n] = max(stop, go, 0.0)
        else:
            value[n] = max(stop, 0.0)
    return float(sum(float(tree.prob[r]) * value[r] for r in tree.roots))


@dataclass
class RandomWeights:
    """Adapted cell weights: node n prices the cell starting at its time."""

    tree: ScenarioTree
    w: np.ndarray  # (n_nodes,), meaningful for depth <= n_periods - 1

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if self.w.shape[0] != self.tree.n_nodes:
            raise ValueError("need one weight per node")
        for n in range(self.tree.n_nodes):
            if self.tree.depth[n] < self.tree.n_periods and (
                self.w[n] <= 0.0 or not math.isfinite(self.w[n])
            ):
                raise ValueError(f"cell weight at node {n} must be positive")

    def to_scenario_array(self) -> np.ndarray:
        out = np.zeros((self.tree.n_leaves, self.tree.n_periods))
        for li, path in enumerate(self.tree.paths):
            for k in range(self.tree.n_periods):
                out[li, k] = self.w[path[k]]
        return out


@dataclass
class TreeMeasure:
    """Optional signed measure: per-node cell density plus atoms at nodes.

    An atom sits at the grid time of its node (which must be a flagged
    reference-null instant when the measure is decomposed).
    """

    tree: ScenarioTree
    density: np.ndarray  # (n_nodes, d), meaningful for depth <= n_periods - 1
    atoms: tuple[tuple[int, np.ndarray], ...] = ()  # (node_id, mass)

    def __post_init__(self) -> None:
        self.density = np.atleast_2d(np.asarray(self.density, dtype=float))
        self.atoms = tuple(
            (int(n), np.atleast_1d(np.asarray(m, dtype=float))) for n, m in self.atoms
        )

    @property
    def dim(self) -> int:
        return int(self.density.shape[1])


def m_infty_norm(theta: TreeMeasure, mu: RandomWeights) -> float:
    """Essential supremum over scenarios of the pathwise total variation."""
    tree = theta.tree
    atom_norm = np.zeros(tree.n_nodes)
    for n, m in theta.atoms:
        atom_norm[n] += float(np.linalg.norm(m))
    worst = 0.0
    for path in tree.paths:
        tv = 0.0
        for k, n in enumerate(path):
            if k < tree.n_periods:
                tv += float(np.linalg.norm(theta.density[n])) * mu.w[n]
            tv += atom_norm[n]
        worst = max(worst, tv)
    return worst


def pairing_process_measure(v: AdaptedProcess, theta: TreeMeasure, mu: RandomWeights) -> float:
    """E of the Stieltjes sum of a right-continuous process against a measure."""
    tree = v.tree
    if theta.tree is not tree:
        raise ValueError("process and measure live on different trees")
    total = 0.0
    for n in range(tree.n_nodes):
        if tree.depth[n] < tree.n_periods:
            total += float(tree.prob[n]) * float(v.values[n] @ theta.density[n]) * mu.w[n]
    for n, m in theta.atoms:
        total += float(tree.prob[n]) * float(v.values[n] @ m)
    return total


# ---------------------------------------------------------------------------
# adapted BV paths and dual pairs


@dataclass
class TreePath:
    """Adapted left-continuous BV path.

    ``initial`` is read on depth-0 nodes, ``cells[n]`` is the value held on
    the cell starting at node n's time (depth <= N-1), ``terminal`` on
    leaves.  The jump at a node's time is its cell value minus the parent's.
    """

    tree: ScenarioTree
    initial: np.ndarray  # (n_nodes, d), read on roots
    cells: np.ndarray  # (n_nodes, d), read on depth <= N-1
    terminal: np.ndarray  # (n_nodes, d), read on leaves

    def __post_init__(self) -> None:
        self.initial = np.atleast_2d(np.asarray(self.initial, dtype=float))
        self.cells = np.atleast_2d(np.asarray(self.cells, dtype=float))
        self.terminal = np.atleast_2d(np.asarray(self.terminal, dtype=float))

    @property
    def dim(self) -> int:
        return int(self.cells.shape[1])

    def jump(self, node: int) -> np.ndarray:
        """Path jump at the node's grid time on the node's atom."""
        tree = self.tree
        par = tree.parent[node]
        if tree.depth[node] == 0:
            return self.cells[node] - self.initial[node]
        if tree.depth[node] == tree.n_periods:
            return self.terminal[node] - self.cells[par]
        return self.cells[node] - self.cells[par]

    def value_before(self, node: int) -> np.ndarray:
        """Path value at the node's grid time (left limit convention)."""
        tree = self.tree
        if tree.depth[node] == 0:
            return self.initial[node]
        return self.cells[tree.parent[node]]


def pathwise_total_variation(x: TreePath, scenario: int) -> float:
    """Sum of Euclidean jump norms along one scenario."""
    return float(
        sum(np.linalg.norm(x.jump(n)) for n in x.tree.paths[scenario])
    )


@dataclass
class TreeDual:
    """Dual pair: pre-initial vectors on the time-0 atoms plus an adapted
    right-continuous process."""

    tree: ScenarioTree
    vminus: np.ndarray  # (n_nodes, d), read on roots
    process: AdaptedProcess

    def __post_init__(self) -> None:
        self.vminus = np.atleast_2d(np.asarray(self.vminus, dtype=float))

    @property
    def dim(self) -> int:
        return self.process.dim


def path_dual_pairing(x: TreePath, v: TreeDual) -> float:
    """E[x_0 . v_pre + sum_k v(t_k) . (jump of x at t_k)]."""
    tree = x.tree
    total = 0.0
    for r in tree.roots:
        total += float(tree.prob[r]) * float(v.vminus[r] @ x.initial[r])
    for n in range(tree.n_nodes):
        total += float(tree.prob[n]) * float(v.process.values[n] @ x.jump(n))
    return total


def embedding_pairing(x: TreePath, wdens: np.ndarray, mu: RandomWeights) -> float:
    """E of the running value integrated against a density process."""
    tree = x.tree
    total = 0.0
    for n in range(tree.n_nodes):
        if tree.depth[n] < tree.n_periods:
            total += float(tree.prob[n]) * float(x.cells[n] @ wdens[n]) * mu.w[n]
    return total


def embedding_adjoint(
    wdens: np.ndarray, mu: RandomWeights, tree: ScenarioTree
) -> TreeDual:
    """Adjoint of the running-value embedding applied to a density process.

    With z the cumulative integral of the density against the reference
    weights, the adjoint is the pair (E_0 of z at the horizon, optional
    projection of the remaining mass).  By construction it satisfies
    <embedding(x), w> = <x, adjoint(w)> for every adapted BV path x.
    """
    wdens = np.atleast_2d(np.asarray(wdens, dtype=float))
    d = wdens.shape[1]
    tail = np.zeros((tree.n_nodes, d))
    for n in sorted(range(tree.n_nodes), key=lambda m: -tree.depth[m]):
        if tree.depth[n] < tree.n_periods:
            tail[n] = wdens[n] * mu.w[n]
            for c in tree.children[n]:
                tail[n] += float(tree.prob[c]) / float(tree.prob[n]) * tail[c]
    vminus = np.zeros((tree.n_nodes, d))
    for r in tree.roots:
        vminus[r] = tail[r]  # z_0 = 0, so E_0 z_T is the full expected mass
    return TreeDual(tree, vminus, AdaptedProcess(tree, tail))
