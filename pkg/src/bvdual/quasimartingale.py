"""Mean variation, martingale/compensator splitting, and summation by parts.

Every adapted process on a finite tree splits uniquely into a martingale plus
a predictable path of bounded variation starting at zero; its mean variation
is the expected total variation of that compensator, and equals the value of
a bang-bang control problem over unit-bounded adapted paths vanishing at both
ends.  These identities are the backbone of the dual-side checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from bvdual.tree import AdaptedProcess, RawProcess, ScenarioTree, TreePath

__all__ = [
    "DoobDecomposition",
    "mean_variation",
    "partition_variation",
    "compensator_increments",
    "doob_decompose",
    "ibp_gap",
    "var_support_maximum",
    "lift_to_raw_bv",
]


def compensator_increments(v: AdaptedProcess) -> np.ndarray:
    """Conditional increments E[v_{k+1} - v_k | node] for depth < N nodes."""
    tree = v.tree
    out = np.zeros_like(v.values)
    for n in range(tree.n_nodes):
        if tree.children[n]:
            exp_next = np.zeros(v.dim)
            for c in tree.children[n]:
                exp_next += float(tree.prob[c]) * v.values[c]
            out[n] = exp_next / float(tree.prob[n]) - v.values[n]
    return out


def mean_variation(v: AdaptedProcess) -> float:
    """Expected sum of conditional-increment norms on the finest partition.

    Refining a partition can only increase the partition sum (conditional
    Jensen), so the finest grid partition attains the supremum; the
    refinement monotonicity itself is exercised by the test-suite through
    :func:`partition_variation`.
    """
    tree = v.tree
    inc = compensator_increments(v)
    total = 0.0
    for n in range(tree.n_nodes):
        if tree.children[n]:
            total += float(tree.prob[n]) * float(np.linalg.norm(inc[n]))
    return total


def partition_variation(v: AdaptedProcess, depths: Sequence[int]) -> float:
    """Partition sum E sum_i |E[v_{k_{i+1}} - v_{k_i} | F_{k_i}]| for the
    sub-partition given by ``depths`` (strictly increasing grid indices)."""
    tree = v.tree
    ds = list(depths)
    if any(b <= a for a, b in zip(ds, ds[1:])):
        raise ValueError("partition depths must be strictly increasing")
    total = 0.0
    for a, b in zip(ds, ds[1:]):
        for n in tree.nodes_at(a):
            exp_b = np.zeros(v.dim)
            for li in tree.leaves_through[n]:
                leaf = tree.leaves[li]
                exp_b += float(tree.prob[leaf]) * v.values[tree.paths[li][b]]
            exp_b /= float(tree.prob[n])
            total += float(tree.prob[n]) * float(np.linalg.norm(exp_b - v.values[n]))
    return total


@dataclass
class DoobDecomposition:
    """v = martingale + compensator with the compensator predictable and
    vanishing at time zero; unique."""

    martingale: AdaptedProcess
    compensator: AdaptedProcess

    def check(self, v: AdaptedProcess, tol: float = 1e-10) -> bool:
        tree = v.tree
        m, a = self.martingale, self.compensator
        if np.max(np.abs(m.values + a.values - v.values)) > tol:
            return False
        for r in tree.roots:
            if np.any(np.abs(a.values[r]) > tol):
                return False
        inc_m = compensator_increments(m)
        for n in range(tree.n_nodes):
            if tree.children[n] and np.linalg.norm(inc_m[n]) > tol:
                return False
            # predictability: compensator constant across siblings
            for c in tree.children[n][1:]:
                if np.max(np.abs(a.values[c] - a.values[tree.children[n][0]])) > tol:
                    return False
        return True


def doob_decompose(v: AdaptedProcess) -> DoobDecomposition:
    """Unique splitting into martingale part and predictable compensator."""
    tree = v.tree
    inc = compensator_increments(v)
    a = np.zeros_like(v.values)
    for n in range(tree.n_nodes):
        par = tree.parent[n]
        if par >= 0:
            a[n] = a[par] + inc[par]
    return DoobDecomposition(
        AdaptedProcess(tree, v.values - a), AdaptedProcess(tree, a)
    )


def ibp_gap(v: AdaptedProcess, x: TreePath) -> float:
    """|LHS - RHS| of the summation-by-parts identity.

    LHS pairs the process with the path's jumps directly; RHS uses endpoint
    terms minus the running value integrated against the compensator.  The
    martingale part drops out in expectation because cell values are known
    one step ahead.
    """
    tree = v.tree
    lhs = 0.0
    for n in range(tree.n_nodes):
        lhs += float(tree.prob[n]) * float(v.values[n] @ x.jump(n))
    dec = doob_decompose(v)
    inc = compensator_increments(v)
    rhs = 0.0
    for leaf in tree.leaves:
        rhs += float(tree.prob[leaf]) * float(v.values[leaf] @ x.terminal[leaf])
    for r in tree.roots:
        rhs -= float(tree.prob[r]) * float(v.values[r] @ x.initial[r])
    for n in range(tree.n_nodes):
        if tree.children[n]:
            rhs -= float(tree.prob[n]) * float(x.cells[n] @ inc[n])
    del dec  # decomposition only documents that inc are the compensator steps
    return abs(lhs - rhs)


def var_support_maximum(
    v: AdaptedProcess, n_probes: int = 0, seed: int = 0
) -> tuple[float, TreePath]:
    """Maximize E of the pairing with jumps of unit-bounded adapted paths.

    The paths range over |value| <= 1 with zero initial and terminal values.
    Regrouping the pairing per node leaves a linear program over boxes whose
    exact solution is the normalized coefficient at each node; optional
    random probes (``n_probes``) provide an independent feasible floor.  The
    value realizes the mean variation as a support function, which is what
    the suite checks.
    """
    tree = v.tree
    d = v.dim
    coef = np.zeros((tree.n_nodes, d))
    for n in range(tree.n_nodes):
        if tree.children[n]:
            coef[n] = float(tree.prob[n]) * v.values[n]
            for c in tree.children[n]:
                coef[n] -= float(tree.prob[c]) * v.values[c]
    cells = np.zeros((tree.n_nodes, d))
    best = 0.0
    for n in range(tree.n_nodes):
        if tree.children[n]:
            norm = float(np.linalg.norm(coef[n]))
            if norm > 0.0:
                cells[n] = coef[n] / norm
            best += norm
    path = TreePath(tree, np.zeros((tree.n_nodes, d)), cells, np.zeros((tree.n_nodes, d)))
    if n_probes > 0:
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            trial = np.where(rng.uniform(size=(tree.n_nodes, d)) < 0.5, -1.0, 1.0)
            val = float(sum(float(coef[n] @ trial[n]) for n in range(tree.n_nodes) if tree.children[n]))
            if val > best:  # cannot happen for a correct LP solution
                best = val
                cells = trial
                path = TreePath(tree, np.zeros((tree.n_nodes, d)), cells, np.zeros((tree.n_nodes, d)))
    return best, path


def lift_to_raw_bv(v: AdaptedProcess) -> RawProcess:
    """Raw process of integrable variation whose optional projection is v.

    Per scenario: the terminal martingale value held constant over the whole
    horizon, plus the compensator path.
    """
    tree = v.tree
    dec = doob_decompose(v)
    out = np.zeros((tree.n_leaves, tree.n_periods + 1, v.dim))
    for li, path in enumerate(tree.paths):
        leaf = path[-1]
        m_T = dec.martingale.values[leaf]
        for k, n in enumerate(path):
            out[li, k] = m_T + dec.compensator.values[n]
    return RawProcess(tree, out)
