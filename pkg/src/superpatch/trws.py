"""Sequential tree-reweighted message passing (TRW-S) and loopy min-sum.

Both algorithms run on a flat pairwise model whose edges are either hard
consistency edges between super nodes (messages via the grouped linear-time
kernel) or dense cost matrices (plain pairwise energies).
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .energy import INF, FactorGraph
from .errors import InfeasibleModelError, InputError
from .lifting import ConsistencyEdge, SuperGraph, arc_consistency, decode, super_energy

TRWS = "TRWS"
LBP = "LBP"
GAP_EPS = 1e-12


@dataclass(frozen=True)
class GroupLayout:
    """Labels of both endpoints sorted by overlap assignment.

    Group ``g`` of side a is ``perm_a[start_a[g]:start_a[g+1]]``, and it
    corresponds to the same slice index on side b.
    """

    perm_a: np.ndarray
    start_a: np.ndarray
    perm_b: np.ndarray
    start_b: np.ndarray

    @property
    def group_sizes_a(self) -> np.ndarray:
        return np.diff(self.start_a)

    @property
    def group_sizes_b(self) -> np.ndarray:
        return np.diff(self.start_b)


def _side_layout(groups: np.ndarray, num_groups: int):
    perm = np.argsort(groups, kind="stable").astype(np.int64)
    start = np.zeros(num_groups + 1, dtype=np.int64)
    np.cumsum(np.bincount(groups, minlength=num_groups), out=start[1:])
    return perm, start


def precompute_group_order(edge: ConsistencyEdge) -> GroupLayout:
    pa, sa = _side_layout(edge.group_a, edge.num_groups)
    pb, sb = _side_layout(edge.group_b, edge.num_groups)
    return GroupLayout(pa, sa, pb, sb)


def send_message_grouped(edge: ConsistencyEdge, direction: str, h,
                         layout: Optional[GroupLayout] = None, count_ops: bool = False):
    """Message min_{source label consistent with target label} h(source label).

    ``direction`` is "ab" (h over node a's labels, result over node b's) or
    "ba".  Target labels whose group is empty at the source get ``INF``.
    """
    layout = layout or precompute_group_order(edge)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if direction == "ab":
        src, dst = (layout.perm_a, layout.start_a), (layout.perm_b, layout.start_b)
    elif direction == "ba":
        src, dst = (layout.perm_b, layout.start_b), (layout.perm_a, layout.start_a)
    else:
        raise InputError(f"direction must be 'ab' or 'ba', not {direction!r}")
    if h.size != src[0].size:
        raise InputError(f"h has {h.size} entries, source node has {src[0].size} labels")
    out = np.empty(dst[0].size)
    ops = K.grouped_min(h, src[0], src[1], dst[0], dst[1], out)
    return (out, ops) if count_ops else out


def send_message_naive(edge: ConsistencyEdge, direction: str, h, values_a, values_b):
    """Reference message from an explicit all-pairs agreement test.

    ``values_a``/``values_b`` are the endpoint assignment matrices restricted
    to the overlap variables (one row per label).
    """
    h = np.asarray(h, dtype=np.float64)
    src, dst = (values_a, values_b) if direction == "ab" else (values_b, values_a)
    src, dst = np.asarray(src), np.asarray(dst)
    agree = (src[:, None, :] == dst[None, :, :]).all(axis=-1)   # (|src|, |dst|)
    cost = np.where(agree, h[:, None], INF)
    return cost.min(axis=0) if len(src) else np.full(len(dst), INF)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 10000
    lb_stall_tolerance: float = 1e-9
    stall_window: int = 10
    gap_tolerance: float = 1e-10
    schedule: Optional[Sequence[int]] = None
    algorithm: str = TRWS
    arc_consistency: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if self.lb_stall_tolerance < 0 or self.gap_tolerance < 0:
            raise InputError("tolerances must be non-negative")
        if self.algorithm not in (TRWS, LBP):
            raise InputError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class TraceRecord:
    iteration: int
    lower_bound: float
    energy: float
    ms: float


@dataclass
class SolveResult:
    labeling: np.ndarray          # node labels (super labeling or base labeling)
    base_labeling: np.ndarray
    consistent: bool
    energy: float
    lower_bound: float
    iterations: int
    trace: list[TraceRecord] = field(default_factory=list)
    wall_ms: float = 0.0

    @property
    def relative_gap(self) -> float:
        return relative_gap(self.energy, self.lower_bound)


def relative_gap(energy: float, lower_bound: float) -> float:
    if np.isnan(lower_bound) or np.isnan(energy):
        return float("nan")
    if not np.isfinite(energy) or not np.isfinite(lower_bound):
        return INF
    return (energy - lower_bound) / max(abs(lower_bound), GAP_EPS)


@dataclass
class FlatModel:
    """Pairwise model laid out in flat arrays for the compiled kernels."""

    L: np.ndarray
    unary: np.ndarray
    uoff: np.ndarray
    ea: np.ndarray
    eb: np.ndarray
    kind: np.ndarray
    mat_off: np.ndarray
    mats: np.ndarray
    perm_off_a: np.ndarray
    perm_a: np.ndarray
    start_off_a: np.ndarray
    start_a: np.ndarray
    perm_off_b: np.ndarray
    perm_b: np.ndarray
    start_off_b: np.ndarray
    start_b: np.ndarray
    group_off_a: np.ndarray
    group_a: np.ndarray
    group_off_b: np.ndarray
    group_b: np.ndarray
    adj_off: np.ndarray
    adj_edge: np.ndarray
    adj_is_a: np.ndarray
    moff_to_a: np.ndarray
    moff_to_b: np.ndarray
    num_msgs: int

    @property
    def num_nodes(self) -> int:
        return int(self.L.size)

    def weights(self):
        """TRW-S node weights 1/max(#lower, #higher neighbours) and residual weights."""
        n = self.num_nodes
        n_in = np.bincount(self.eb, minlength=n)
        n_out = np.bincount(self.ea, minlength=n)
        gamma = 1.0 / np.maximum(np.maximum(n_in, n_out), 1)
        resid = np.clip(1.0 - n_in * gamma, 0.0, 1.0)
        return gamma, resid

    def energy(self, x) -> float:
        return float(K.labeling_energy(self.L, self.unary, self.uoff, self.ea, self.eb, self.kind,
                                       self.mat_off, self.mats, self.group_off_a, self.group_a,
                                       self.group_off_b, self.group_b, np.asarray(x, dtype=np.int64)))


class _Builder:
    def __init__(self, unaries: Sequence[np.ndarray]):
        self.L = np.array([u.size for u in unaries], dtype=np.int64)
        self.unary = np.concatenate([np.asarray(u, dtype=np.float64) for u in unaries])
        self.uoff = np.zeros(self.L.size + 1, dtype=np.int64)
        np.cumsum(self.L, out=self.uoff[1:])
        self.edges = []  # (a, b, kind, payload)

    def add_consistency(self, a, b, group_a, group_b, num_groups):
        self.edges.append((a, b, K.CONSISTENCY, (group_a, group_b, num_groups)))

    def add_dense(self, a, b, mat):
        self.edges.append((a, b, K.DENSE, np.asarray(mat, dtype=np.float64)))

    def build(self) -> FlatModel:
        E = len(self.edges)
        ea = np.array([e[0] for e in self.edges], dtype=np.int64)
        eb = np.array([e[1] for e in self.edges], dtype=np.int64)
        if E and (ea >= eb).any():
            raise InputError("edges must be stored with the lower scan position first")
        kind = np.array([e[2] for e in self.edges], dtype=np.int64)
        mats, mat_off = [], np.zeros(E, dtype=np.int64)
        perm_a, perm_b, start_a, start_b, grp_a, grp_b = [], [], [], [], [], []
        pos = 0
        for k, (a, b, kd, payload) in enumerate(self.edges):
            if kd == K.DENSE:
                mat_off[k] = pos
                mats.append(payload.ravel())
                pos += payload.size
                empty = np.zeros(0, dtype=np.int64)
                perm_a.append(empty), perm_b.append(empty), grp_a.append(empty), grp_b.append(empty)
                start_a.append(np.zeros(1, dtype=np.int64)), start_b.append(np.zeros(1, dtype=np.int64))
            else:
                ga, gb, ng = payload
                pa, sa = _side_layout(ga, ng)
                pb, sb = _side_layout(gb, ng)
                perm_a.append(pa), start_a.append(sa), perm_b.append(pb), start_b.append(sb)
                grp_a.append(np.asarray(ga, dtype=np.int64)), grp_b.append(np.asarray(gb, dtype=np.int64))

        def flat(parts):
            off = np.zeros(len(parts) + 1, dtype=np.int64)
            np.cumsum([p.size for p in parts], out=off[1:])
            data = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
            return off, data.astype(np.int64)

        perm_off_a, perm_a = flat(perm_a)
        perm_off_b, perm_b = flat(perm_b)
        start_off_a, start_a = flat(start_a)
        start_off_b, start_b = flat(start_b)
        group_off_a, group_a = flat(grp_a)
        group_off_b, group_b = flat(grp_b)

        n = self.L.size
        inc = defaultdict(list)
        for k in range(E):
            inc[int(ea[k])].append((k, True))
            inc[int(eb[k])].append((k, False))
        adj_off = np.zeros(n + 1, dtype=np.int64)
        adj_edge, adj_is_a = [], []
        for i in range(n):
            for k, is_a in inc[i]:
                adj_edge.append(k)
                adj_is_a.append(is_a)
            adj_off[i + 1] = len(adj_edge)
        moff_to_a = np.zeros(E, dtype=np.int64)
        moff_to_b = np.zeros(E, dtype=np.int64)
        m = 0
        for k in range(E):
            moff_to_b[k] = m
            m += self.L[eb[k]]
            moff_to_a[k] = m
            m += self.L[ea[k]]
        return FlatModel(
            self.L, self.unary, self.uoff, ea, eb, kind, mat_off,
            np.concatenate(mats) if mats else np.zeros(0), perm_off_a, perm_a, start_off_a, start_a,
            perm_off_b, perm_b, start_off_b, start_b, group_off_a, group_a, group_off_b, group_b,
            adj_off, np.asarray(adj_edge, dtype=np.int64), np.asarray(adj_is_a, dtype=np.bool_),
            moff_to_a, moff_to_b, int(m))


def flat_from_super_graph(sg: SuperGraph, order: Optional[Sequence[int]] = None) -> FlatModel:
    """``order[p]`` is the super node processed at scan position ``p``."""
    n = len(sg.nodes)
    order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    b = _Builder([sg.nodes[k].unary for k in order])
    for e in sorted(sg.edges, key=lambda e: (min(pos[e.a], pos[e.b]), max(pos[e.a], pos[e.b]))):
        if pos[e.a] < pos[e.b]:
            b.add_consistency(pos[e.a], pos[e.b], e.group_a, e.group_b, e.num_groups)
        else:
            b.add_consistency(pos[e.b], pos[e.a], e.group_b, e.group_a, e.num_groups)
    return b.build()


def flat_from_pairwise(graph: FactorGraph, order: Optional[Sequence[int]] = None) -> FlatModel:
    """Flat model of an energy whose factors have at most two variables."""
    n = graph.num_vars
    order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    unary = [np.zeros(graph.label_count[v]) for v in order]
    pairs: dict[tuple[int, int], np.ndarray] = {}
    for f in graph.factors:
        if len(f.scope) == 1:
            unary[pos[f.scope[0]]] += f.table
        elif len(f.scope) == 2:
            i, j = f.scope
            t = f.table.reshape(graph.label_count[i], graph.label_count[j])
            pi, pj = int(pos[i]), int(pos[j])
            if pi > pj:
                pi, pj, t = pj, pi, t.T
            key = (pi, pj)
            pairs[key] = pairs[key] + t if key in pairs else t.copy()
        else:
            raise InputError(f"factor over {f.scope} is not pairwise")
    b = _Builder(unary)
    for (pi, pj) in sorted(pairs):
        b.add_dense(pi, pj, pairs[(pi, pj)])
    return b.build()


def _stalled(bounds: list[float], opts: SolverOptions) -> bool:
    w = opts.stall_window
    if len(bounds) <= w:
        return False
    now, before = bounds[-1], bounds[-1 - w]
    return now - before <= opts.lb_stall_tolerance * max(1.0, abs(now))


def solve_flat(model: FlatModel, opts: SolverOptions = SolverOptions()):
    """Run the chosen algorithm on a flat model.

    Returns (best labeling in scan positions, best energy, final lower bound,
    iterations, trace).  LBP reports ``nan`` for the bound.
    """
    args_common = (model.L, model.unary, model.uoff, model.ea, model.eb, model.kind,
                   model.mat_off, model.mats)
    layout = (model.perm_off_a, model.perm_a, model.start_off_a, model.start_a,
              model.perm_off_b, model.perm_b, model.start_off_b, model.start_b)
    groups = (model.group_off_a, model.group_a, model.group_off_b, model.group_b)
    adj = (model.adj_off, model.adj_edge, model.adj_is_a)
    msg = np.zeros(model.num_msgs)
    x = np.zeros(model.num_nodes, dtype=np.int64)
    best_x, best_e = x.copy(), INF
    bound = float("nan")
    bounds: list[float] = []
    trace: list[TraceRecord] = []
    t0 = time.perf_counter()
    gamma, resid = model.weights()
    new_msg = np.zeros_like(msg) if opts.algorithm == LBP else None
    it = 0
    for it in range(1, opts.max_iters + 1):
        if opts.algorithm == TRWS:
            bound, feasible = K.trws_iteration(*args_common, *layout, *adj, gamma, resid,
                                               msg, model.moff_to_a, model.moff_to_b)
            if not feasible:
                raise InfeasibleModelError("a message became infinite everywhere: no finite labeling")
            K.greedy_decode(*args_common, *groups, *adj, msg, model.moff_to_a, model.moff_to_b, x)
            bounds.append(bound)
        else:
            delta = K.lbp_iteration(*args_common, *layout, *adj, msg, new_msg,
                                    model.moff_to_a, model.moff_to_b)
            K.belief_decode(model.L, model.unary, model.uoff, *adj, msg, model.moff_to_a,
                            model.moff_to_b, x)
        e = float(K.labeling_energy(*args_common, *groups, x))
        if e < best_e:
            best_e, best_x = e, x.copy()
        trace.append(TraceRecord(it, bound, best_e, (time.perf_counter() - t0) * 1e3))
        if opts.algorithm == TRWS:
            if np.isfinite(best_e) and best_e - bound <= opts.gap_tolerance * max(abs(bound), 1.0):
                break
            if _stalled(bounds, opts):
                break
        elif delta <= opts.lb_stall_tolerance:
            break
    if opts.algorithm == LBP and not np.isfinite(best_e):
        best_x = x.copy()
    return best_x, best_e, bound, it, trace


def _order(n: int, schedule) -> np.ndarray:
    if schedule is None:
        return np.arange(n)
    order = np.asarray(schedule, dtype=np.int64)
    if sorted(order.tolist()) != list(range(n)):
        raise InputError("schedule must be a permutation of the nodes")
    return order


def run(sg: SuperGraph, opts: SolverOptions = SolverOptions()) -> SolveResult:
    """Minimize the super-node energy; decode the best labeling back to the base variables."""
    t0 = time.perf_counter()
    keep = arc_consistency(sg) if opts.arc_consistency else [np.ones(n.num_labels, bool) for n in sg.nodes]
    pruned = any(not m.all() for m in keep)
    work = sg.restricted(keep) if pruned else sg
    order = _order(len(sg.nodes), opts.schedule)
    model = flat_from_super_graph(work, order)
    xs, e, lb, iters, trace = solve_flat(model, opts)
    X = np.empty(len(sg.nodes), dtype=np.int64)
    X[order] = xs
    if pruned:
        X = np.array([np.flatnonzero(m)[X[k]] for k, m in enumerate(keep)], dtype=np.int64)
    base, consistent = decode(sg, X)
    energy = super_energy(sg, X)
    consistent = consistent and np.isfinite(energy)
    return SolveResult(X, base, consistent, energy, lb, iters, trace,
                       (time.perf_counter() - t0) * 1e3)


def solve_pairwise(graph: FactorGraph, opts: SolverOptions = SolverOptions()) -> SolveResult:
    """Plain TRW-S / LBP on an energy with unary and pairwise factors only."""
    t0 = time.perf_counter()
    order = _order(graph.num_vars, opts.schedule)
    model = flat_from_pairwise(graph, order)
    xs, e, lb, iters, trace = solve_flat(model, opts)
    x = np.empty(graph.num_vars, dtype=np.int64)
    x[order] = xs
    return SolveResult(x, x, bool(np.isfinite(e)), e, lb, iters, trace,
                       (time.perf_counter() - t0) * 1e3)
