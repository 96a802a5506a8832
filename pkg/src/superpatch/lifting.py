"""Partial enumeration: turn a high-order energy into a pairwise problem over patches.

Each patch of a cover becomes a super node whose labels enumerate the joint
states of its pixels (optionally filtered).  Factors fold into super-node
unary costs; overlapping super nodes are tied by hard consistency edges
(cost 0 if the two labels agree on the shared variables, infinite otherwise).
"""
from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .energy import INF, FactorGraph, encode, strides
from .errors import CapacityError, CoverError, InputError, ModelError

MAX_LABELS_PER_NODE = 1 << 20


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    side: int
    stride: int = 1

    @property
    def rows(self) -> int:
        return (self.height - self.side) // self.stride + 1

    @property
    def cols(self) -> int:
        return (self.width - self.side) // self.stride + 1


@dataclass(frozen=True)
class PatchCover:
    patches: tuple[tuple[int, ...], ...]
    grid: Optional[GridGeometry] = None

    def __post_init__(self):
        patches = tuple(tuple(sorted(int(i) for i in p)) for p in self.patches)
        for p in patches:
            if not p:
                raise InputError("patches must be non-empty")
            if len(set(p)) != len(p):
                raise InputError(f"patch {p} has duplicate variables")
        object.__setattr__(self, "patches", patches)

    def __len__(self):
        return len(self.patches)

    @classmethod
    def sliding(cls, width: int, height: int, side: int, stride: int = 1) -> "PatchCover":
        """Square ``side`` x ``side`` patches over a row-major pixel grid, in row-major order."""
        if width < side or height < side:
            raise InputError(f"{width}x{height} grid is smaller than the {side}x{side} patch")
        geom = GridGeometry(width, height, side, stride)
        patches = []
        for r in range(0, geom.rows * stride, stride):
            for c in range(0, geom.cols * stride, stride):
                patches.append(tuple((r + dr) * width + c + dc
                                     for dr in range(side) for dc in range(side)))
        return cls(tuple(patches), geom)

    def membership(self, num_vars: int) -> np.ndarray:
        k = np.zeros(num_vars, dtype=np.int64)
        for p in self.patches:
            k[list(p)] += 1
        return k


def enumerate_patch_labels(scope: Sequence[int], label_count: Sequence[int],
                           allowed: Optional[Callable[[tuple], bool]] = None) -> np.ndarray:
    """Encodings of all patch assignments (or those passing ``allowed``) in ascending order.

    ``label_count`` is indexed by variable, so it can be the graph's full list.
    """
    radices = [int(label_count[i]) for i in scope]
    total = int(np.prod(radices))
    if allowed is None:
        if total > MAX_LABELS_PER_NODE:
            raise CapacityError(f"patch with {total} states exceeds {MAX_LABELS_PER_NODE}")
        return np.arange(total, dtype=np.int64)
    keep = [encode(vals, radices) for vals in itertools.product(*[range(r) for r in radices])
            if allowed(vals)]
    if not keep:
        raise ModelError(f"no admissible labels for patch {tuple(scope)}")
    return np.asarray(keep, dtype=np.int64)


def label_values(labels: np.ndarray, radices: Sequence[int]) -> np.ndarray:
    """Decode label encodings into a (num_labels, len(radices)) assignment matrix."""
    z = np.array(labels, dtype=np.int64)
    out = np.empty((z.size, len(radices)), dtype=np.int64)
    for k in range(len(radices) - 1, -1, -1):
        out[:, k] = z % radices[k]
        z //= radices[k]
    return out


@dataclass
class SuperNode:
    scope: tuple[int, ...]
    radices: tuple[int, ...]
    labels: np.ndarray  # base-assignment encodings, ascending
    unary: np.ndarray
    _values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if self.unary.shape != self.labels.shape:
            raise InputError("unary vector length must match the label count")
        if self.labels.size == 0:
            raise ModelError(f"super node over {self.scope} has no labels")

    @property
    def num_labels(self) -> int:
        return int(self.labels.size)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = label_values(self.labels, self.radices)
        return self._values

    def index_of(self, assignment) -> int:
        """Position of a patch assignment in this node's label list, or -1."""
        code = encode(assignment, self.radices)
        k = int(np.searchsorted(self.labels, code))
        return k if k < self.labels.size and self.labels[k] == code else -1


@dataclass
class ConsistencyEdge:
    """Hard agreement constraint between two super nodes on their shared variables.

    ``group_a[i]`` / ``group_b[j]`` identify the overlap assignment of label
    ``i`` of node ``a`` / label ``j`` of node ``b``; equal ids mean agreement.
    """

    a: int
    b: int
    overlap: tuple[int, ...]
    group_a: np.ndarray
    group_b: np.ndarray
    num_groups: int

    def groups(self, side: str) -> np.ndarray:
        return self.group_a if side == "a" else self.group_b


def _group_ids(na: SuperNode, nb: SuperNode, overlap: Sequence[int]):
    pos_a = [na.scope.index(v) for v in overlap]
    pos_b = [nb.scope.index(v) for v in overlap]
    st = strides([na.radices[p] for p in pos_a])
    ka = na.values[:, pos_a] @ st
    kb = nb.values[:, pos_b] @ st
    _, inv = np.unique(np.concatenate([ka, kb]), return_inverse=True)
    inv = inv.astype(np.int64)
    return inv[: ka.size], inv[ka.size:], int(inv.max()) + 1


def make_edge(nodes: Sequence[SuperNode], a: int, b: int) -> ConsistencyEdge:
    if a == b:
        raise InputError("consistency edge endpoints must differ")
    a, b = min(a, b), max(a, b)
    overlap = tuple(sorted(set(nodes[a].scope) & set(nodes[b].scope)))
    if not overlap:
        raise InputError(f"nodes {a} and {b} do not overlap")
    ga, gb, n = _group_ids(nodes[a], nodes[b], overlap)
    return ConsistencyEdge(a, b, overlap, ga, gb, n)


@dataclass
class SuperGraph:
    num_vars: int
    label_count: tuple[int, ...]
    nodes: list[SuperNode]
    edges: list[ConsistencyEdge]
    cover: PatchCover

    @property
    def membership(self) -> np.ndarray:
        return self.cover.membership(self.num_vars)

    def lift(self, x) -> np.ndarray:
        """Super labeling induced by base labeling ``x`` (raises if some patch state is pruned)."""
        x = np.asarray(x, dtype=np.int64)
        X = np.empty(len(self.nodes), dtype=np.int64)
        for k, node in enumerate(self.nodes):
            X[k] = node.index_of(x[list(node.scope)])
            if X[k] < 0:
                raise InputError(f"labeling is not expressible at super node {k}")
        return X

    def check_super_labeling(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64).ravel()
        if X.size != len(self.nodes):
            raise InputError("super labeling length mismatch")
        for k, node in enumerate(self.nodes):
            if not 0 <= X[k] < node.num_labels:
                raise InputError(f"label {X[k]} out of range at node {k}")
        return X

    def restricted(self, keep: Sequence[np.ndarray]) -> "SuperGraph":
        """Copy with each node's labels reduced to the boolean mask ``keep[k]``."""
        nodes = [SuperNode(n.scope, n.radices, n.labels[m], n.unary[m]) for n, m in zip(self.nodes, keep)]
        edges = [make_edge(nodes, e.a, e.b) for e in self.edges]
        return SuperGraph(self.num_vars, self.label_count, nodes, edges, self.cover)


def _covering_patch(containing, scope) -> int:
    common = set(containing[scope[0]])
    for v in scope[1:]:
        common &= containing[v]
    return min(common) if common else -1


def build_super_graph(graph: FactorGraph, cover: PatchCover,
                      allowed: Optional[Callable[[int, tuple], bool]] = None,
                      edges: Optional[Sequence[tuple[int, int]]] = None) -> SuperGraph:
    """Fold ``graph`` into super-node unaries over ``cover``.

    Single-variable factors are spread over every patch containing the
    variable with weight 1/k; larger factors go wholly to the first covering
    patch.  ``allowed(node_index, assignment)`` optionally filters patch states.
    """
    containing = [set() for _ in range(graph.num_vars)]
    for p, scope in enumerate(cover.patches):
        for v in scope:
            if v >= graph.num_vars:
                raise CoverError(f"patch {p} references variable {v} outside the graph")
            containing[v].add(p)
    assigned = defaultdict(list)  # patch -> [(factor, weight)]
    for f in graph.factors:
        home = _covering_patch(containing, f.scope)
        if home < 0:
            raise CoverError(f"factor over {f.scope} is not contained in any patch")
        if len(f.scope) == 1:
            v = f.scope[0]
            for p in containing[v]:
                assigned[p].append((f, 1.0 / len(containing[v])))
        else:
            assigned[home].append((f, 1.0))

    nodes = []
    for p, scope in enumerate(cover.patches):
        pred = None if allowed is None else (lambda vals, p=p: allowed(p, vals))
        labels = enumerate_patch_labels(scope, graph.label_count, pred)
        radices = tuple(graph.label_count[i] for i in scope)
        values = label_values(labels, radices)
        unary = np.zeros(labels.size)
        for f, w in assigned[p]:
            pos = [scope.index(v) for v in f.scope]
            idx = values[:, pos] @ strides([radices[q] for q in pos])
            unary += w * f.table[idx]
        nodes.append(SuperNode(scope, radices, labels, unary, values))

    if edges is None:
        edges = select_consistency_edges(cover)
    return SuperGraph(graph.num_vars, graph.label_count, nodes,
                      [make_edge(nodes, a, b) for a, b in edges], cover)


def _overlap_classes(patches) -> dict[frozenset, list[int]]:
    """Map each distinct non-empty pairwise intersection to the patches containing it."""
    sets = [frozenset(p) for p in patches]
    by_var = defaultdict(list)
    for k, s in enumerate(sets):
        for v in s:
            by_var[v].append(k)
    gammas = set()
    for ks in by_var.values():
        for a, b in itertools.combinations(ks, 2):
            gammas.add(sets[a] & sets[b])
    out = {}
    for g in gammas:
        v0 = next(iter(g))
        out[g] = [k for k in by_var[v0] if g <= sets[k]]
    return out


def _connected(members: Sequence[int], adj: dict[int, set]) -> bool:
    members = set(members)
    start = next(iter(members))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w in members and w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(members)


def verify_edge_sufficiency(cover: PatchCover, edges) -> bool:
    """True iff, for every overlap set, the patches containing it are connected by ``edges``."""
    adj = defaultdict(set)
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return all(_connected(m, adj) for m in _overlap_classes(cover.patches).values())


def _grid_edges(geom: GridGeometry) -> list[tuple[int, int]]:
    out = []
    for r in range(geom.rows):
        for c in range(geom.cols):
            k = r * geom.cols + c
            if c + 1 < geom.cols:
                out.append((k, k + 1))
            if r + 1 < geom.rows:
                out.append((k, k + geom.cols))
    return out


def select_consistency_edges(cover: PatchCover) -> list[tuple[int, int]]:
    """An edge set under which zero pairwise cost implies a consistent labeling.

    Sliding stride-1 grid covers get the 4-connected patch lattice.  Other
    covers start from all overlapping pairs and greedily drop edges (in
    sorted order, single pass) while the connectivity condition still holds.
    """
    if cover.grid is not None and cover.grid.stride == 1:
        return _grid_edges(cover.grid)
    sets = [frozenset(p) for p in cover.patches]
    classes = _overlap_classes(cover.patches)
    edges = sorted((a, b) for a, b in itertools.combinations(range(len(sets)), 2) if sets[a] & sets[b])
    adj = defaultdict(set)
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    kept = []
    for a, b in edges:
        adj[a].discard(b)
        adj[b].discard(a)
        shared = sets[a] & sets[b]
        if all(_connected(m, adj) for g, m in classes.items() if g <= shared):
            continue
        adj[a].add(b)
        adj[b].add(a)
        kept.append((a, b))
    return kept


def decode(sg: SuperGraph, X) -> tuple[np.ndarray, bool]:
    """Base labeling from a super labeling, plus whether all patches agree.

    Each variable takes its value from the lowest-indexed patch containing it.
    """
    X = sg.check_super_labeling(X)
    x = np.full(sg.num_vars, -1, dtype=np.int64)
    consistent = True
    for k, node in enumerate(sg.nodes):
        vals = node.values[X[k]]
        scope = np.asarray(node.scope)
        fresh = x[scope] < 0
        if consistent and (x[scope][~fresh] != vals[~fresh]).any():
            consistent = False
        x[scope[fresh]] = vals[fresh]
    x[x < 0] = 0
    return x, consistent


def pairwise_cost(sg: SuperGraph, X) -> float:
    for e in sg.edges:
        if e.group_a[X[e.a]] != e.group_b[X[e.b]]:
            return INF
    return 0.0


def super_energy(sg: SuperGraph, X) -> float:
    X = sg.check_super_labeling(X)
    total = sum(float(node.unary[X[k]]) for k, node in enumerate(sg.nodes))
    return total + pairwise_cost(sg, X)


def arc_consistency(sg: SuperGraph) -> list[np.ndarray]:
    """Masks of labels that keep a consistent partner across every edge.

    Labels with infinite unary cost are dropped as well.  Iterates to a fixed
    point; raises if some node loses all labels.
    """
    keep = [np.isfinite(n.unary) for n in sg.nodes]
    incident = defaultdict(list)
    for i, e in enumerate(sg.edges):
        incident[e.a].append(i)
        incident[e.b].append(i)
    queue = deque(range(len(sg.edges)))
    queued = set(queue)
    while queue:
        ei = queue.popleft()
        queued.discard(ei)
        e = sg.edges[ei]
        for src, dst, gs, gd in ((e.a, e.b, e.group_a, e.group_b), (e.b, e.a, e.group_b, e.group_a)):
            present = np.zeros(e.num_groups, dtype=bool)
            present[gs[keep[src]]] = True
            drop = keep[dst] & ~present[gd]
            if not drop.any():
                continue
            keep[dst] = keep[dst] & ~drop
            if not keep[dst].any():
                raise ModelError(f"super node {dst} has no label consistent with its neighbours")
            for other in incident[dst]:
                if other not in queued:
                    queue.append(other)
                    queued.add(other)
    for k, m in enumerate(keep):
        if not m.any():
            raise ModelError(f"super node {k} has only infinite-cost labels")
    return keep
