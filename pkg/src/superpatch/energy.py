"""High-order discrete energies: representation, evaluation and exhaustive search.

An energy is a sum of cost tables over small variable subsets (factors).
Tables are flat arrays in mixed-radix order with the first scope variable as
the most significant digit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, InputError

# Hard-constraint cost.  IEEE infinity gives the arithmetic we need
# (inf + finite = inf, min(inf, v) = v); callers must never subtract it.
INF = float("inf")

DEFAULT_BRUTE_FORCE_CAP = 2**24


def encode(values: Sequence[int], radices: Sequence[int]) -> int:
    """Mixed-radix index of ``values``; ``values[0]`` is the most significant digit."""
    idx = 0
    for v, r in zip(values, radices):
        idx = idx * r + int(v)
    return idx


def decode(index: int, radices: Sequence[int]) -> list[int]:
    out = [0] * len(radices)
    for k in range(len(radices) - 1, -1, -1):
        index, out[k] = divmod(index, radices[k])
    return out


def strides(radices: Sequence[int]) -> np.ndarray:
    s = np.ones(len(radices), dtype=np.int64)
    for k in range(len(radices) - 2, -1, -1):
        s[k] = s[k + 1] * radices[k + 1]
    return s


@dataclass(frozen=True)
class Factor:
    scope: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        scope = tuple(int(i) for i in self.scope)
        object.__setattr__(self, "scope", scope)
        table = np.ascontiguousarray(self.table, dtype=np.float64).ravel()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if not scope:
            raise InputError("factor scope must be non-empty")
        if any(b <= a for a, b in zip(scope, scope[1:])):
            raise InputError(f"factor scope {scope} must be strictly increasing")
        if np.isnan(table).any() or (table == -np.inf).any():
            raise InputError("factor table entries must be finite or +inf")


@dataclass(frozen=True)
class FactorGraph:
    """Variables with finite label sets plus cost-table factors."""

    label_count: tuple[int, ...]
    factors: tuple[Factor, ...] = field(default_factory=tuple)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.label_count)
        object.__setattr__(self, "label_count", counts)
        object.__setattr__(self, "factors", tuple(self.factors))
        if any(c < 1 for c in counts):
            raise InputError("every variable needs at least one label")
        n = len(counts)
        for f in self.factors:
            if f.scope[0] < 0 or f.scope[-1] >= n:
                raise InputError(f"factor scope {f.scope} out of range for {n} variables")
            size = int(np.prod([counts[i] for i in f.scope]))
            if f.table.size != size:
                raise InputError(
                    f"factor over {f.scope} has {f.table.size} entries, expected {size}"
                )

    @property
    def num_vars(self) -> int:
        return len(self.label_count)

    @classmethod
    def binary(cls, num_vars: int, factors=()) -> "FactorGraph":
        return cls((2,) * num_vars, tuple(factors))

    def with_factors(self, factors) -> "FactorGraph":
        return FactorGraph(self.label_count, self.factors + tuple(factors))

    def radices(self, scope: Sequence[int]) -> list[int]:
        return [self.label_count[i] for i in scope]

    def check_labeling(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64).ravel()
        if x.size != self.num_vars:
            raise InputError(f"labeling has {x.size} values, graph has {self.num_vars} variables")
        if (x < 0).any() or (x >= np.asarray(self.label_count)).any():
            raise InputError("labeling value out of range")
        return x


def restrict(x, scope: Sequence[int]) -> list[int]:
    """The sub-assignment of ``x`` on ``scope``, in scope order."""
    return [int(x[i]) for i in scope]


def factor_index(graph: FactorGraph, factor: Factor, x) -> int:
    return encode(restrict(x, factor.scope), graph.radices(factor.scope))


def evaluate(graph: FactorGraph, x) -> float:
    x = graph.check_labeling(x)
    total = 0.0
    for f in graph.factors:
        total += f.table[factor_index(graph, f, x)]
    return float(total)


def _enumerate_block(radices: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Assignments with mixed-radix index in [start, stop), one per row."""
    z = np.arange(start, stop, dtype=np.int64)
    out = np.empty((z.size, radices.size), dtype=np.int64)
    for k in range(radices.size - 1, -1, -1):
        out[:, k] = z % radices[k]
        z //= radices[k]
    return out


def brute_force_min(graph: FactorGraph, cap: int = DEFAULT_BRUTE_FORCE_CAP,
                    block: int = 1 << 16) -> tuple[np.ndarray, float]:
    """Global minimizer by enumeration; ties go to the lexicographically smallest labeling."""
    radices = np.asarray(graph.label_count, dtype=np.int64)
    total = int(np.prod([int(r) for r in radices])) if radices.size else 1
    if total > cap:
        raise CapacityError(f"{total} assignments exceed the brute-force cap {cap}")
    scopes = [(np.asarray(f.scope), strides(graph.radices(f.scope)), f.table) for f in graph.factors]
    best_e, best_z = INF, 0
    for start in range(0, total, block):
        stop = min(total, start + block)
        cols = np.ascontiguousarray(_enumerate_block(radices, start, stop).T)
        e = np.zeros(stop - start)
        for scope, st, table in scopes:
            idx = cols[scope[0]] * st[0]
            for v, w in zip(scope[1:], st[1:]):
                idx += cols[v] * w
            e += table[idx]
        k = int(np.argmin(e))
        if e[k] < best_e:
            best_e, best_z = float(e[k]), start + k
    return np.asarray(decode(best_z, list(radices)), dtype=np.int64), best_e
