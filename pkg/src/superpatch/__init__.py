"""High-order discrete energy minimization by partial enumeration and TRW-S."""

from .energy import INF, Factor, FactorGraph, brute_force_min, evaluate, restrict
from .lifting import (PatchCover, SuperGraph, build_super_graph, decode, enumerate_patch_labels,
                      select_consistency_edges, super_energy, verify_edge_sufficiency)
from .trws import SolverOptions, SolveResult, run, solve_pairwise

__all__ = [
    "INF", "Factor", "FactorGraph", "brute_force_min", "evaluate", "restrict",
    "PatchCover", "SuperGraph", "build_super_graph", "decode", "enumerate_patch_labels",
    "select_consistency_edges", "super_energy", "verify_edge_sufficiency",
    "SolverOptions", "SolveResult", "run", "solve_pairwise",
]

__version__ = "0.1.0"
