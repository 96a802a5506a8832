"""Patch-based curvature regularization for binary segmentation.

Patch states are bitmasks: pixels in row-major order, top-left pixel in the
least significant bit.  A cost table gives every admissible state of an
s x s patch a non-negative curvature contribution (radians); summed over all
sliding patches it approximates the total absolute turning of the segment
boundary.

Tables for 3x3 and 5x5 patches are generated from windows slightly larger
than the patch that contain a straight boundary or a single corner of known
turning angle: the costs of the patch states seen inside a window must add up
to that angle, which gives a linear system solved with the simplex module.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .energy import INF, Factor, FactorGraph
from .errors import FormatError, InputError, ModelError
from .lifting import (ConsistencyEdge, PatchCover, SuperGraph, SuperNode, label_values,
                      make_edge)
from .simplex import LinearProgram, residuals, solve_lp

HALF_PI = math.pi / 2


# --- bitmask helpers -------------------------------------------------------

def grid_to_mask(grid) -> int:
    flat = np.asarray(grid, dtype=np.int64).ravel()
    return int(sum(int(b) << k for k, b in enumerate(flat)))


def mask_to_grid(mask: int, side: int) -> np.ndarray:
    return np.array([(mask >> k) & 1 for k in range(side * side)], dtype=np.int64).reshape(side, side)


def mask_to_label(mask: int, side: int) -> int:
    """Super-node label encoding (first pixel most significant) of a bitmask."""
    n = side * side
    return int(sum(((mask >> k) & 1) << (n - 1 - k) for k in range(n)))


label_to_mask = mask_to_label  # bit reversal is its own inverse


def parse_grid(rows: Sequence[str]) -> np.ndarray:
    """``'#'`` is foreground (1), ``'.'`` background (0)."""
    return np.array([[1 if ch == "#" else 0 for ch in row] for row in rows], dtype=np.int64)


# --- symmetry ---------------------------------------------------------------

def generate_symmetry_orbit(grid) -> list[np.ndarray]:
    """Closure of a square binary grid under 90-degree rotation, mirroring and inversion.

    Returned sorted by bitmask.
    """
    start = np.asarray(grid, dtype=np.int64)
    if start.ndim != 2 or start.shape[0] != start.shape[1]:
        raise InputError("symmetry orbit needs a square grid")
    seen = {}
    stack = [start]
    while stack:
        g = stack.pop()
        m = grid_to_mask(g)
        if m in seen:
            continue
        seen[m] = g
        stack.extend((np.rot90(g).copy(), g[:, ::-1].copy(), 1 - g))
    return [seen[m] for m in sorted(seen)]


def mask_orbit(mask: int, side: int) -> list[int]:
    return [grid_to_mask(g) for g in generate_symmetry_orbit(mask_to_grid(mask, side))]


# --- tables -----------------------------------------------------------------

@dataclass
class PatchCostTable:
    side: int
    allowed: np.ndarray  # sorted bitmasks
    costs: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.allowed)
        self.allowed = np.asarray(self.allowed, dtype=np.int64)[order]
        self.costs = np.asarray(self.costs, dtype=np.float64)[order]
        if self.allowed.size != self.costs.size:
            raise InputError("allowed states and costs differ in length")
        if (self.costs < -1e-10).any():
            raise ModelError("patch costs must be non-negative")

    def __len__(self):
        return int(self.allowed.size)

    def cost(self, mask: int) -> float:
        k = int(np.searchsorted(self.allowed, mask))
        if k < self.allowed.size and self.allowed[k] == mask:
            return float(self.costs[k])
        return INF

    def as_dict(self) -> dict[int, float]:
        return {int(m): float(c) for m, c in zip(self.allowed, self.costs)}

    def dense(self) -> np.ndarray:
        """Cost per super-node label encoding, ``INF`` for inadmissible states."""
        n = self.side * self.side
        out = np.full(1 << n, INF)
        for m, c in zip(self.allowed, self.costs):
            out[mask_to_label(int(m), self.side)] = c
        return out


def two_by_two_costs() -> PatchCostTable:
    """All 16 states of a 2x2 patch.

    Uniform and half/half states cost 0, a single odd pixel is a right-angle
    corner (pi/2), and the two checkerboards count as four corners (2 pi).
    """
    costs = []
    for m in range(16):
        g = mask_to_grid(m, 2)
        ones = int(g.sum())
        if ones in (0, 4):
            costs.append(0.0)
        elif ones in (1, 3):
            costs.append(HALF_PI)
        elif g[0, 0] == g[1, 1]:
            costs.append(2 * math.pi)
        else:
            costs.append(0.0)
    return PatchCostTable(2, np.arange(16), np.array(costs))


# --- windows ----------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    pixels: np.ndarray = field(compare=False)
    curvature: float
    mask: int = -1

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mask", grid_to_mask(px))

    @property
    def side(self) -> int:
        return int(self.pixels.shape[0])


# 5x5 windows for pi/4-precision curvature on 3x3 patches, with the turning
# angle of the boundary each one depicts.  The nine interior patches of the
# first have bitmasks 38, 311, 447, 452, 486, 503, 504, 508, 510.
CANONICAL_3X3_WINDOWS = (
    ((".####",
      "..###",
      "...##",
      "#####",
      "#####"), 3 * math.pi / 4),
    (("#####",
      "#####",
      "##...",
      "##...",
      "##..."), math.pi / 2),
    (("#####",
      "#####",
      "##...",
      "#....",
      "....."), math.pi / 4),
    (("#####",
      "#####",
      ".....",
      ".....",
      "....."), 0.0),
    (("#####",
      "#####",
      "##.##",
      "#...#",
      "....."), math.pi / 2),
    ((".####",
      "..###",
      "...##",
      "....#",
      "....."), 0.0),
    ((".....",
      ".....",
      "....#",
      "...##",
      "..###"), 0.0),
)


def expand_windows(windows: Sequence[Window]) -> list[Window]:
    """Symmetry closure of a window list, deduplicated by bitmask (first one wins)."""
    out: dict[int, Window] = {}
    for w in windows:
        for g in generate_symmetry_orbit(w.pixels):
            m = grid_to_mask(g)
            if m in out and not math.isclose(out[m].curvature, w.curvature, abs_tol=1e-12):
                raise ModelError(f"window {m} appears with curvatures {out[m].curvature} and {w.curvature}")
            out.setdefault(m, Window(g, w.curvature))
    return [out[m] for m in sorted(out)]


def canonical_windows(expand: bool = True) -> list[Window]:
    base = [Window(parse_grid(rows), kappa) for rows, kappa in CANONICAL_3X3_WINDOWS]
    return expand_windows(base) if expand else base


def rasterize_corner(side: int, angle_in: float, angle_out: float) -> np.ndarray:
    """Pixels strictly left of a boundary that enters the window centre heading
    ``angle_in`` and leaves heading ``angle_out``.

    Angles are measured in array coordinates (x = column, y = row, rows grow
    downward).  Pixel centres on the boundary are background.
    """
    v = (side - 1) / 2.0
    d1 = (math.cos(angle_in), math.sin(angle_in))
    d2 = (math.cos(angle_out), math.sin(angle_out))
    turn = d1[0] * d2[1] - d1[1] * d2[0]
    eps = 1e-9
    cols, rows = np.meshgrid(np.arange(side) - v, np.arange(side) - v)
    left1 = d1[0] * rows - d1[1] * cols > eps
    left2 = d2[0] * rows - d2[1] * cols > eps
    if abs(turn) < eps:
        fg = left1
    elif turn > 0:
        fg = left1 & left2
    else:
        fg = left1 | left2
    return fg.astype(np.int64)


def rasterize_windows(num_directions: int = 16, side: int = 9,
                      max_turn: float = 3 * math.pi / 4) -> list[Window]:
    """Straight and single-corner windows for directions ``2 pi k / num_directions``.

    Only corners whose background side is the convex wedge are rasterized
    directly; the opposite corners come from the inversion symmetry.  Windows
    that end up uniform are dropped.
    """
    step = 2 * math.pi / num_directions
    base = []
    for i in range(num_directions):
        for t in range(num_directions // 2 + 1):
            turn = t * step
            if turn > max_turn + 1e-9:
                continue
            g = rasterize_corner(side, i * step, (i - t) * step)
            if g.min() == g.max():
                continue
            base.append(Window(g, turn))
    return expand_windows(base)


# --- constraint system -----------------------------------------------------

def subpatch_masks(grid: np.ndarray, side: int) -> list[int]:
    n = grid.shape[0]
    return [grid_to_mask(grid[r:r + side, c:c + side])
            for r in range(n - side + 1) for c in range(n - side + 1)]


@dataclass
class ConstraintSystem:
    side: int
    variables: np.ndarray                      # sorted patch bitmasks
    rows: list[tuple[dict[int, int], float]]   # (mask -> multiplicity, rhs)

    def matrix(self):
        index = {int(m): k for k, m in enumerate(self.variables)}
        A = np.zeros((len(self.rows), self.variables.size))
        b = np.zeros(len(self.rows))
        for r, (coef, rhs) in enumerate(self.rows):
            for m, k in coef.items():
                A[r, index[m]] = k
            b[r] = rhs
        return A, b


def assemble_constraints(windows: Sequence[Window], side: int) -> ConstraintSystem:
    """One equality per window: the costs of its interior s x s patches sum to its curvature."""
    variables = set()
    rows, seen = [], set()
    for w in windows:
        if w.side <= side:
            raise InputError(f"window side {w.side} must exceed patch side {side}")
        coef = Counter(subpatch_masks(w.pixels, side))
        variables.update(coef)
        key = (tuple(sorted(coef.items())), w.curvature)
        if key in seen:
            continue
        seen.add(key)
        rows.append((dict(coef), w.curvature))
    return ConstraintSystem(side, np.array(sorted(variables), dtype=np.int64), rows)


def solve_patch_costs(system: ConstraintSystem, seed: int = 0) -> PatchCostTable:
    """Non-negative costs meeting every window equality, picked by a random positive objective."""
    A, b = system.matrix()
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.5, 1.5, size=system.variables.size)
    lp = LinearProgram(c, A, b)
    res = solve_lp(lp)
    if not res.optimal:
        rows = ", ".join(f"row {r} ({v:.3g})" for r, v in res.certificate[:5])
        raise ModelError(f"patch cost system is {res.status}: {rows}")
    viol, _ = residuals(lp, res.x)
    if viol > 1e-8:
        raise ModelError(f"patch cost solution violates a window equality by {viol:.3g}")
    # zero-rhs rows force exact zeros; drop the round-off the basis solve leaves there
    costs = np.where(np.abs(res.x) < 1e-12, 0.0, np.clip(res.x, 0.0, None))
    return PatchCostTable(system.side, system.variables, costs)


def window_sums(table: PatchCostTable, windows: Sequence[Window]) -> np.ndarray:
    costs = table.as_dict()
    return np.array([sum(costs.get(m, INF) for m in subpatch_masks(w.pixels, table.side))
                     for w in windows])


def write_cost_table(table: PatchCostTable, path) -> None:
    """Tab-separated ``bitmask<TAB>cost`` lines under a ``# patch_side=s count=N`` header."""
    lines = [f"# patch_side={table.side} count={len(table)}"]
    lines += [f"{int(m)}\t{float(c):.17g}" for m, c in zip(table.allowed, table.costs)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cost_table(path) -> PatchCostTable:
    text = Path(path).read_text().splitlines()
    if not text:
        raise FormatError("empty cost file", 0)
    m = re.fullmatch(r"#\s*patch_side=(\d+)\s+count=(\d+)\s*", text[0])
    if not m:
        raise FormatError("missing '# patch_side=s count=N' header", 0)
    side, count = int(m.group(1)), int(m.group(2))
    masks, costs = [], []
    offset = len(text[0]) + 1
    for line in text[1:]:
        if line.strip():
            parts = line.split("\t")
            try:
                mask, cost = int(parts[0]), float(parts[1])
                if len(parts) != 2 or not 0 <= mask < (1 << side * side) or not math.isfinite(cost):
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"bad cost line {line!r}", offset) from None
            masks.append(mask)
            costs.append(cost)
        offset += len(line) + 1
    if len(masks) != count:
        raise FormatError(f"header announces {count} rows, found {len(masks)}", 0)
    if len(set(masks)) != len(masks):
        raise FormatError("duplicate bitmask", 0)
    return PatchCostTable(side, np.array(masks, dtype=np.int64), np.array(costs))


MODELS = ("2x2", "3x3", "5x5")


def model_windows(model: str, window_side: Optional[int] = None) -> tuple[list[Window], int]:
    if model == "3x3":
        if window_side not in (None, 5):
            return rasterize_windows(8, window_side), 3
        return canonical_windows(), 3
    if model == "5x5":
        return rasterize_windows(16, window_side or 9), 5
    raise InputError(f"model {model!r} has no window set")


@lru_cache(maxsize=None)
def model_table(model: str, seed: int = 0, window_side: Optional[int] = None) -> PatchCostTable:
    if model == "2x2":
        return two_by_two_costs()
    windows, side = model_windows(model, window_side)
    return solve_patch_costs(assemble_constraints(windows, side), seed)


# --- segmentation -----------------------------------------------------------

def squared_data_term(image, mu_bg: float = 0.0, mu_fg: float = 1.0) -> np.ndarray:
    """Per-pixel cost of each label, (intensity - mean)^2; shape (H, W, 2)."""
    img = np.asarray(image, dtype=np.float64)
    return np.stack([(img - mu_bg) ** 2, (img - mu_fg) ** 2], axis=-1)


@dataclass
class SegmentationInstance:
    data: np.ndarray          # (H, W, 2)
    lam: float
    table: PatchCostTable
    super_graph: SuperGraph

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def energy(self, x) -> float:
        """Data cost plus lam times the patch curvature costs of a base labeling."""
        x = np.asarray(x, dtype=np.int64).reshape(self.shape)
        h, w = self.shape
        total = float(np.take_along_axis(self.data, x[..., None], axis=-1).sum())
        s = self.table.side
        curv = 0.0
        for r in range(h - s + 1):
            for c in range(w - s + 1):
                curv += self.table.cost(grid_to_mask(x[r:r + s, c:c + s]))
        return total + self.lam * curv if curv < INF else INF


def _translated_edge(template: ConsistencyEdge, a: int, b: int, shift: int) -> ConsistencyEdge:
    return ConsistencyEdge(a, b, tuple(v + shift for v in template.overlap),
                           template.group_a, template.group_b, template.num_groups)


def build_segmentation_instance(data, lam: float, table: PatchCostTable) -> SegmentationInstance:
    """Sliding s x s super nodes with unaries lam * cost + membership-weighted data terms."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 2:
        raise InputError("data term must have shape (H, W, 2)")
    if lam < 0:
        raise InputError("lambda must be non-negative")
    h, w = data.shape[:2]
    s = table.side
    cover = PatchCover.sliding(w, h, s)
    n = h * w
    k = cover.membership(n).astype(np.float64)
    weighted = data.reshape(n, 2) / k[:, None]

    labels = np.array(sorted(mask_to_label(int(m), s) for m in table.allowed), dtype=np.int64)
    radices = (2,) * (s * s)
    values = label_values(labels, radices)
    curv = np.array([table.cost(mask_to_label(int(l), s)) for l in labels])
    pix = np.asarray(cover.patches)                       # (N, s*s)
    base = weighted[pix, 0].sum(axis=1)                   # all-background data cost
    delta = weighted[pix, 1] - weighted[pix, 0]
    unary = lam * curv[None, :] + base[:, None] + delta @ values.T

    nodes = [SuperNode(tuple(int(v) for v in p), radices, labels, unary[i], values)
             for i, p in enumerate(pix)]
    geom = cover.grid
    edges = []
    templates = {}
    for r in range(geom.rows):
        for c in range(geom.cols):
            i = r * geom.cols + c
            for j, step in ((i + 1, 1 if c + 1 < geom.cols else None),
                            (i + geom.cols, w if r + 1 < geom.rows else None)):
                if step is None:
                    continue
                if step not in templates:
                    templates[step] = (make_edge(nodes, i, j), nodes[i].scope[0])
                tmpl, origin = templates[step]
                edges.append(_translated_edge(tmpl, i, j, nodes[i].scope[0] - origin))
    sg = SuperGraph(n, (2,) * n, nodes, edges, cover)
    return SegmentationInstance(data, float(lam), table, sg)


def segmentation_factor_graph(data, lam: float, table: PatchCostTable) -> FactorGraph:
    """The same energy as a high-order factor graph (per-pixel data + per-patch tables)."""
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape[:2]
    s = table.side
    factors = [Factor((r * w + c,), data[r, c]) for r in range(h) for c in range(w)]
    patch_table = lam * table.dense() if lam > 0 else np.where(np.isfinite(table.dense()), 0.0, INF)
    for r in range(h - s + 1):
        for c in range(w - s + 1):
            scope = tuple((r + dr) * w + c + dc for dr in range(s) for dc in range(s))
            factors.append(Factor(scope, patch_table))
    return FactorGraph.binary(h * w, factors)


def two_by_two_pairwise_graph(data, lam: float) -> FactorGraph:
    """The 2x2 curvature energy as an 8-connected pairwise energy.

    Per 2x2 patch, a disagreeing edge-adjacent pair costs lam*pi/2 and a
    disagreeing diagonal pair costs -lam*pi/2; this reproduces the 2x2 table
    exactly.
    """
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape[:2]
    factors = [Factor((r * w + c,), data[r, c]) for r in range(h) for c in range(w)]
    adj = np.array([0.0, lam * HALF_PI, lam * HALF_PI, 0.0])
    diag = -adj
    for r in range(h - 1):
        for c in range(w - 1):
            p00, p01, p10, p11 = r * w + c, r * w + c + 1, (r + 1) * w + c, (r + 1) * w + c + 1
            for i, j in ((p00, p01), (p10, p11), (p00, p10), (p01, p11)):
                factors.append(Factor((i, j), adj))
            factors.append(Factor((p00, p11), diag))
            factors.append(Factor((p01, p10), diag))
    return FactorGraph.binary(h * w, factors)


# --- boundary orientation metric ---------------------------------------------

def _boundary_loops(img: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed crack contours as lists of unit moves (dx, dy).

    Every boundary vertex has as many outgoing as incoming edges, so a walk
    that consumes edges can only get stuck where it started.
    """
    h, w = img.shape
    pad = np.zeros((h + 2, w + 2), dtype=np.int64)
    pad[1:-1, 1:-1] = img
    out_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for r, c in zip(*np.nonzero(img)):
        r, c = int(r), int(c)
        if not pad[r, c + 1]:
            out_edges.setdefault((r, c + 1), []).append((r, c))
        if not pad[r + 1, c]:
            out_edges.setdefault((r, c), []).append((r + 1, c))
        if not pad[r + 2, c + 1]:
            out_edges.setdefault((r + 1, c), []).append((r + 1, c + 1))
        if not pad[r + 1, c + 2]:
            out_edges.setdefault((r + 1, c + 1), []).append((r, c + 1))

    loops = []
    for start in sorted(out_edges):
        while out_edges[start]:
            moves = []
            p, d = start, None
            while out_edges.get(p):
                options = out_edges[p]
                q = options[0]
                if d is not None and len(options) > 1:
                    # pinch point: prefer the clockwise turn so diagonal neighbours stay apart
                    cw = (d[1], -d[0])
                    for t in options:
                        if (t[0] - p[0], t[1] - p[1]) == cw:
                            q = t
                options.remove(q)
                d = (q[0] - p[0], q[1] - p[1])
                moves.append((d[1], d[0]))
                p = q
            loops.append(moves)
    return loops


def boundary_direction_histogram(binary) -> Counter:
    """Boundary length (unit pixel edges) per orientation bin k, i.e. angle k*pi/8 mod pi.

    Each contour is split into maximal straight runs.  Inside a staircase
    (both neighbouring runs point the same way) a run's orientation is that of
    its own vector plus half of each neighbour, so unit steps read as
    diagonals; a run between two corners keeps its own direction.
    """
    img = (np.asarray(binary) > 0).astype(np.int64)
    hist: Counter = Counter()
    for moves in _boundary_loops(img):
        runs = []
        for m in moves:
            if runs and runs[-1][0] == m:
                runs[-1][1] += 1
            else:
                runs.append([m, 1])
        if len(runs) > 1 and runs[0][0] == runs[-1][0]:
            runs[0][1] += runs[-1][1]
            runs.pop()
        vecs = [(m[0] * n, m[1] * n) for m, n in runs]
        for k, (m, n) in enumerate(runs):
            tx, ty = vecs[k]
            prev, nxt = runs[k - 1][0], runs[(k + 1) % len(runs)][0]
            if len(runs) > 2 and prev == nxt:
                pv, nv = vecs[k - 1], vecs[(k + 1) % len(vecs)]
                tx += 0.5 * (pv[0] + nv[0])
                ty += 0.5 * (pv[1] + nv[1])
            angle = math.atan2(ty, tx) % math.pi
            hist[int(round(angle / (math.pi / 8))) % 8] += n
    return hist


def fraction_in_bins(hist: Counter, bins) -> float:
    total = sum(hist.values())
    if total == 0:
        return 1.0
    return sum(hist.get(b, 0) for b in bins) / total


AXIS_BINS = (0, 4)
QUARTER_PI_BINS = (0, 2, 4, 6)
