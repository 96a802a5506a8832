"""Binary deconvolution: recover a binary image from a blurred, noisy observation.

Energy  sum_i ((K * x)_i - y_i)^2  with K the 3x3 mean filter and zero
padding outside the image.  For binary x it expands into unary and pairwise
terms (x^2 = x), every pair lying inside some 3x3 neighbourhood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import Factor, FactorGraph
from .errors import InputError
from .lifting import PatchCover, SuperGraph, build_super_graph

KERNELS = {"mean3": np.full((3, 3), 1.0 / 9.0)}


def convolve_same(x, kernel) -> np.ndarray:
    """Correlation with zero padding, output the size of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    pad = np.pad(x, ((ph, ph), (pw, pw)))
    out = np.zeros_like(x)
    h, w = x.shape
    for dr in range(kh):
        for dc in range(kw):
            out += kernel[dr, dc] * pad[dr:dr + h, dc:dc + w]
    return out


@dataclass
class DeconvProblem:
    observed: np.ndarray
    kernel: np.ndarray
    graph: FactorGraph
    constant: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.shape

    def data_cost(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(self.shape)
        return float(((convolve_same(x, self.kernel) - self.observed) ** 2).sum())

    def super_graph(self, side: int = 3) -> SuperGraph:
        h, w = self.shape
        return build_super_graph(self.graph, PatchCover.sliding(w, h, side))


def deconvolution_problem(observed, kernel="mean3") -> DeconvProblem:
    """Expand the squared residual into factors; ``graph`` energy + ``constant`` = data cost."""
    y = np.asarray(observed, dtype=np.float64)
    if y.ndim != 2:
        raise InputError("observation must be a 2-D image")
    K = KERNELS[kernel] if isinstance(kernel, str) else np.asarray(kernel, dtype=np.float64)
    kh, kw = K.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InputError("kernel sides must be odd")
    h, w = y.shape
    if h < kh or w < kw:
        raise InputError(f"image must be at least {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    unary = np.zeros(h * w)
    pair: dict[tuple[int, int], float] = {}
    for r in range(h):
        for c in range(w):
            taps = [((r + dr - ph) * w + (c + dc - pw), K[dr, dc])
                    for dr in range(kh) for dc in range(kw)
                    if 0 <= r + dr - ph < h and 0 <= c + dc - pw < w]
            for j, kj in taps:
                unary[j] += kj * kj - 2.0 * y[r, c] * kj
            for a in range(len(taps)):
                for b in range(a + 1, len(taps)):
                    (j, kj), (l, kl) = taps[a], taps[b]
                    key = (min(j, l), max(j, l))
                    pair[key] = pair.get(key, 0.0) + 2.0 * kj * kl
    factors = [Factor((j,), [0.0, unary[j]]) for j in range(h * w)]
    factors += [Factor(key, [0.0, 0.0, 0.0, v]) for key, v in sorted(pair.items())]
    return DeconvProblem(y, K, FactorGraph.binary(h * w, factors), float((y ** 2).sum()))


def blurred_observation(truth, kernel="mean3", noise: float = 0.0, seed: int = 0) -> np.ndarray:
    K = KERNELS[kernel] if isinstance(kernel, str) else kernel
    y = convolve_same(truth, K)
    if noise > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise, size=y.shape)
    return y
