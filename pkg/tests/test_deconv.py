import numpy as np
import pytest
from scipy import ndimage

from superpatch.deconv import (KERNELS, blurred_observation, convolve_same,
                               deconvolution_problem)
from superpatch.energy import brute_force_min, evaluate
from superpatch.errors import InputError
from superpatch.images import blob_image
from superpatch.trws import run


def test_convolution_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.random((7, 9))
    k = rng.random((3, 3))
    ref = ndimage.correlate(x, k, mode="constant", cval=0.0)
    np.testing.assert_allclose(convolve_same(x, k), ref, atol=1e-12)


def test_expansion_reproduces_data_cost():
    rng = np.random.default_rng(1)
    y = rng.random((6, 5))
    p = deconvolution_problem(y)
    for _ in range(50):
        x = rng.integers(0, 2, size=30)
        assert evaluate(p.graph, x) + p.constant == pytest.approx(p.data_cost(x), abs=1e-9)


def test_interior_coefficients():
    y = np.zeros((7, 7))
    p = deconvolution_problem(y)
    pair = {f.scope: f.table[3] for f in p.graph.factors if len(f.scope) == 2}
    unary = {f.scope[0]: f.table[1] for f in p.graph.factors if len(f.scope) == 1}
    c = 3 * 7 + 3
    assert pair[(c, c + 1)] == pytest.approx(2 / 81 * 6)      # side neighbours share 6 centres
    assert pair[(c, c + 8)] == pytest.approx(2 / 81 * 4)      # diagonal neighbours share 4
    assert pair[(c, c + 2)] == pytest.approx(2 / 81 * 3)
    assert pair[(c, c + 16)] == pytest.approx(2 / 81 * 1)
    assert (c, c + 3) not in pair
    assert unary[c] == pytest.approx(9 / 81)
    assert unary[0] == pytest.approx(4 / 81)                  # corner pixel sits in 4 windows


def test_unary_depends_on_observation():
    y = np.zeros((5, 5))
    y[2, 2] = 1.0
    p = deconvolution_problem(y)
    unary = {f.scope[0]: f.table[1] for f in p.graph.factors if len(f.scope) == 1}
    assert unary[12] == pytest.approx(9 / 81 - 2 / 9)
    assert unary[0] == pytest.approx(4 / 81)


def test_noiseless_blur_is_inverted(jit_warm):
    truth = (blob_image(14, seed=5) > 0.5).astype(float)
    p = deconvolution_problem(blurred_observation(truth))
    r = run(p.super_graph())
    assert r.consistent
    assert r.energy == pytest.approx(-p.constant, abs=1e-9)
    assert p.data_cost(r.base_labeling) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_small_instance_matches_brute_force(jit_warm, seed):
    rng = np.random.default_rng(seed)
    truth = (rng.random((4, 4)) < 0.5).astype(float)
    p = deconvolution_problem(blurred_observation(truth, noise=0.1, seed=seed))
    r = run(p.super_graph())
    x, e = brute_force_min(p.graph)
    assert r.lower_bound <= e + 1e-9
    if r.relative_gap < 1e-9:
        assert r.energy == pytest.approx(e, abs=1e-9)


def test_seeded_noise_is_reproducible():
    truth = blob_image(12, seed=2)
    a = blurred_observation(truth, noise=0.1, seed=3)
    b = blurred_observation(truth, noise=0.1, seed=3)
    c = blurred_observation(truth, noise=0.1, seed=4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_input_validation():
    with pytest.raises(InputError):
        deconvolution_problem(np.zeros(9))
    with pytest.raises(InputError):
        deconvolution_problem(np.zeros((2, 5)))
    with pytest.raises(InputError):
        deconvolution_problem(np.zeros((5, 5)), np.ones((2, 2)))
    assert "mean3" in KERNELS
