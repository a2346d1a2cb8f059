"""Randomised invariants across modules."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sub2full import ValidationError
from sub2full.config import ExperimentConfig
from sub2full.forward_model import FWHM_TO_SIGMA, make_source_spectrum
from sub2full.metrics import Roi, cnr, psnr, snr, var_metric
from sub2full.net.layers import (
    avgpool2_backward,
    avgpool2_forward,
    col2im3,
    im2col3,
    upsample2_backward,
    upsample2_forward,
)
from sub2full.phantom import stream
from sub2full.reconstruction import make_gaussian_window
from sub2full.schemes import TrainingPair, apply_n2v_mask, split_train_val

SPECTRUM = make_source_spectrum(450.0, 725.0, 90.0, 128)
BG = Roi((0, 8), (0, 16), "background")
STRUCT = Roi((10, 20), (2, 14), "structure")

images = arrays(np.float64, (24, 16), elements=st.floats(0.01, 1.0))
tensors = arrays(np.float64, (2, 2, 4, 6), elements=st.floats(-10, 10))


def dot(a, b):
    return float(np.sum(a * b))


@settings(max_examples=60, deadline=None)
@given(images, st.floats(0.1, 0.99))
def test_snr_and_cnr_are_scale_invariant(img, scale):
    assume(img[0:8].std() > 1e-3)
    assume(abs(img[10:20, 2:14].mean() - img[0:8].mean()) > 1e-3)
    assert snr(img * scale, BG) == pytest.approx(snr(img, BG), abs=1e-8)
    assert cnr(img * scale, [STRUCT], BG, "sum") == pytest.approx(cnr(img, [STRUCT], BG, "sum"), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(images, st.floats(-0.5, 0.5))
def test_cnr_ignores_offset_and_var_ignores_offset(img, shift):
    assume(abs(img[10:20, 2:14].mean() - img[0:8].mean()) > 1e-3)
    assert cnr(img + shift, [STRUCT], BG, "sum") == pytest.approx(cnr(img, [STRUCT], BG, "sum"), abs=1e-6)
    assert var_metric(img + shift) == pytest.approx(var_metric(img), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(images, images)
def test_psnr_symmetric_and_bounded(a, b):
    p = psnr(a, b)
    assert p == psnr(b, a)
    assert p >= 0 or math.isinf(p)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.05, 1.0), st.floats(0, 0.2))
def test_window_validity_matches_support(c, beta, offset):
    k = SPECTRUM.k
    kc = k[0] + c * (k[-1] - k[0])
    two_sigma = 2 * beta * SPECTRUM.fwhm_k * FWHM_TO_SIGMA
    fits = kc - two_sigma >= k[0] and kc + two_sigma <= k[-1]
    if not fits:
        with pytest.raises(ValidationError):
            make_gaussian_window(c, beta, SPECTRUM)
        return
    w = make_gaussian_window(c, beta, SPECTRUM)
    assert w.weights.min() >= 0 and 0 < w.weights.max() <= 1
    d = offset * (k[-1] - k[0])
    assert w.weight_at(kc + d) == pytest.approx(w.weight_at(kc - d), rel=1e-12)
    assert w.weight_at(kc + w.fwhm_k / 2) == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 3), st.integers(0, 2**32))
def test_n2v_mask_properties(count, radius, seed):
    img = stream(seed, 1).random((12, 10))
    masked, mask = apply_n2v_mask(img, count, radius, seed)
    assert mask.sum() == count
    keep = mask == 0
    np.testing.assert_array_equal(masked[keep], img[keep])
    for r, c in zip(*np.nonzero(mask)):
        window = img[max(0, r - radius) : r + radius + 1, max(0, c - radius) : c + radius + 1]
        assert masked[r, c] in window


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.floats(0.5, 9.0), st.integers(0, 1000))
def test_split_is_a_grouped_partition(n_bscans, per_bscan, ratio, seed):
    pairs = [TrainingPair("n2n", b, 0, 1, tags={"i": i}) for b in range(n_bscans) for i in range(per_bscan)]
    assume(len(pairs) >= 5)
    split = split_train_val(pairs, ratio, seed)
    assert split.train_bscans.isdisjoint(split.val_bscans)
    assert split.train_bscans | split.val_bscans == set(range(n_bscans))
    assert len(split.train) + len(split.val) == len(pairs)
    assert split.val


@settings(max_examples=30, deadline=None)
@given(tensors, tensors)
def test_im2col_adjoint(x, y):
    cols_y = np.random.default_rng(0).standard_normal(im2col3(y).shape)
    assert dot(im2col3(x), cols_y) == pytest.approx(dot(x, col2im3(cols_y, x.shape)), rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(tensors, arrays(np.float64, (2, 2, 2, 3), elements=st.floats(-10, 10)))
def test_pool_and_upsample_adjoints(x, y):
    assert dot(avgpool2_forward(x), y) == pytest.approx(dot(x, avgpool2_backward(y)), rel=1e-9, abs=1e-9)
    assert dot(upsample2_forward(y), x) == pytest.approx(dot(y, upsample2_backward(x)), rel=1e-9, abs=1e-9)


@given(st.lists(st.integers(0, 2**40), min_size=1, max_size=4))
def test_stream_is_a_pure_function_of_its_key(key):
    assert stream(*key).integers(2**62) == stream(*key).integers(2**62)


@given(st.text(min_size=1, max_size=20))
def test_config_hash_ignores_output_dir(path):
    base = ExperimentConfig()
    assert ExperimentConfig({**base.raw, "output_dir": path}).hash() == base.hash()
