import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svdeblur.errors import DimensionMismatch
from svdeblur.metrics import gaussian_window, luma, psnr, ssim, ssim_map

from oracles import ssim_direct


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == math.inf


@pytest.mark.parametrize("offset,expected", [(0.1, 20.0), (math.sqrt(0.001), 30.0)])
def test_psnr_examples(offset, expected):
    a = np.full((6, 5, 3), 0.4)
    assert psnr(a, a + offset) == pytest.approx(expected, abs=1e-9)


def test_psnr_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((20, 20, 3)), np.zeros((20, 21, 3)))


def test_ssim_identical_is_one():
    a = np.random.default_rng(1).uniform(size=(24, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negative_is_low():
    rng = np.random.default_rng(2)
    a = rng.choice([0.1, 0.9], size=(32, 32, 1)) * np.ones(3)
    assert ssim(a, 1.0 - a) < 0.5


def test_ssim_constant_offset_closed_form():
    m1, m2 = 0.4, 0.5
    c1 = 0.01 ** 2
    expected = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)
    assert ssim(np.full((16, 16, 3), m1), np.full((16, 16, 3), m2)) == pytest.approx(expected, abs=1e-12)


def test_ssim_matches_direct_formula():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(19, 23, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_direct(luma(a), luma(b)), abs=1e-10)


def test_ssim_map_is_valid_region():
    assert ssim_map(np.zeros((20, 30)), np.zeros((20, 30))).shape == (10, 20)
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((8, 30)), np.zeros((8, 30)))


def test_luma_weights():
    assert luma(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.299)
    assert luma(np.ones((2, 2, 3))) == pytest.approx(np.ones((2, 2)))
    assert gaussian_window().sum() == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 16, 16, 3))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    assert -1.0 <= ssim(a, b) <= 1.0
