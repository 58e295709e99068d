import numpy as np
import pytest
from hypothesis import given, strategies as st

import switchlab as sl
from switchlab.errors import AllWeightsZero
from switchlab.kernels import (
    kernel_eval,
    spatial_smoothing_matrix,
    temporal_smoothing_matrix,
    temporal_weights,
)


def test_kernel_values_at_zero():
    assert kernel_eval(np.array([0.0]), "epanechnikov")[0] == pytest.approx(0.75)
    assert kernel_eval(np.array([0.0]), "triangular")[0] == pytest.approx(1.0)
    assert kernel_eval(np.array([0.0]), "quartic")[0] == pytest.approx(15 / 16)


@pytest.mark.parametrize("family", ["epanechnikov", "triangular", "quartic"])
def test_kernel_support_and_symmetry(family):
    u = np.linspace(-2, 2, 401)
    k = kernel_eval(u, family)
    assert np.all(k[np.abs(u) > 1] == 0)
    assert np.all(k >= 0)
    assert np.allclose(k, k[::-1])


def test_unknown_kernel_rejected():
    with pytest.raises(ValueError):
        kernel_eval(np.array([0.0]), "gaussian")


@given(
    t=st.integers(min_value=1, max_value=20),
    m=st.integers(min_value=2, max_value=20),
    h=st.floats(min_value=0.05, max_value=2.0),
)
def test_temporal_weights_sum_to_one(t, m, h):
    if t > m:
        t = m
    w = temporal_weights(sl.KernelSpec(h=h), t, m)
    assert w.shape == (m,)
    assert np.all(w >= 0)
    assert np.sum(w) == pytest.approx(1.0)


def test_temporal_weights_peak_at_target():
    w = temporal_weights(sl.KernelSpec(h=0.2), 5, 10)
    assert np.argmax(w) == 4


def test_tiny_bandwidth_keeps_own_point():
    # Even when the kernel covers only the target point itself, the row is
    # well defined (identity smoothing), never all-zero.
    w = temporal_weights(sl.KernelSpec(h=1e-6), 3, 10)
    assert w[2] == pytest.approx(1.0)


def test_all_weights_zero_raised():
    with pytest.raises(AllWeightsZero):
        temporal_weights(sl.KernelSpec(h=np.nan), 3, 10)


def test_smoothing_matrix_rows_normalized():
    W = temporal_smoothing_matrix(sl.KernelSpec(h=0.3), 12)
    assert W.shape == (12, 12)
    assert np.allclose(W.sum(axis=1), 1.0)


def test_spatial_smoothing_matrix_rows_normalized():
    coords = np.array([[0.1, 0.1], [0.9, 0.1], [0.5, 0.9], [0.2, 0.6]])
    W = spatial_smoothing_matrix(sl.KernelSpec(h=0.2, h_spatial=0.8), coords)
    assert W.shape == (4, 4)
    assert np.allclose(W.sum(axis=1), 1.0)
    assert np.all(W >= 0)


def test_spatial_weights_localize():
    coords = np.array([[0.0, 0.0], [0.05, 0.0], [1.0, 1.0]])
    W = spatial_smoothing_matrix(sl.KernelSpec(h=0.2, h_spatial=0.3), coords)
    # The far-away region gets no weight from the first row.
    assert W[0, 2] == 0.0
    assert W[0, 1] > 0.0
