import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fkkec.errors import InvalidInputError
from fkkec.metrics import null_rss, rss


def test_rss_examples():
    per, mean = rss(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
    assert mean == 1.0 and per.tolist() == [1.0]
    per, mean = rss(np.array([[3.0, 4.0], [0.0, 0.0]]), np.zeros((2, 2)))
    assert per.tolist() == [25.0, 0.0] and mean == 12.5


def test_rss_uses_imaginary_part():
    pred = np.array([[5.0 + 1j, -2.0 + 2j]])
    assert rss(pred, np.array([[1.0, 2.0]]))[1] == 0.0


def test_rss_shape_mismatch():
    with pytest.raises(InvalidInputError):
        rss(np.zeros((2, 3)), np.zeros((3, 2)))


@given(arrays(float, (4, 6), elements=st.floats(-10, 10)))
def test_null_is_zero_predictor(truth):
    assert null_rss(truth) == pytest.approx(rss(np.zeros_like(truth), truth)[1])
    assert rss(truth, truth)[1] == 0.0


def test_truth_object(small_phantom):
    cube, _, truth = small_phantom
    assert null_rss(truth) == pytest.approx(np.mean(np.sum(truth.im_chi_ratio ** 2, axis=1)))
