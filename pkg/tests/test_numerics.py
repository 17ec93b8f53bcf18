import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pourlstm import numerics as nx
from pourlstm.numerics import Rng, ShapeError


def test_matmul_identity():
    a = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(nx.matmul(nx.identity(2), a), a)


def test_matmul_hand_product():
    out = nx.matmul([[1, 2], [3, 4]], [[5], [6]])
    np.testing.assert_array_equal(out, [[17.0], [39.0]])
    assert out.dtype == np.float64


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"2x3.*2x2"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_rejects_non_matrix():
    with pytest.raises(ShapeError):
        nx.add(np.ones(3), np.ones(3))


def test_elementwise_ops():
    np.testing.assert_array_equal(nx.hadamard([[2, 3]], [[4, 5]]), [[8.0, 15.0]])
    a = np.array([[1.5, -2.0], [0.25, 7.0]])
    np.testing.assert_array_equal(nx.add(a, nx.zeros(2, 2)), a)
    np.testing.assert_array_equal(nx.scale(a, 0), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        nx.hadamard(np.ones((1, 2)), np.ones((2, 1)))
    with pytest.raises(ShapeError):
        nx.add(np.ones((2, 2)), np.ones((2, 3)))


def test_activation_anchors():
    assert nx.sigmoid(np.array([[0.0]]))[0, 0] == 0.5
    assert nx.tanh(np.array([[0.0]]))[0, 0] == 0.0


def test_sigmoid_stable_branch():
    v = nx.sigmoid(np.array([[-709.0]]))[0, 0]
    assert np.isfinite(v)
    assert 0.0 < v <= 1e-300
    assert nx.sigmoid(np.array([[1e6, -1e6]])).tolist() == [[1.0, 0.0]]


@given(st.floats(-30, 30))
def test_sigmoid_symmetry(x):
    s = nx.sigmoid(np.array([[x, -x]]))
    assert abs(s[0, 0] + s[0, 1] - 1.0) <= 1e-12


@settings(max_examples=50)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (4, 2), elements=st.floats(-1e3, 1e3)))
def test_finite_in_finite_out(a, b):
    for out in (nx.matmul(a, b), nx.sigmoid(a), nx.tanh(a), nx.add(a, a), nx.hadamard(a, a), nx.scale(a, -3.5)):
        assert np.all(np.isfinite(out))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)))
def test_identity_left_multiplication_is_exact(a):
    np.testing.assert_array_equal(nx.matmul(nx.identity(a.shape[0]), a), a)


def test_glorot_bounds():
    w = nx.glorot_uniform(Rng(0), 100, 100)
    assert w.shape == (100, 100)
    assert np.abs(w).max() <= np.sqrt(6 / 200)
    assert np.sqrt(6 / 200) == pytest.approx(0.1732, abs=1e-4)
    w = nx.glorot_uniform(Rng(0), 1, 5)
    assert np.abs(w).max() <= 1.0


def test_glorot_seeded_determinism():
    a = nx.glorot_uniform(Rng(42), 7, 3)
    b = nx.glorot_uniform(Rng(42), 7, 3)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != nx.glorot_uniform(Rng(43), 7, 3).tobytes()


def test_glorot_rejects_empty():
    with pytest.raises(ValueError):
        nx.glorot_uniform(Rng(0), 0, 3)
