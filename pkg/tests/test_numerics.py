import math
from pathlib import Path

from hypothesis import given, settings, strategies as st
import mpmath
import numpy as np
import pytest

from transatt.numerics import (
    L1,
    L2,
    LstmWeights,
    Param,
    Rng,
    distance,
    distance_grad,
    grad_check,
    lstm_cell_backward,
    lstm_cell_forward,
    softmax,
)

GOLDEN = Path(__file__).parent / "golden"


def random_weights(rng, input_dim, hidden_dim, peepholes=False, scale=0.8):
    h4 = 4 * hidden_dim
    return LstmWeights(
        rng.uniform(-scale, scale, (h4, input_dim)),
        rng.uniform(-scale, scale, (h4, hidden_dim)),
        rng.uniform(-scale, scale, h4),
        rng.uniform(-scale, scale, (3, hidden_dim)) if peepholes else None,
    )


def scalar_lstm(x, h, c, w):
    """Plain-Python LSTM step, one scalar at a time."""
    H, I = w.hidden_dim, w.input_dim

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    pre = []
    for r in range(4 * H):
        s = w.b[r]
        for j in range(I):
            s += w.W[r, j] * x[j]
        for j in range(H):
            s += w.U[r, j] * h[j]
        pre.append(s)
    h_new, c_new = [], []
    for k in range(H):
        zi, zf, zo, zg = pre[k], pre[H + k], pre[2 * H + k], pre[3 * H + k]
        if w.P is not None:
            zi += w.P[0, k] * c[k]
            zf += w.P[1, k] * c[k]
        i, f, g = sig(zi), sig(zf), math.tanh(zg)
        ck = f * c[k] + i * g
        if w.P is not None:
            zo += w.P[2, k] * ck
        o = sig(zo)
        c_new.append(ck)
        h_new.append(o * math.tanh(ck))
    return np.array(h_new), np.array(c_new)


# -- softmax ----------------------------------------------------------------

def test_softmax_symmetric():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])


def test_softmax_ln2():
    np.testing.assert_allclose(softmax([math.log(2.0), 0.0]), [2 / 3, 1 / 3], rtol=1e-15)


def test_softmax_matches_extended_precision():
    rng = np.random.default_rng(3)
    s = rng.normal(0, 3, 5)
    mpmath.mp.dps = 50
    ex = [mpmath.exp(mpmath.mpf(float(v))) for v in s]
    z = sum(ex)
    want = np.array([float(e / z) for e in ex])
    got = softmax(s)
    assert np.max(np.abs(got - want) / want) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=12), st.floats(-1e3, 1e3))
def test_softmax_sum_and_shift_invariance(scores, shift):
    a = softmax(scores)
    assert abs(a.sum() - 1.0) < 1e-12
    assert np.all(a >= 0) and np.all(a <= 1)
    b = softmax(np.array(scores) + shift)
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- distances ----------------------------------------------------------------

def test_distance_examples():
    assert distance([0, 3], [4, 0], L2) == 5.0
    assert distance([0, 3], [4, 0], L1) == 7.0
    x = np.array([0.3, -1.2, 4.0])
    assert distance(x, x, L1) == 0.0 and distance(x, x, L2) == 0.0


def test_distance_dim_mismatch():
    with pytest.raises(ValueError):
        distance([1, 2], [1, 2, 3])


def test_l2_grad_zero_at_coincidence():
    d, g = distance_grad([1.0, 2.0], [1.0, 2.0], L2)
    assert d == 0.0
    np.testing.assert_array_equal(g, [0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.sampled_from([L1, L2]))
def test_distance_metric_axioms(dim, seed, norm):
    rng = np.random.default_rng(seed)
    x, y, z = rng.normal(size=(3, dim))
    assert distance(x, y, norm) == pytest.approx(distance(y, x, norm), abs=1e-12)
    assert distance(x, z, norm) <= distance(x, y, norm) + distance(y, z, norm) + 1e-12
    assert distance(x, y, norm) >= 0


# -- LSTM cell ----------------------------------------------------------------

def test_lstm_zero_weights():
    w = LstmWeights.zeros(3, 2)
    h, c, _ = lstm_cell_forward(np.array([1.0, -2.0, 0.5]), np.zeros(2), np.zeros(2), w)
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_lstm_forget_saturation_keeps_cell():
    w = LstmWeights.zeros(2, 3)
    H = 3
    w.b[H:2 * H] = 50.0
    c_prev = np.array([0.7, -1.3, 2.0])
    _, c, _ = lstm_cell_forward(np.array([0.4, 0.1]), np.zeros(3), c_prev, w)
    np.testing.assert_allclose(c, c_prev, atol=1e-12)


@pytest.mark.parametrize("peepholes", [False, True])
def test_lstm_forward_matches_scalar_oracle(peepholes):
    rng = np.random.default_rng(11)
    w = random_weights(rng, 3, 3, peepholes)
    x, h0, c0 = rng.normal(size=(3, 3))
    h, c, _ = lstm_cell_forward(x, h0, c0, w)
    h_ref, c_ref = scalar_lstm(x, h0, c0, w)
    np.testing.assert_allclose(h, h_ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(c, c_ref, rtol=1e-12, atol=1e-14)


def test_lstm_batch_rows_match_single():
    rng = np.random.default_rng(12)
    w = random_weights(rng, 4, 3)
    X, Hs, Cs = rng.normal(size=(5, 4)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    hb, cb, _ = lstm_cell_forward(X, Hs, Cs, w)
    for r in range(5):
        h, c, _ = lstm_cell_forward(X[r], Hs[r], Cs[r], w)
        np.testing.assert_allclose(hb[r], h, rtol=1e-14)
        np.testing.assert_allclose(cb[r], c, rtol=1e-14)


def test_lstm_shape_mismatch():
    w = LstmWeights.zeros(3, 2)
    with pytest.raises(ValueError):
        lstm_cell_forward(np.zeros(4), np.zeros(2), np.zeros(2), w)


def test_lstm_backward_zero_upstream():
    rng = np.random.default_rng(1)
    w = random_weights(rng, 2, 2)
    _, _, cache = lstm_cell_forward(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2), w)
    g = lstm_cell_backward(np.zeros(2), np.zeros(2), cache, w)
    for v in g.values():
        assert not np.any(v)


def test_lstm_backward_missing_cache():
    with pytest.raises(ValueError):
        lstm_cell_backward(np.zeros(2), np.zeros(2), None, LstmWeights.zeros(2, 2))


def grad_check_where(loss, arrays, grads, floor=1e-4, step=1e-5):
    """``grad_check`` restricted to entries that are exactly zero or at least ``floor``.

    Central differences at step 1e-5 carry about 1e-10 of absolute noise, so a
    1e-6 relative bound only means something for entries above ``floor``;
    smaller entries are covered by :func:`max_abs_fd_error` instead.
    """
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        assert np.shares_memory(flat, arr)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for j in np.flatnonzero((gflat == 0) | (np.abs(gflat) >= floor)):
            worst = max(worst, grad_check(loss, [flat[j:j + 1]], [gflat[j:j + 1]], step))
    return worst


def max_abs_fd_error(loss, arrays, grads, step=1e-5):
    """Max absolute gap to Richardson-extrapolated central differences.

    Combining steps h and h/2 cancels the h^2 truncation term, so the
    remaining error is O(h^4) even where gradients are large.
    """

    def central(arr, i, h):
        old = arr[i]
        arr[i] = old + h
        lp = loss()
        arr[i] = old - h
        lm = loss()
        arr[i] = old
        return (lp - lm) / (2 * h)

    worst = 0.0
    for arr, g in zip(arrays, grads):
        for i in np.ndindex(arr.shape):
            numeric = (4.0 * central(arr, i, step / 2) - central(arr, i, step)) / 3.0
            worst = max(worst, abs(g[i] - numeric))
    return worst


def _cell_problem(w, x, h0, c0, dh, dc):
    _, _, cache = lstm_cell_forward(x, h0, c0, w)
    g = lstm_cell_backward(dh, dc, cache, w)

    def loss():
        h, c, _ = lstm_cell_forward(x, h0, c0, w)
        return float(dh @ h + dc @ c)

    arrays = [x, h0, c0, w.W, w.U, w.b]
    grads = [g["x"], g["h_prev"], g["c_prev"], g["W"], g["U"], g["b"]]
    if w.P is not None:
        arrays.append(w.P)
        grads.append(g["P"])
    return loss, arrays, grads


def _cell_fd_error(w, x, h0, c0, dh, dc):
    return grad_check(*_cell_problem(w, x, h0, c0, dh, dc), 1e-5)


@pytest.mark.parametrize("peepholes", [False, True])
def test_lstm_backward_finite_differences(peepholes):
    rng = np.random.default_rng(5)
    w = random_weights(rng, 2, 2, peepholes)
    x, h0, c0, dh, dc = rng.normal(size=(5, 2))
    assert _cell_fd_error(w, x, h0, c0, dh, dc) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1), st.booleans())
def test_lstm_backward_property(input_dim, hidden_dim, seed, peepholes):
    rng = np.random.default_rng(seed)
    w = random_weights(rng, input_dim, hidden_dim, peepholes)
    x = rng.normal(size=input_dim)
    h0, c0, dh, dc = rng.normal(size=(4, hidden_dim))
    loss, arrays, grads = _cell_problem(w, x, h0, c0, dh, dc)
    assert max_abs_fd_error(loss, arrays, grads) < 1e-9
    assert grad_check_where(loss, arrays, grads) < 1e-6


def test_lstm_backward_forget_open_passes_dc():
    w = LstmWeights.zeros(2, 2)
    w.b[2:4] = 50.0
    _, _, cache = lstm_cell_forward(np.array([0.3, 0.2]), np.zeros(2), np.array([0.5, -0.5]), w)
    dc = np.array([1.5, -0.25])
    g = lstm_cell_backward(np.zeros(2), dc, cache, w)
    np.testing.assert_allclose(g["c_prev"], dc, rtol=1e-12)


# -- grad_check ---------------------------------------------------------------

def test_grad_check_quadratic():
    x = np.array([3.0])
    err = grad_check(lambda: float(x[0] ** 2), [x], [np.array([6.0])], 1e-5)
    assert err < 1e-9


def test_grad_check_independent_parameter():
    x, y = np.array([3.0]), np.array([-1.0])
    err = grad_check(lambda: float(x[0] ** 2), [x, y], [np.array([6.0]), np.array([0.0])], 1e-5)
    assert err < 1e-9
    assert grad_check(lambda: 1.0, [y], [np.zeros(1)]) == 0.0


def test_grad_check_rejects_non_finite():
    x = np.array([1.0])
    with pytest.raises(FloatingPointError):
        grad_check(lambda: float("nan"), [x], [np.zeros(1)])


# -- Param and Rng ------------------------------------------------------------

def test_param_shapes_and_zero_grad():
    p = Param("w", np.ones((2, 3)))
    assert p.grad.shape == p.acc_grad_sq.shape == p.acc_delta_sq.shape == (2, 3)
    p.grad += 1
    p.zero_grad()
    assert not p.grad.any()
    with pytest.raises(ValueError):
        Param("bad", np.ones(3), grad=np.ones(2))


def test_rng_golden_stream():
    lines = (GOLDEN / "splitmix64_seed1234567.txt").read_text().split("\n")
    want = [int(x) for x in lines if x and not x.startswith("#")]
    r = Rng(1234567)
    assert [r.next_u64() for _ in range(10)] == want
    assert [int(v) for v in Rng(1234567).u64_array(10)] == want


def test_rng_vector_and_scalar_draws_agree():
    a, b = Rng(9), Rng(9)
    bulk = a.random(7)
    single = [b.random() for _ in range(7)]
    np.testing.assert_array_equal(bulk, single)
    assert a.counter == b.counter == 7


def test_rng_reproducible_and_state_roundtrip():
    r = Rng(42)
    r.random(5)
    st_ = r.getstate()
    first = r.normal((3,))
    r.setstate(st_)
    np.testing.assert_array_equal(first, r.normal((3,)))
    assert Rng(5).integer(10) == Rng(5).integer(10)


def test_rng_uniform_bounds():
    u = Rng(3).uniform(-0.5, 0.5, (1000,))
    assert u.min() >= -0.5 and u.max() < 0.5
