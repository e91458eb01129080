import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfhtr import tensor as T
from tfhtr.errors import ConfigError, ContractError, DimensionError, ParseError
from tfhtr.gradcheck import numeric_gradient, relative_error
from tfhtr.serialization import read_array, write_array
from tfhtr.tensor import Tensor, no_grad

from oracles import naive_conv2d


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def grad_error(fn, *arrays, step=1e-5):
    """Max relative error of backprop vs central differences for scalar fn(*tensors)."""
    tensors = [leaf(a) for a in arrays]
    fn(*tensors).backward()
    worst = 0.0
    for t in tensors:
        num = numeric_gradient(lambda: float(fn(*tensors).data), t.data, step)
        worst = max(worst, float(relative_error(t.grad, num).max()))
    return worst


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_and_projection():
    a = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    out = T.matmul(Tensor([[1.0, 0], [0, 0]]), Tensor([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [0.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_is_row_broadcast_of_b_column_sums():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 5)))
    T.tsum(T.matmul(a, b)).backward()
    expected = np.broadcast_to(b.data.sum(axis=1), (3, 4))
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
    num = numeric_gradient(lambda: float(T.tsum(T.matmul(a, b)).data), a.data, 1e-6)
    np.testing.assert_allclose(a.grad, num, rtol=1e-6)


# -- softmax ----------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0, 0])).data, [1 / 3] * 3, rtol=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], rtol=1e-12)


def test_softmax_masked_positions_are_exact_zero():
    out = T.softmax(Tensor([1.0, -np.inf, 2.0])).data
    assert out[1] == 0.0
    assert abs(out.sum() - 1) < 1e-12


def test_softmax_fully_masked_row_is_an_error():
    with pytest.raises(ContractError, match="fully masked attention row"):
        T.softmax(Tensor(np.array([[0.0, 1.0], [-np.inf, -np.inf]])))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2**31))
def test_softmax_rows_sum_to_one_and_shift_invariance(n, m, shift, seed):
    x = np.random.default_rng(seed).normal(0, 5, size=(n, m))
    p = T.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(T.softmax(Tensor(x + shift)).data, p, atol=1e-12)


# -- layer norm -------------------------------------------------------------

def test_layer_norm_examples():
    ones, zeros = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(T.layer_norm(Tensor(np.full((2, 3), 7.0)), ones, zeros).data, 0.0)
    out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(out, [1.0, -1.0], rtol=1e-9)


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ConfigError):
        T.layer_norm(Tensor(np.ones(3)), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


def test_layer_norm_gradient():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 5))
    err = grad_error(lambda x, g, b: T.tsum(T.layer_norm(x, g, b) * Tensor(w)),
                     rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5))
    assert err < 1e-5


# -- backward ---------------------------------------------------------------

def test_backward_sum_and_quadratic():
    x = leaf(np.arange(6.0).reshape(2, 3))
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = leaf([1.0, -2.0, 3.0])
    (T.tsum(y * y) / 2.0).backward()
    np.testing.assert_allclose(y.grad, y.data)


def test_backward_accumulates_across_calls():
    x = leaf([1.0, 2.0])
    T.tsum(x * 3.0).backward()
    T.tsum(x * 3.0).backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_tensor_consumed_twice_accumulates_both_paths():
    rng = np.random.default_rng(2)
    err = grad_error(lambda x: T.tsum(T.tanh(x) * T.exp(x) + x * x), rng.normal(size=(2, 3)))
    assert err < 1e-5


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_grad_shape_matches_data():
    x = leaf(np.ones((2, 3, 4)))
    assert x.grad.shape == x.data.shape
    assert Tensor(np.ones(2)).grad is None


# -- dropout ----------------------------------------------------------------

def test_dropout_eval_is_identity_and_train_is_inverted():
    x = Tensor(np.ones((200, 50)))
    assert T.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    out = T.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05


# -- randomized gradient checks of every op (property test) -----------------

UNARY = {
    "exp": lambda x: T.exp(x),
    "log": lambda x: T.log(T.exp(x) + 1.0),
    "tanh": T.tanh,
    "relu": T.relu,
    "gelu": T.gelu,
    "softmax": lambda x: T.softmax(x, axis=-1),
    "log_softmax": lambda x: T.log_softmax(x, axis=-1),
    "mean": lambda x: T.mean(x, axis=0, keepdims=True),
    "reshape": lambda x: T.reshape(x, (-1,)),
    "transpose": lambda x: T.transpose(x, (1, 0)),
    "swapaxes": lambda x: T.swapaxes(x, 0, 1),
    "getitem": lambda x: x[:, ::2],
    "concat": lambda x: T.concat([x, x * 2.0], axis=1),
    "masked_fill": lambda x: T.masked_fill(x, np.eye(*x.shape, dtype=bool), 0.5),
}
BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (T.exp(b) + 1.0),
    "matmul": lambda a, b: T.matmul(a, T.transpose(b, (1, 0))),
    "broadcast_add": lambda a, b: a + T.mean(b, axis=0, keepdims=True),
}


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(UNARY)), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_unary_op_gradients(name, n, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, m))
    if name == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)    # stay off the kink
    w = rng.normal(size=np.shape(UNARY[name](Tensor(x)).data))
    assert grad_error(lambda t: T.tsum(UNARY[name](t) * Tensor(w)), x) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(BINARY)), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_binary_op_gradients(name, n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    w = rng.normal(size=np.shape(BINARY[name](Tensor(a), Tensor(b)).data))
    assert grad_error(lambda x, y: T.tsum(BINARY[name](x, y) * Tensor(w)), a, b) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.floats(0.0, 0.9), st.integers(0, 2**31))
def test_linear_embedding_cross_entropy_gradients(n, c, eps, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(2, n, 3)), rng.normal(size=(3, c)), rng.normal(size=c)
    targets = rng.integers(0, c, size=(2, n))
    weights = (rng.random((2, n)) < 0.7).astype(float)
    weights[0, 0] = 1.0
    err = grad_error(lambda x, w, b: T.smoothed_cross_entropy(T.linear(x, w, b), targets, eps, weights), x, w, b)
    assert err < 1e-5
    ids = rng.integers(0, 4, size=(2, n))
    vals = rng.normal(size=(2, n, 3))
    assert grad_error(lambda tab: T.tsum(T.embedding(tab, ids) * Tensor(vals)), rng.normal(size=(4, 3))) < 1e-5


def test_conv2d_matches_direct_loops_and_gradients():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 6, 7, 2)), rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)
    for stride in ((1, 1), (2, 1), (2, 2)):
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, (1, 1)).data
        np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, (1, 1)), rtol=1e-10, atol=1e-12)
        probe = rng.normal(size=out.shape)
        err = grad_error(lambda x_, w_, b_: T.tsum(T.conv2d(x_, w_, b_, stride, (1, 1)) * Tensor(probe)), x, w, b)
        assert err < 1e-5


def test_smoothed_cross_entropy_uniform_logits_give_log_classes():
    loss = T.smoothed_cross_entropy(Tensor(np.zeros((3, 83))), np.array([0, 5, 82]), 0.4)
    assert abs(float(loss.data) - np.log(83)) < 1e-12


def test_smoothed_cross_entropy_all_padding_is_an_error():
    with pytest.raises(ContractError):
        T.smoothed_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 1]), 0.1, np.zeros(2))


# -- serialization ----------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=0, max_size=3), st.sampled_from([np.float32, np.float64]),
       st.integers(0, 2**31))
def test_tensor_record_round_trip(shape, dtype, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(dtype)
    buf = io.BytesIO()
    write_array(buf, arr)
    buf.seek(0)
    back = read_array(buf, dtype)
    assert back.shape == arr.shape and back.dtype == dtype
    np.testing.assert_array_equal(back, arr)


def test_tensor_record_layout_is_little_endian_rank_extents_payload():
    buf = io.BytesIO()
    write_array(buf, np.array([[1.0, 2.0]], dtype=np.float32))
    raw = buf.getvalue()
    assert raw[:8] == (2).to_bytes(8, "little")
    assert raw[8:24] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(raw[24:], dtype="<f4").tolist() == [1.0, 2.0]


def test_truncated_tensor_record_is_a_parse_error():
    buf = io.BytesIO()
    write_array(buf, np.ones((3, 3)))
    with pytest.raises(ParseError):
        read_array(io.BytesIO(buf.getvalue()[:-5]), np.float64)
