from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from unictrl import tensor as tc
from unictrl.tensor import GradTape, NonFiniteError, RngStream, ShapeError, Tensor, backward, parameter


def loop_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(m)] for i in range(n)]


def decimal_softmax(xs):
    getcontext().prec = 50
    ds = [Decimal(float(x)) for x in xs]
    top = max(ds)
    ex = [(d - top).exp() for d in ds]
    total = sum(ex)
    return [float(e / total) for e in ex]


# -- matmul -----------------------------------------------------------------


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3)).astype(np.float32)
    out = tc.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_small_known_product():
    out = tc.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5, 6], [7, 8]]))
    expected = loop_matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]])
    assert expected == [[19, 22], [43, 50]]
    np.testing.assert_array_equal(out.data, np.array(expected, dtype=np.float32))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@given(
    st.integers(1, 5),
    st.integers(1, 5),
    st.integers(1, 5),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=40, deadline=None)
def test_matmul_matches_loop_oracle(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, k)).astype(np.float32)
    b = rng.normal(size=(k, m)).astype(np.float32)
    oracle = np.array(loop_matmul(a.astype(np.float64).tolist(), b.astype(np.float64).tolist()))
    np.testing.assert_allclose(tc.matmul(Tensor(a), Tensor(b)).data, oracle, atol=1e-5)


def test_batched_matmul_broadcasts_weight():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
    w = rng.normal(size=(5, 6)).astype(np.float32)
    np.testing.assert_allclose(tc.matmul(Tensor(x), Tensor(w)).data, x @ w, atol=1e-5)


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(tc.softmax(Tensor(np.zeros(4))).data, [0.25] * 4, atol=1e-7)


def test_softmax_single_element():
    np.testing.assert_array_equal(tc.softmax(Tensor([3.7])).data, [1.0])


def test_softmax_large_logits_no_overflow():
    out = tc.softmax(Tensor([1000.0, 0.0])).data
    np.testing.assert_allclose(out, decimal_softmax([1000.0, 0.0]), atol=1e-7)
    assert np.isfinite(out).all()


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        tc.softmax(Tensor(np.zeros((2, 3))), axis=5)


@given(hnp.arrays(np.float32, st.integers(1, 12), elements=st.floats(-80, 80, width=32)))
@settings(max_examples=60, deadline=None)
def test_softmax_matches_extended_precision(x):
    out = tc.softmax(Tensor(x)).data
    np.testing.assert_allclose(out, decimal_softmax(x), atol=1e-6)
    assert abs(float(out.sum()) - 1.0) < 1e-5


# -- finiteness and shape invariants ---------------------------------------


def test_nonfinite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_overflow_is_an_error():
    big = Tensor(np.full(2, 3e38, dtype=np.float32))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        tc.add(big, big)


@given(hnp.array_shapes(min_dims=1, max_dims=4, max_side=4))
def test_shape_product_matches_size(shape):
    t = Tensor(np.zeros(shape))
    assert int(np.prod(t.shape)) == t.data.size


# -- rng --------------------------------------------------------------------


def test_rng_deterministic():
    a = tc.gaussian((5, 7), RngStream(7, 0)).data
    b = tc.gaussian((5, 7), RngStream(7, 0)).data
    np.testing.assert_array_equal(a, b)


def test_rng_seed_separation():
    a = tc.gaussian((16,), RngStream(1, 0)).data
    b = tc.gaussian((16,), RngStream(2, 0)).data
    assert (a != b).any()


def test_rng_counter_advances_and_replays():
    s = RngStream(3, 10)
    first = s.uniform(4)
    second = s.uniform(4)
    assert s.counter == 12
    np.testing.assert_array_equal(RngStream(3, 11).uniform(4), second)
    assert (first != second).any()


def test_rng_law_of_large_numbers():
    x = tc.gaussian((1_000_000,), RngStream(0, 0)).data.astype(np.float64)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.02


def test_rng_integers_inclusive():
    vals = RngStream(5).integers(1, 3, 2000)
    assert set(np.unique(vals)) == {1, 2, 3}


# -- autodiff ---------------------------------------------------------------


def test_product_rule():
    x, y = parameter(3.0), parameter(5.0)
    with GradTape() as tape:
        loss = tc.mul(x, y)
    gx, gy = backward(tape, loss, [x, y])
    assert gx == 5.0 and gy == 3.0


def test_independent_parameter_gets_zero():
    x, theta = parameter([1.0, 2.0]), parameter(np.ones((2, 2)))
    with GradTape() as tape:
        loss = tc.tensor_sum(tc.mul(x, x))
    gx, gt = backward(tape, loss, [x, theta])
    np.testing.assert_array_equal(gx, [2.0, 4.0])
    np.testing.assert_array_equal(gt, np.zeros((2, 2)))


def test_backward_needs_scalar():
    x = parameter([1.0, 2.0])
    with GradTape() as tape:
        y = tc.mul(x, x)
    with pytest.raises(ShapeError):
        backward(tape, y, [x])


def test_tape_records_in_execution_order():
    x = parameter([1.0, 2.0])
    with GradTape() as tape:
        a = tc.mul(x, 2.0)
        b = tc.add(a, x)
        c = tc.tensor_sum(b)
    assert [n.output for n in tape.nodes] == [a, b, c]
    # every node's inputs were produced earlier, so reverse order is a valid topological order
    seen = {id(x)}
    for node in tape.nodes:
        assert all(id(i) in seen or not i.requires_grad for i in node.inputs)
        seen.add(id(node.output))


def _two_layer_loss(params, x, y):
    w1, b1, w2, g, bn = params
    h = tc.silu(tc.linear(x, w1, b1))
    h = tc.layer_norm(h, g, bn)
    logits = tc.matmul(h, w2)
    p = tc.softmax(logits, axis=-1)
    d = tc.sub(p, y)
    return tc.mean(tc.mul(d, d))


def _two_layer_loss_f64(arrs, x, y):
    """Same network in plain float64 numpy, used as the finite-difference oracle."""
    w1, b1, w2, g, bn = arrs
    a = x @ w1 + b1
    h = a / (1 + np.exp(-a))
    mu = h.mean(-1, keepdims=True)
    var = ((h - mu) ** 2).mean(-1, keepdims=True)
    h = (h - mu) / np.sqrt(var + 1e-5) * g + bn
    logits = h @ w2
    e = np.exp(logits - logits.max(-1, keepdims=True))
    p = e / e.sum(-1, keepdims=True)
    return float(((p - y) ** 2).mean())


def _central_difference(f, arrs, i, idx, h=1e-3):
    plus = [a.copy() for a in arrs]
    minus = [a.copy() for a in arrs]
    plus[i][idx] += h
    minus[i][idx] -= h
    return (f(plus) - f(minus)) / (2 * h)


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(0)
    xa = rng.normal(size=(6, 5))
    ya = rng.dirichlet(np.ones(3), size=6)
    params = [
        parameter(rng.normal(size=(5, 8)) * 0.5),
        parameter(rng.normal(size=8) * 0.1),
        parameter(rng.normal(size=(8, 3)) * 0.5),
        parameter(1 + 0.1 * rng.normal(size=8)),
        parameter(0.1 * rng.normal(size=8)),
    ]
    with GradTape() as tape:
        loss = _two_layer_loss(params, Tensor(xa), Tensor(ya))
    grads = backward(tape, loss, params)
    arrs = [p.data.astype(np.float64) for p in params]
    x64, y64 = Tensor(xa).data.astype(np.float64), Tensor(ya).data.astype(np.float64)
    f = lambda ps: _two_layer_loss_f64(ps, x64, y64)  # noqa: E731
    assert abs(f(arrs) - loss.item()) < 1e-6
    for i, p in enumerate(params):
        for flat in rng.choice(p.data.size, size=min(4, p.data.size), replace=False):
            idx = np.unravel_index(flat, p.shape)
            fd = _central_difference(f, arrs, i, idx)
            an = float(grads[i][idx])
            assert abs(an - fd) <= 1e-3 * max(abs(fd), 1e-3), (i, idx, an, fd)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_broadcast_gradients_sum_back(seed):
    rng = np.random.default_rng(seed)
    a = parameter(rng.normal(size=(3, 1, 4)))
    b = parameter(rng.normal(size=(2, 4)))
    with GradTape() as tape:
        loss = tc.tensor_sum(tc.mul(tc.add(a, b), tc.add(a, b)))
    ga, gb = backward(tape, loss, [a, b])
    full = 2 * (a.data.astype(np.float64) + b.data)
    np.testing.assert_allclose(ga, full.sum(axis=1, keepdims=True), rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(gb, full.sum(axis=0), rtol=1e-5, atol=1e-5)


def test_take_accumulates_repeated_ids():
    table = parameter(np.arange(6, dtype=np.float32).reshape(3, 2))
    with GradTape() as tape:
        loss = tc.tensor_sum(tc.take(table, np.array([0, 0, 2])))
    (g,) = backward(tape, loss, [table])
    np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
