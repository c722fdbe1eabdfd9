import numpy as np
import pytest

from skelcanon import diffengine as de
from skelcanon.errors import MissingGradients, NotScalar, ShapeMismatch

from conftest import assert_grads_match


# ---------------------------------------------------------------------------
# forward values


def test_conv1d_identity_kernel():
    x = de.tensor([[1.0, 2.0, 3.0]])
    w = de.tensor([[[1.0]]])
    out = de.conv1d(x, w)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_conv1d_hand_example():
    x = de.tensor([[1.0, 2.0, 3.0]])
    w = de.tensor([[[1.0, 1.0]]])
    b = de.tensor([0.0])
    out = de.conv1d(x, w, b, stride=1, padding=0)
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])


def test_conv1d_output_length():
    rng = np.random.default_rng(0)
    for t, k, s, p in [(64, 8, 2, 3), (64, 7, 1, 3), (10, 3, 2, 1), (5, 5, 1, 0)]:
        x = de.tensor(rng.normal(size=(2, 4, t)))
        w = de.tensor(rng.normal(size=(6, 4, k)))
        out = de.conv1d(x, w, stride=s, padding=p)
        assert out.shape == (2, 6, (t + 2 * p - k) // s + 1)


def test_conv1d_shape_errors():
    x = de.tensor(np.zeros((4, 3)))
    w = de.tensor(np.zeros((2, 5, 3)))
    with pytest.raises(ShapeMismatch):
        de.conv1d(x, w)
    with pytest.raises(ShapeMismatch):
        de.conv1d(de.tensor(np.zeros((4, 2))), de.tensor(np.zeros((2, 4, 5))))


def test_leaky_relu_values():
    x = de.tensor([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(de.leaky_relu(x, 0.2).data, [-0.2, 0.0, 2.0])
    np.testing.assert_allclose(de.leaky_relu(x, 1.0).data, x.data)


def test_max_pool_values():
    x = de.tensor([[1.0, 3.0, 2.0, 4.0]])
    np.testing.assert_array_equal(de.temporal_max_pool(x, 2).data, [[3.0, 4.0]])
    const = de.tensor(np.full((3, 8), 5.0))
    np.testing.assert_array_equal(de.temporal_max_pool(const, 2).data, np.full((3, 4), 5.0))
    np.testing.assert_array_equal(de.global_max_pool(x).data, [4.0])
    with pytest.raises(ShapeMismatch):
        de.temporal_max_pool(de.tensor(np.zeros((2, 5))), 2)


def test_upsample_nearest():
    x = de.tensor([[1.0, 2.0]])
    np.testing.assert_array_equal(de.upsample_nearest(x, 2).data, [[1.0, 1.0, 2.0, 2.0]])


def test_sigmoid_range_and_log():
    x = de.tensor([-8.0, 0.0, 8.0])
    s = de.sigmoid(x).data
    assert np.all((s > 0) & (s < 1))
    np.testing.assert_allclose(s[1], 0.5)
    # saturated values stay finite and ordered
    sat = de.sigmoid(de.tensor([-500.0, 500.0])).data
    assert sat[0] >= 0.0 and sat[1] <= 1.0
    np.testing.assert_allclose(de.log(de.tensor([1.0, np.e])).data, [0.0, 1.0])


# ---------------------------------------------------------------------------
# backpropagation semantics


def test_backprop_sum_gives_ones():
    p = de.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    de.backpropagate(de.sum_(p))
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_backprop_quadratic():
    p = de.tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = de.mul(de.sum_(de.mul(p, p)), 0.5)
    de.backpropagate(loss)
    np.testing.assert_allclose(p.grad, p.data)


def test_backprop_reuse_counts_twice():
    p = de.tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = de.mul(p, 1.0)
    de.backpropagate(de.sum_(de.add(y, y)))
    np.testing.assert_array_equal(p.grad, [2.0, 2.0])


def test_backprop_accumulates_across_calls():
    p = de.tensor(np.ones(3), requires_grad=True)
    loss = de.sum_(p)
    de.backpropagate(loss)
    de.backpropagate(loss)
    np.testing.assert_array_equal(p.grad, 2 * np.ones(3))


def test_backprop_requires_scalar():
    p = de.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NotScalar):
        de.backpropagate(de.mul(p, 2.0))


def test_no_grad_blocks_recording():
    p = de.tensor(np.ones(3), requires_grad=True)
    with de.no_grad():
        out = de.sum_(de.mul(p, p))
    assert not out.requires_grad
    assert out._parents == ()


def test_detach_stops_gradient():
    p = de.tensor(np.array([1.0, 2.0]), requires_grad=True)
    de.backpropagate(de.sum_(de.mul(p.detach(), p)))
    np.testing.assert_array_equal(p.grad, [1.0, 2.0])


# ---------------------------------------------------------------------------
# finite-difference oracle: every differentiable op, 5 random shapes each


@pytest.mark.parametrize("seed", range(5))
def test_grad_conv1d(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(6, 16))
    k = int(rng.integers(1, 5))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, 3))
    if t + 2 * p < k:
        p = k
    c_in, c_out, n_b = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    x = rng.normal(size=(n_b, c_in, t))
    w = rng.normal(size=(c_out, c_in, k))
    b = rng.normal(size=c_out)
    t_out = (t + 2 * p - k) // s + 1
    proj = rng.normal(size=(n_b, c_out, t_out))

    def loss(xt, wt, bt):
        return de.sum_(de.mul(de.conv1d(xt, wt, bt, stride=s, padding=p), proj))

    assert_grads_match(loss, [x, w, b], rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_grad_elementwise_and_reductions(seed):
    rng = np.random.default_rng(100 + seed)
    shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
    a = rng.normal(size=shape)
    b = rng.normal(size=shape) + 3.0  # keep away from zero for div
    proj = rng.normal(size=shape)

    def loss(at, bt):
        out = de.div(de.mul(de.sub(at, bt), de.add(at, bt)), bt)
        return de.add(de.mean(de.mul(out, proj)), de.sum_(de.sqrt(de.mul(bt, bt))))

    assert_grads_match(loss, [a, b], rtol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_grad_leaky_abs_sigmoid_log(seed):
    rng = np.random.default_rng(200 + seed)
    # keep samples away from the leaky/abs kink at 0
    a = rng.normal(size=(3, 4))
    a[np.abs(a) < 1e-2] += 0.5
    proj = rng.normal(size=(3, 4))

    def loss(at):
        out = de.leaky_relu(at, 0.2)
        out = de.add(out, de.absolute(at))
        out = de.add(out, de.sigmoid(at))
        out = de.add(out, de.log(de.add(de.mul(at, at), 1.0)))
        return de.sum_(de.mul(out, proj))

    assert_grads_match(loss, [a], rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_grad_pools_and_upsample(seed):
    rng = np.random.default_rng(300 + seed)
    t = 2 * int(rng.integers(2, 6))
    x = rng.normal(size=(2, 3, t))
    proj = rng.normal(size=(2, 3, t // 2))
    proj_g = rng.normal(size=(2, 3))
    proj_u = rng.normal(size=(2, 3, 2 * t))

    def loss(xt):
        pooled = de.temporal_max_pool(xt, 2)
        return de.add(
            de.add(de.sum_(de.mul(pooled, proj)),
                   de.sum_(de.mul(de.global_max_pool(xt), proj_g))),
            de.sum_(de.mul(de.upsample_nearest(xt, 2), proj_u)),
        )

    assert_grads_match(loss, [x], rtol=1e-6)


def test_max_pool_gradient_is_one_hot():
    x = de.tensor(np.array([[1.0, 3.0, 2.0, 4.0]]), requires_grad=True)
    de.backpropagate(de.sum_(de.temporal_max_pool(x, 2)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 1.0]])


@pytest.mark.parametrize("seed", range(5))
def test_grad_shape_ops(seed):
    rng = np.random.default_rng(400 + seed)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 3, 4))
    proj = rng.normal(size=(2, 4, 6))

    def loss(at, bt):
        cat = de.concat([at, bt], axis=1)          # (2, 6, 4)
        mv = de.moveaxis(cat, 1, 2)                # (2, 4, 6)
        sl = de.getitem(mv, (slice(None), slice(0, 3)))
        st = de.stack([sl, sl], axis=0)
        re = de.reshape(st, (2 * 2 * 3 * 6,))
        return de.add(de.sum_(de.mul(mv, proj)), de.mean(de.mul(re, re)))

    assert_grads_match(loss, [a, b], rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_grad_matmul_broadcast_clip(seed):
    rng = np.random.default_rng(500 + seed)
    a = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    c = rng.normal(size=(3, 1))

    def loss(at, wt, ct):
        mm = de.matmul(at, wt)
        br = de.broadcast_to(ct, (3, 4))
        clipped = de.clip_min(de.add(at, br), -0.5)
        return de.add(de.sum_(de.mul(mm, mm)), de.sum_(clipped))

    assert_grads_match(loss, [a, w, c], rtol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_grad_rotate_points(seed):
    rng = np.random.default_rng(600 + seed)
    n_b, n, t = 2, 3, 4
    x = rng.normal(size=(n_b, n, t, 3))
    r = rng.normal(size=(n_b, t, 3, 3))
    proj = rng.normal(size=(n_b, n, t, 3))

    def loss(xt, rt):
        return de.sum_(de.mul(de.rotate_points(xt, rt), proj))

    assert_grads_match(loss, [x, r], rtol=1e-6)


# ---------------------------------------------------------------------------
# optimizer


def _store_with(w):
    store = de.ParamStore("test")
    store.add("w", w)
    return store


def test_adam_zero_grad_leaves_params():
    store = _store_with(np.array([1.0, -2.0]))
    store["w"].grad = np.zeros(2)
    de.adam_step(store, lr=0.1)
    np.testing.assert_array_equal(store["w"].data, [1.0, -2.0])


def test_adam_missing_gradients():
    store = _store_with(np.ones(2))
    with pytest.raises(MissingGradients):
        de.adam_step(store, lr=0.1)


def test_adam_lr_zero_is_identity():
    store = _store_with(np.array([0.3, 0.7]))
    store["w"].grad = np.array([1.0, -1.0])
    de.adam_step(store, lr=0.0)
    np.testing.assert_array_equal(store["w"].data, [0.3, 0.7])


def test_adam_first_step_magnitude():
    # f(w) = w^2/2 at w=1: grad 1; bias-corrected first step is ~lr
    store = _store_with(np.array([1.0]))
    store["w"].grad = np.array([1.0])
    de.adam_step(store, lr=0.1, betas=(0.5, 0.999), eps=1e-8)
    delta = 1.0 - store["w"].data[0]
    assert 0.099 < delta < 0.101
    assert store["w"].grad is None  # cleared


def test_adam_quadratic_monotone_descent():
    store = _store_with(np.full(4, 2.0))
    w = store["w"]
    losses = []
    for _ in range(1000):
        loss = de.mul(de.sum_(de.mul(w, w)), 0.5)
        de.backpropagate(loss)
        losses.append(loss.item())
        de.adam_step(store, lr=1e-3)
    tail = np.array(losses[10:])
    assert np.all(np.diff(tail) <= 0)
    assert losses[-1] < 0.5 * losses[0]
