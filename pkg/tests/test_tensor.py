"""Engine tests: arithmetic, broadcasting, reductions, and gradient rules.

Analytic backward formulas are checked against central finite differences
computed in float64 precision, and forwards against plain-numpy oracles.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2n import tensor as T
from m2n.tensor import ShapeError, Tensor


def rnd(*shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) * scale).astype(np.float32)


def fd_grads(build, leaves, h=1e-4):
    """Central finite differences of build() w.r.t. each leaf, in float64."""
    out = []
    for leaf in leaves:
        g = np.zeros(leaf.data.shape, dtype=np.float64)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            plus, minus = np.float32(float(orig) + h), np.float32(float(orig) - h)
            with T.no_grad(), T.precision(np.float64):
                flat[i] = plus
                fp = float(build().item())
                flat[i] = minus
                fm = float(build().item())
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (float(plus) - float(minus))
        out.append(g)
    return out


def assert_grads_close(build, leaves):
    for leaf in leaves:
        leaf.grad = None
    build().backward()
    numeric = fd_grads(build, leaves)
    for leaf, fd in zip(leaves, numeric):
        assert leaf.grad is not None
        # analytic side runs in float32, so allow a small absolute floor
        np.testing.assert_allclose(leaf.grad, fd, rtol=1e-2, atol=2e-3)


class TestForwardBasics:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = Tensor(np.eye(2)) @ a
        np.testing.assert_array_equal(out.data, a.data)

    def test_matmul_basis_selection(self):
        out = Tensor([[1.0, 0.0]]) @ Tensor([[5.0], [7.0]])
        np.testing.assert_array_equal(out.data, [[5.0]])

    def test_matmul_triple_loop_oracle(self):
        a, b = rnd(4, 3, seed=1), rnd(3, 2, seed=2)
        want = np.zeros((4, 2), dtype=np.float64)
        for i in range(4):
            for j in range(2):
                for k in range(3):
                    want[i, j] += float(a[i, k]) * float(b[k, j])
        got = (Tensor(a) @ Tensor(b)).data
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(rnd(2, 3)) @ Tensor(rnd(4, 2))

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_tanh_zero(self):
        assert T.tanh(Tensor([0.0])).data[0] == 0.0

    def test_softmax_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_softmax_stabilized(self):
        out = T.softmax(Tensor([100.0, 0.0]), axis=-1).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0, abs=1e-6)
        assert out[1] == pytest.approx(0.0, abs=1e-6)

    def test_reduce_mean_simple(self):
        assert T.reduce_mean(Tensor([1.0, 2.0, 3.0])).item() == pytest.approx(2.0)

    def test_reduce_max_axis0(self):
        out = T.reduce_max(Tensor([[1.0, 5.0], [4.0, 2.0]]), axis=0)
        np.testing.assert_array_equal(out.data, [4.0, 5.0])

    def test_reduce_empty_axis_errors(self):
        with pytest.raises(ShapeError):
            T.reduce_sum(Tensor(np.zeros((0, 3))), axis=0)

    def test_broadcast_tiling_oracle(self):
        n, d = 5, 7
        w = rnd(n, n, 1, seed=3)
        f = rnd(n, n, d, seed=4)
        got = (Tensor(w) * Tensor(f)).data
        want = np.tile(w, (1, 1, d)) * f
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_non_broadcastable_errors(self):
        with pytest.raises(ShapeError):
            Tensor(rnd(3, 4)) + Tensor(rnd(2, 4))

    def test_concat_matches_numpy(self):
        a, b = rnd(2, 3, seed=5), rnd(4, 3, seed=6)
        got = T.concat([Tensor(a), Tensor(b)], axis=0).data
        np.testing.assert_array_equal(got, np.concatenate([a, b], axis=0))

    def test_take_rows(self):
        a = rnd(6, 4, seed=7)
        got = T.take_rows(Tensor(a), [4, 0, 4]).data
        np.testing.assert_array_equal(got, a[[4, 0, 4]])

    def test_take_rows_out_of_range(self):
        with pytest.raises(ShapeError):
            T.take_rows(Tensor(rnd(3, 2)), [3])

    def test_finite_on_finite_inputs(self):
        x = Tensor(rnd(4, 6, seed=8, scale=10.0))
        out = T.softmax(T.tanh(x) @ Tensor(rnd(6, 3, seed=9)), axis=-1)
        assert np.all(np.isfinite(out.data))


class TestConv2d:
    def test_matches_direct_convolution(self):
        h, w, cin, cout = 5, 5, 3, 2
        x, k = rnd(h, w, cin, seed=10), rnd(3, 3, cin, cout, seed=11)
        b = rnd(cout, seed=12)
        got = T.conv2d(Tensor(x), Tensor(k), Tensor(b)).data
        xp = np.pad(x.astype(np.float64), ((1, 1), (1, 1), (0, 0)))
        want = np.zeros((h, w, cout))
        for i in range(h):
            for j in range(w):
                for dy in range(3):
                    for dx in range(3):
                        want[i, j] += xp[i + dy, j + dx] @ k[dy, dx].astype(np.float64)
        want += b
        np.testing.assert_allclose(got, want, atol=1e-4)

    def test_preserves_shape(self):
        out = T.conv2d(Tensor(rnd(4, 4, 5)), Tensor(rnd(3, 3, 5, 5)))
        assert out.shape == (4, 4, 5)

    def test_rejects_even_kernel(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(rnd(4, 4, 2)), Tensor(rnd(2, 2, 2, 2)))

    def test_gradients(self):
        x = Tensor(rnd(3, 3, 2, seed=13), requires_grad=True)
        k = Tensor(rnd(3, 3, 2, 2, seed=14), requires_grad=True)
        b = Tensor(rnd(2, seed=15), requires_grad=True)
        assert_grads_close(lambda: T.reduce_sum(T.tanh(T.conv2d(x, k, b))), [x, k, b])


class TestBackward:
    def test_square_gradient(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).reshape(()).backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_fanout_accumulates(self):
        x = Tensor([1.5], requires_grad=True)
        (x + x).reshape(()).backward()
        np.testing.assert_allclose(x.grad, [2.0])

    def test_non_scalar_backward_errors(self):
        x = Tensor(rnd(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_backward_without_requires_grad_errors(self):
        with pytest.raises(ValueError):
            T.reduce_sum(Tensor(rnd(3))).backward()

    def test_repeated_backward_accumulates(self):
        # pinned behavior: a second backward on the same graph adds in
        x = Tensor([2.0], requires_grad=True)
        loss = T.reduce_sum(x * x)
        loss.backward()
        loss.backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_view_fanout_no_aliasing(self):
        # the same reshaped tensor consumed twice: gradients must add, not
        # stomp a shared buffer
        x = Tensor(rnd(2, 3, seed=16), requires_grad=True)
        y = x.reshape(6)
        assert_grads_close(lambda: T.reduce_sum(x.reshape(6) * x.reshape(6)), [x])
        del y

    def test_grad_shape_matches(self):
        x = Tensor(rnd(4, 5, seed=17), requires_grad=True)
        T.reduce_sum(T.sigmoid(x)).backward()
        assert x.grad.shape == x.data.shape

    def test_no_grad_blocks_recording(self):
        x = Tensor(rnd(3), requires_grad=True)
        with T.no_grad():
            y = T.reduce_sum(x * x)
        assert y._backward_fn is None and not y.requires_grad


class TestGradientFormulas:
    def test_add_mul_div(self):
        a = Tensor(rnd(3, 4, seed=20), requires_grad=True)
        b = Tensor(rnd(3, 4, seed=21, scale=0.5) + 2.0, requires_grad=True)
        assert_grads_close(lambda: T.reduce_sum((a + b) * a / b), [a, b])

    def test_broadcast_bias(self):
        a = Tensor(rnd(4, 3, seed=22), requires_grad=True)
        b = Tensor(rnd(3, seed=23), requires_grad=True)
        assert_grads_close(lambda: T.reduce_sum(T.tanh(a + b)), [a, b])

    def test_matmul(self):
        a = Tensor(rnd(3, 4, seed=24), requires_grad=True)
        b = Tensor(rnd(4, 2, seed=25), requires_grad=True)
        assert_grads_close(lambda: T.reduce_sum(T.sigmoid(a @ b)), [a, b])

    def test_softmax_fd(self):
        # whole-op check: gradient matches finite differences
        x = Tensor(rnd(4, 5, seed=26), requires_grad=True)
        w = Tensor(rnd(5, seed=27), requires_grad=False)
        assert_grads_close(lambda: T.reduce_sum(T.softmax(x, axis=-1) * w), [x])

    def test_unary_chain(self):
        x = Tensor(rnd(3, 3, seed=28, scale=0.5) + 1.5, requires_grad=True)
        assert_grads_close(
            lambda: T.reduce_sum(T.log(x) + T.sqrt(x) + T.exp(-x) + T.relu(x)), [x]
        )

    def test_clamp_gradient_inside_and_outside(self):
        x = Tensor(np.array([-2.0, 0.5, 2.0], dtype=np.float32), requires_grad=True)
        T.reduce_sum(T.clamp(x, -1.0, 1.0)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_reduce_mean_max_grads(self):
        x = Tensor(rnd(4, 6, seed=29), requires_grad=True)
        assert_grads_close(
            lambda: T.reduce_sum(T.reduce_mean(x, axis=1) + T.reduce_max(x, axis=1)), [x]
        )

    def test_max_gradient_first_argmax(self):
        x = Tensor(np.array([1.0, 3.0, 3.0, 0.0], dtype=np.float32), requires_grad=True)
        T.reduce_max(x).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])

    def test_transpose_reshape_concat_take(self):
        a = Tensor(rnd(3, 4, seed=30), requires_grad=True)
        b = Tensor(rnd(2, 4, seed=31), requires_grad=True)

        def build():
            joined = T.concat([a, b], axis=0)
            picked = T.take_rows(joined, [0, 4, 2, 2])
            return T.reduce_sum(T.tanh(picked.T @ picked))

        assert_grads_close(build, [a, b])


@given(
    st.integers(2, 6),
    st.integers(2, 6),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_softmax_rows_sum_to_one(n, d, seed):
    # moderate logits: float32 keeps every output strictly inside (0, 1)
    x = Tensor(rnd(n, d, seed=seed, scale=1.5))
    out = T.softmax(x, axis=-1).data
    assert np.all(out > 0) and np.all(out < 1)
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(n), atol=1e-6)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_unbroadcast_sum_property(n, d, seed):
    # gradient of a broadcast operand sums over the broadcast axes
    a = Tensor(rnd(n, d, seed=seed), requires_grad=True)
    b = Tensor(rnd(d, seed=seed + 1), requires_grad=True)
    T.reduce_sum(a * b).backward()
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0), rtol=1e-5, atol=1e-6)


def test_precision_context():
    with T.precision(np.float64):
        x = Tensor(np.ones(3))
        assert x.data.dtype == np.float64
        assert (x + 1.0).data.dtype == np.float64
    assert Tensor(np.ones(3)).data.dtype == np.float32
