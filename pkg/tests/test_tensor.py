import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslv3 import tensor as T
from sslv3.errors import GraphError, NumericError, ParameterError, ShapeError
from sslv3.tensor import ParameterStore, Tensor, backward, grad_check


def fd_grad(fn, arr, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to every entry of ``arr``."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = fn()
        arr[idx] = orig - h
        fm = fn()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


class TestLinear:
    def test_identity(self):
        y = T.linear(Tensor([1.0, 0.0]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [1.0, 0.0])

    def test_forced_arithmetic(self):
        y = T.linear(Tensor([1.0, 2.0]), Tensor([[1.0], [1.0]]), Tensor([0.5]))
        np.testing.assert_array_equal(y.data, [3.5])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        x, w, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 6)), rng.normal(size=6)
        expect = np.zeros((3, 4, 6))
        for i in range(3):
            for j in range(4):
                for o in range(6):
                    acc = b[o]
                    for k in range(5):
                        acc += x[i, j, k] * w[k, o]
                    expect[i, j, o] = acc
        got = T.linear(Tensor(x), Tensor(w), Tensor(b)).data
        assert np.max(np.abs(got - expect)) < 1e-12

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(3,\).*\(2, 2\)"):
            T.linear(Tensor(np.ones(3)), Tensor(np.eye(2)), Tensor(np.zeros(2)))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_ln2(self):
        np.testing.assert_allclose(T.softmax(Tensor([np.log(2.0), 0.0])).data, [2 / 3, 1 / 3], rtol=1e-14)

    def test_extended_precision_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=5.0, size=7)
        mpmath.mp.dps = 50
        ex = [mpmath.exp(mpmath.mpf(float(v))) for v in x]
        s = mpmath.fsum(ex)
        expect = np.array([float(e / s) for e in ex])
        got = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(got, expect, rtol=1e-10)

    def test_large_inputs_stable(self):
        y = T.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        np.testing.assert_allclose(y, [0.5, 0.5, 0.0], atol=1e-300)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_sums_to_one(self, xs):
        y = T.softmax(Tensor(np.array(xs))).data
        assert abs(y.sum() - 1.0) < 1e-6
        assert np.all(y >= 0)


class TestConv1dPadded:
    def test_causal_window(self):
        y = T.conv1d_padded(Tensor([1.0, 2, 3, 4]), Tensor([1.0, 1, 1, 1]), "before")
        np.testing.assert_array_equal(y.data, [1, 3, 6, 10])

    def test_anticausal_window(self):
        y = T.conv1d_padded(Tensor([1.0, 2, 3, 4]), Tensor([1.0, 1, 1, 1]), "after")
        np.testing.assert_array_equal(y.data, [10, 9, 7, 4])

    @pytest.mark.parametrize("side", ["before", "after"])
    def test_identity_kernel(self, side):
        x = np.array([0.3, -1.2, 5.0])
        np.testing.assert_array_equal(T.conv1d_padded(Tensor(x), Tensor([1.0]), side).data, x)

    def test_nonpositive_kernel_rejected(self):
        with pytest.raises(ParameterError):
            T.conv1d_padded(Tensor([1.0, 2.0]), Tensor(np.zeros(0)))

    def test_kernel_longer_than_input(self):
        y = T.conv1d_padded(Tensor([1.0, 2.0]), Tensor([1.0, 10.0, 100.0]), "before")
        np.testing.assert_array_equal(y.data, [100.0, 210.0])

    @given(
        st.integers(1, 9), st.integers(1, 6), st.sampled_from(["before", "after"]), st.integers(0, 2**31 - 1)
    )
    def test_preserves_length_and_matches_direct_sum(self, n, ks, side, seed):
        rng = np.random.default_rng(seed)
        x, k = rng.normal(size=(2, n)), rng.normal(size=ks)
        y = T.conv1d_padded(Tensor(x), Tensor(k), side).data
        assert y.shape == x.shape
        direct = np.zeros_like(x)
        for r in range(2):
            for i in range(n):
                for j in range(ks):
                    src = i - (ks - 1) + j if side == "before" else i + j
                    if 0 <= src < n:
                        direct[r, i] += k[j] * x[r, src]
        assert np.max(np.abs(y - direct)) < 1e-12


class TestBackward:
    def test_sum(self):
        store = ParameterStore()
        w = store.add("w", np.array([0.1, 0.2, 0.3]), "cls")
        backward(w.sum(), store)
        np.testing.assert_array_equal(w.grad, [1, 1, 1])

    def test_quadratic(self):
        store = ParameterStore()
        w = store.add("w", np.array([1.0, -2.0, 3.0]), "cls")
        backward((w * w).sum() / 2, store)
        np.testing.assert_array_equal(w.grad, [1, -2, 3])

    def test_unreachable_gets_zero(self):
        store = ParameterStore()
        w = store.add("w", np.ones(2), "cls")
        u = store.add("u", np.ones((2, 3)), "vqa")
        backward(w.sum(), store)
        np.testing.assert_array_equal(u.grad, np.zeros((2, 3)))

    def test_not_recorded(self):
        with pytest.raises(GraphError):
            backward(Tensor(1.0))
        store = ParameterStore()
        w = store.add("w", np.ones(2), "cls")
        with T.no_grad():
            loss = w.sum()
        with pytest.raises(GraphError):
            backward(loss, store)

    def test_repeated_backward_doubles(self):
        rng = np.random.default_rng(0)
        store = ParameterStore()
        w = store.add("w", rng.normal(size=(3, 2)), "cls")
        loss = T.softmax(T.tanh(Tensor(rng.normal(size=(4, 3))) @ w)).sum(axis=0)[0]
        backward(loss, store)
        first = w.grad.copy()
        backward(loss, store)
        np.testing.assert_array_equal(w.grad, 2 * first)

    def test_mlp_cross_entropy_matches_fd(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(6, 4)))
        y = rng.integers(0, 3, size=6)
        store = ParameterStore()
        w1 = store.add("w1", rng.normal(size=(4, 5)), "backbone")
        b1 = store.add("b1", rng.normal(size=5), "backbone")
        w2 = store.add("w2", rng.normal(size=(5, 3)), "cls")
        b2 = store.add("b2", rng.normal(size=3), "cls")

        def loss_fn():
            hidden = T.tanh(T.linear(x, w1, b1))
            logp = T.log(T.softmax(T.linear(hidden, w2, b2)))
            return -(logp[np.arange(6), y]).mean()

        backward(loss_fn(), store)
        for t in (w1, b1, w2, b2):
            num = fd_grad(lambda: loss_fn().item(), t.data)
            rel = np.abs(t.grad - num) / np.maximum(np.maximum(np.abs(t.grad), np.abs(num)), 1e-8)
            assert rel.max() < 1e-4

    def test_overflow_raises(self):
        with pytest.raises(NumericError):
            T.exp(Tensor([1000.0]))


OPS = ["tanh", "gelu", "softplus", "softmax", "log_softmax", "sigmoid", "layer_norm", "square", "conv", "conv_after", "matmul"]


class TestRandomGraphs:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from(OPS), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
    def test_composite_matches_fd(self, ops, seed):
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        w = store.add("w", rng.normal(size=(3, 4)) * 0.5, "backbone")
        k = store.add("k", rng.normal(size=3), "vqa")
        gam = store.add("gamma", 1.0 + 0.1 * rng.normal(size=4), "cls")
        m = store.add("m", rng.normal(size=(4, 4)) * 0.5, "cls")
        x0 = rng.normal(size=(3, 4))

        def f(_store=None):
            x = Tensor(x0) * w
            for op in ops:
                if op == "layer_norm":
                    x = T.layer_norm(x, gam, Tensor(np.zeros(4)))
                elif op == "square":
                    x = x * x * 0.5
                elif op in ("conv", "conv_after"):
                    x = T.conv1d_padded(x, k, "after" if op == "conv_after" else "before")
                elif op == "matmul":
                    x = x @ m
                else:
                    x = getattr(T, op)(x)
            return (x * Tensor(np.linspace(-1, 1, 12).reshape(3, 4))).sum()

        report = grad_check(f, store, h=1e-5, tol=1e-4)
        assert report.ok, report.errors


class TestGradCheck:
    def _quadratic_store(self):
        rng = np.random.default_rng(1)
        store = ParameterStore()
        store.add("a", rng.normal(size=4), "cls")
        store.add("b", rng.normal(size=(2, 2)), "vqa")
        A = rng.normal(size=(4, 4))
        A = A @ A.T

        def f(s):
            a = s["a"].reshape(1, 4)
            return (a @ Tensor(A) @ a.reshape(4, 1)).sum() + (s["b"] * s["b"]).sum()

        return store, f

    def test_quadratic_exact(self):
        store, f = self._quadratic_store()
        report = grad_check(f, store, h=1e-5, tol=1e-8)
        assert report.max_error < 1e-8

    def test_zero_tolerance_flags_all(self):
        store, f = self._quadratic_store()
        report = grad_check(f, store, tol=0.0)
        assert sorted(report.flagged) == ["a", "b"]

    def test_grad_check_leaves_params_unchanged(self):
        store, f = self._quadratic_store()
        before = {n: t.data.copy() for n, t in store.items()}
        grad_check(f, store)
        for n, t in store.items():
            np.testing.assert_array_equal(t.data, before[n])


class TestParameterStore:
    def test_unique_names(self):
        store = ParameterStore()
        store.add("x", np.ones(1), "cls")
        with pytest.raises(ParameterError):
            store.add("x", np.ones(1), "cls")

    def test_same_tensor_twice(self):
        store = ParameterStore()
        t = store.add("x", np.ones(1), "cls")
        with pytest.raises(ParameterError):
            store.add("y", t, "cls")

    def test_groups_partition(self):
        store = ParameterStore()
        store.add("a", np.ones(1), "backbone")
        store.add("b", np.ones(1), "vqa")
        store.add("c", np.ones(1), "cls")
        assert store.names("vqa") == ["b"]
        assert sorted(store.names("backbone") + store.names("vqa") + store.names("cls")) == store.names()
        with pytest.raises(ParameterError):
            store.add("d", np.ones(1), "head")


class TestOps:
    def test_getitem_scatter(self):
        store = ParameterStore()
        w = store.add("w", np.arange(4.0), "cls")
        backward(w[np.array([0, 0, 3])].sum(), store)
        np.testing.assert_array_equal(w.grad, [2, 0, 0, 1])

    def test_concat_split(self):
        store = ParameterStore()
        a = store.add("a", np.ones((2, 1)), "cls")
        b = store.add("b", np.ones((2, 2)), "cls")
        out = T.concat([a, b * 3.0], axis=1)
        assert out.shape == (2, 3)
        backward(out.sum(), store)
        np.testing.assert_array_equal(b.grad, np.full((2, 2), 3.0))

    def test_l2_norm_zero_subgradient(self):
        store = ParameterStore()
        a = store.add("a", np.zeros((1, 2)), "cls")
        backward(T.l2_norm(a).sum(), store)
        np.testing.assert_array_equal(a.grad, np.zeros((1, 2)))

    def test_broadcast_grad(self):
        store = ParameterStore()
        b = store.add("b", np.zeros(3), "cls")
        backward((Tensor(np.ones((4, 3))) + b).sum(), store)
        np.testing.assert_array_equal(b.grad, [4, 4, 4])
