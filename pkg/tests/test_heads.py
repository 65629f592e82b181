import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslv3 import tensor as T
from sslv3.errors import ContractError, ShapeError
from sslv3.heads import (SOFTPLUS_ONE, HeadConfig, init_heads, mc_classify, quality_forward, ssr_forward,
                         tune_cls, vsr_forward)
from sslv3.tensor import ParameterStore, Tensor, backward


def head_store(d=6, n_t=4, seed=0, **kw):
    store = ParameterStore()
    init_heads(store, d, n_t, HeadConfig(**kw), np.random.default_rng(seed))
    return store


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def conv_oracle(x, k, side):
    """Direct summation over an explicitly zero-padded sequence."""
    ks, n = len(k), len(x)
    pad = np.concatenate([np.zeros(ks - 1), x]) if side == "before" else np.concatenate([x, np.zeros(ks - 1)])
    return np.array([sum(k[j] * pad[i + j] for j in range(ks)) for i in range(n)])


class TestSSR:
    def test_uniform_weights_give_mean(self):
        store = head_store()
        store["vqa.ssr.weight_net.w"].data[:] = 0.0
        store["vqa.ssr.weight_net.b"].data[:] = 0.0
        f = np.random.default_rng(1).normal(size=(2, 5, 6))
        np.testing.assert_allclose(ssr_forward(Tensor(f), store, 4).data, f[:, 1:].mean(axis=-1), atol=1e-15)

    def test_one_hot_row(self):
        store = head_store()
        f = np.zeros((1, 5, 6))
        f[0, 1:, 2] = 3.0
        sqs = ssr_forward(Tensor(f), store, 4).data
        w, b = store["vqa.ssr.weight_net.w"].data, store["vqa.ssr.weight_net.b"].data
        expect = [softmax(f[0, i] @ w + b)[2] * 3.0 for i in range(1, 5)]
        np.testing.assert_allclose(sqs[0], expect, atol=1e-14)

    def test_double_loop_oracle(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            store = head_store(seed=seed)
            f = rng.normal(size=(2, 5, 6))
            w, b = store["vqa.ssr.weight_net.w"].data, store["vqa.ssr.weight_net.b"].data
            expect = np.zeros((2, 4))
            for n in range(2):
                for i in range(4):
                    wt = softmax(f[n, i + 1] @ w + b)
                    for j in range(6):
                        expect[n, i] += wt[j] * f[n, i + 1, j]
            assert np.max(np.abs(ssr_forward(Tensor(f), store, 4).data - expect)) < 1e-10

    def test_missing_class_token(self):
        with pytest.raises(ShapeError):
            ssr_forward(Tensor(np.zeros((1, 4, 6))), head_store(), 4)


class TestVSR:
    def test_current_only_kernel_on_constant(self):
        store = head_store()
        store["vqa.vsr.k_motion"].data[:] = [0, 0, 0, 1]
        q = vsr_forward(Tensor(np.full((1, 4), 0.7)), store)
        np.testing.assert_allclose(q.m_hat.data, 0.25, atol=1e-15)
        np.testing.assert_allclose(q.s1.data, 0.7, atol=1e-15)

    def test_single_sequence(self):
        store = head_store(n_t=1)
        q = vsr_forward(Tensor([[0.3], [-1.2]]), store)
        np.testing.assert_array_equal(q.m_hat.data, [[1.0], [1.0]])
        np.testing.assert_array_equal(q.h_hat.data, [[1.0], [1.0]])
        np.testing.assert_allclose(q.s1.data, [0.3, -1.2])
        np.testing.assert_allclose(q.s3.data, [0.3, -1.2])

    def test_independent_pipeline_oracle(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n_t = int(rng.integers(1, 7))
            store = head_store(n_t=n_t, seed=seed)
            sqs = rng.normal(size=(2, n_t))
            q = vsr_forward(Tensor(sqs), store)
            km, kh = store["vqa.vsr.k_motion"].data, store["vqa.vsr.k_hysteresis"].data
            for n in range(2):
                s1 = softmax(conv_oracle(sqs[n], km, "before")) @ sqs[n]
                s3 = softmax(conv_oracle(sqs[n], kh, "after")) @ sqs[n]
                assert abs(q.s1.data[n] - s1) < 1e-10
                assert abs(q.s3.data[n] - s3) < 1e-10

    def test_s2_is_linear_regression(self):
        store = head_store()
        sqs = np.random.default_rng(4).normal(size=(3, 4))
        q = vsr_forward(Tensor(sqs), store)
        expect = sqs @ store["vqa.vsr.s2.w"].data[:, 0] + store["vqa.vsr.s2.b"].data[0]
        np.testing.assert_allclose(q.s2.data, expect, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.integers(0, 10_000))
    def test_weights_are_distributions(self, row, seed):
        store = head_store(n_t=len(row), seed=seed)
        q = vsr_forward(Tensor([row]), store)
        np.testing.assert_allclose(q.m_hat.data.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(q.h_hat.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(q.vqs.data > 0)

    def test_untrained_fusion_starts_near_one(self):
        store = head_store()
        store["vqa.vsr.fuse2.w"].data[:] = 0.0
        q = vsr_forward(Tensor(np.random.default_rng(0).normal(size=(3, 4))), store)
        np.testing.assert_allclose(q.vqs.data, 1.0, atol=1e-14)
        assert np.log1p(np.exp(SOFTPLUS_ONE)) == pytest.approx(1.0, abs=1e-15)


class TestQualityModes:
    @pytest.mark.parametrize("mode", ["full", "ssr_only", "vsr_only"])
    def test_positive_scores(self, mode):
        f = Tensor(np.random.default_rng(0).normal(size=(3, 5, 6)))
        q = quality_forward(f, head_store(), 4, mode)
        assert q.vqs.shape == (3,)
        assert np.all(q.vqs.data > 0)

    def test_off(self):
        assert quality_forward(Tensor(np.zeros((1, 5, 6))), head_store(), 4, "off") is None

    def test_vsr_only_uses_plain_mean(self):
        store = head_store()
        f = np.random.default_rng(1).normal(size=(2, 5, 6))
        q = quality_forward(Tensor(f), store, 4, "vsr_only")
        np.testing.assert_allclose(q.sqs.data, f[:, 1:].mean(axis=-1))


class TestMC:
    def test_single_branch_is_one_fc(self):
        store = head_store(mc_branches=1)
        f = np.random.default_rng(0).normal(size=(2, 5, 6))
        expect = f[:, 0] @ store["cls.mc.0.w"].data + store["cls.mc.0.b"].data
        np.testing.assert_allclose(mc_classify(Tensor(f), store, 1).data, expect, atol=1e-14)

    def test_zero_weights_sum_biases(self):
        store = head_store()
        for i in range(3):
            store[f"cls.mc.{i}.w"].data[:] = 0.0
            store[f"cls.mc.{i}.b"].data[:] = [1.0, 0.0]
        out = mc_classify(Tensor(np.ones((1, 5, 6))), store, 3)
        np.testing.assert_array_equal(out.data, [[3.0, 0.0]])

    def test_per_branch_oracle(self):
        for seed in range(100):
            store = head_store(seed=seed)
            f = np.random.default_rng(seed).normal(size=(2, 5, 6))
            expect = sum(f[:, 0] @ store[f"cls.mc.{i}.w"].data + store[f"cls.mc.{i}.b"].data for i in range(3))
            assert np.max(np.abs(mc_classify(Tensor(f), store, 3).data - expect)) < 1e-12


class TestTuneCLS:
    def test_amplify(self):
        tuned, yhat = tune_cls(Tensor([[2.0, 1.0]]), Tensor([1.5]))
        np.testing.assert_allclose(tuned.data, [[3.0, 1.0]])
        assert yhat.tolist() == [0]

    def test_suppress_flips(self):
        tuned, yhat = tune_cls(Tensor([[2.0, 1.0]]), Tensor([0.1]))
        np.testing.assert_allclose(tuned.data, [[0.2, 1.0]])
        assert yhat.tolist() == [1]

    def test_argmax_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(2, 6))
            cls = rng.normal(size=(1, k))
            if cls.max() <= 0:
                cls[0, rng.integers(k)] = abs(cls).max() + 0.1
            vqs = 1.0 + rng.exponential(2.0, size=1)
            _, yhat = tune_cls(Tensor(cls), Tensor(vqs))
            assert yhat[0] == np.argmax(cls)

    def test_all_negative_logits_flip_literally(self):
        tuned, yhat = tune_cls(Tensor([[-1.0, -2.0]]), Tensor([3.0]))
        np.testing.assert_allclose(tuned.data, [[-3.0, -2.0]])
        assert yhat.tolist() == [1]

    def test_ties_take_lowest_index(self):
        tuned, _ = tune_cls(Tensor([[1.0, 1.0]]), Tensor([2.0]))
        np.testing.assert_allclose(tuned.data, [[2.0, 1.0]])

    @pytest.mark.parametrize("bad", [0.0, -0.5])
    def test_non_positive_score(self, bad):
        with pytest.raises(ContractError):
            tune_cls(Tensor([[1.0, 0.0]]), Tensor([bad]))

    def test_gradient_reaches_score_and_max_logit(self):
        logits, vqs = Tensor([[2.0, -1.0]], requires_grad=True), Tensor([1.3], requires_grad=True)
        tuned, _ = tune_cls(logits, vqs)
        probs = T.softmax(tuned, axis=-1)
        backward(probs[0, 1])
        assert vqs.grad[0] != 0
        # d tuned_0 / d logit_0 = vqs; the other entry passes through
        p = probs.data[0]
        np.testing.assert_allclose(logits.grad[0], [-p[0] * p[1] * 1.3, p[1] * (1 - p[1])], rtol=1e-12)
        np.testing.assert_allclose(vqs.grad[0], -p[0] * p[1] * 2.0, rtol=1e-12)

    def test_zero_max_logit_blocks_score_gradient(self):
        logits, vqs = Tensor([[0.0, -1.0]]), Tensor([2.0], requires_grad=True)
        tuned, _ = tune_cls(logits, vqs)
        backward(T.softmax(tuned, axis=-1)[0, 0])
        assert vqs.grad[0] == 0.0
