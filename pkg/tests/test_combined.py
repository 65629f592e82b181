import numpy as np
import pytest
from conftest import perturbed, tiny_model

from sslv3.combined import PairBatch, dual_forward, make_pair, match_labels, verify_chain_coupling
from sslv3.data import AugmentPolicy, ClipBatch, synth_generate
from sslv3.errors import BatchSizeError, CouplingError
from sslv3.losses import focal_loss
from sslv3.model import forward_branch, init_model
from sslv3.tensor import backward


def batch(labels, seed=0):
    rng = np.random.default_rng(seed)
    n = len(labels)
    return ClipBatch(rng.random((n, 8, 16, 16, 3)), np.array(labels), np.array([f"S{i}" for i in range(n)]))


def generic_pair(seed=0, bs=4):
    rng = np.random.default_rng(seed)
    ds = synth_generate(bs, 1, tiny_model().spec, (0.2, 1.0), rng)
    return make_pair(ds, rng, AugmentPolicy(hflip=0.5, vflip=0.5, rotation=5.0))


class TestMatch:
    def test_swapped_halves(self):
        p = make_pair(batch([0, 0, 1, 1]), np.random.default_rng(0), perm=[2, 3, 0, 1])
        np.testing.assert_array_equal(p.match, [0, 0, 0, 0])

    def test_identity(self):
        p = make_pair(batch([0, 0]), np.random.default_rng(0), perm=[0, 1])
        np.testing.assert_array_equal(p.match, [1, 1])

    def test_reversal(self):
        p = make_pair(batch([0, 1, 0]), np.random.default_rng(0), perm=[2, 1, 0])
        np.testing.assert_array_equal(p.match, [1, 1, 1])

    def test_symmetric(self):
        a, b = np.array([0, 1, 1, 0]), np.array([1, 1, 0, 0])
        np.testing.assert_array_equal(match_labels(a, b), match_labels(b, a))


class TestMakePair:
    def test_second_branch_is_permuted_source(self):
        src = batch([0, 1, 0, 1])
        p = make_pair(src, np.random.default_rng(3))
        np.testing.assert_array_equal(p.x2.clips, src.clips[p.perm])
        np.testing.assert_array_equal(p.x2.subject_ids, src.subject_ids[p.perm])
        np.testing.assert_array_equal(p.match, (src.labels == src.labels[p.perm]).astype(float))

    def test_independent_augmentation(self):
        src = batch([0, 1])
        p = make_pair(src, np.random.default_rng(0), AugmentPolicy(hflip=0, vflip=0, rotation=0, brightness=0.2),
                      perm=[0, 1])
        assert not np.array_equal(p.x1.clips, p.x2.clips)

    def test_seeded(self):
        a = make_pair(batch(list(range(2)) * 3), np.random.default_rng(5), AugmentPolicy())
        b = make_pair(batch(list(range(2)) * 3), np.random.default_rng(5), AugmentPolicy())
        np.testing.assert_array_equal(a.perm, b.perm)
        np.testing.assert_array_equal(a.x2.clips, b.x2.clips)

    def test_singleton_rejected(self):
        with pytest.raises(BatchSizeError):
            make_pair(batch([0]), np.random.default_rng(0))

    def test_singleton_allowed_pairs_with_itself(self):
        p = make_pair(batch([1]), np.random.default_rng(0), allow_singleton=True)
        assert p.perm.tolist() == [0]
        np.testing.assert_array_equal(p.match, [1.0])

    def test_bad_permutation(self):
        with pytest.raises(BatchSizeError):
            make_pair(batch([0, 1]), np.random.default_rng(0), perm=[0, 0])


class TestWeightSharing:
    def test_equal_inputs_bitwise_equal(self, store, cfg):
        src = batch([0, 1, 1])
        b1, b2 = dual_forward(make_pair(src, np.random.default_rng(0), perm=[0, 1, 2]), store, cfg)
        for a, b in [(b1.features, b2.features), (b1.logits, b2.logits), (b1.tuned, b2.tuned),
                     (b1.quality.vqs, b2.quality.vqs)]:
            assert np.array_equal(a.data, b.data)

    def test_dual_gradient_is_sum_of_single_branch(self, store, cfg):
        pair = generic_pair(1, bs=2)

        def single(x):
            store.zero_grad()
            out = forward_branch(store, x.clips, cfg)
            backward(focal_loss(out.tuned, x.labels), store)
            return {n: t.grad.copy() for n, t in store.items()}

        g1, g2 = single(pair.x1), single(pair.x2)
        store.zero_grad()
        b1, b2 = dual_forward(pair, store, cfg)
        backward(focal_loss(b1.tuned, pair.x1.labels) + focal_loss(b2.tuned, pair.x2.labels), store)
        worst = max(np.max(np.abs(t.grad - (g1[n] + g2[n]))) for n, t in store.items())
        assert worst < 1e-12

    def test_zeroed_quality_head_is_constant(self, store, cfg):
        for _, t in store.items("vqa"):
            t.data[:] = 0.0
        b1, b2 = dual_forward(generic_pair(2), store, cfg)
        vqs = np.concatenate([b1.quality.vqs.data, b2.quality.vqs.data])
        np.testing.assert_allclose(vqs, np.log(2.0), atol=1e-15)


class TestChainCoupling:
    def test_focal_loss_alone_reaches_quality_head(self, store, cfg):
        report = verify_chain_coupling(store, generic_pair(0), cfg)
        assert report.coupled
        assert set(report.grad_norms) == set(store.names("vqa"))

    def test_matches_finite_difference(self, store, cfg):
        pair = generic_pair(4)
        name, pos = "vqa.vsr.fuse2.b", (0,)
        store.zero_grad()
        b1, b2 = dual_forward(pair, store, cfg)
        backward((focal_loss(b1.tuned, pair.x1.labels) + focal_loss(b2.tuned, pair.x2.labels)) * 0.5, store)
        analytic = store[name].grad[pos]

        def value():
            o1, o2 = dual_forward(pair, store, cfg)
            return ((focal_loss(o1.tuned, pair.x1.labels) + focal_loss(o2.tuned, pair.x2.labels)) * 0.5).item()

        h, t = 1e-5, store[name]
        t.data[pos] += h
        fp = value()
        t.data[pos] -= 2 * h
        fm = value()
        t.data[pos] += h
        assert analytic != 0
        assert abs(analytic - (fp - fm) / (2 * h)) < 1e-6 * max(1.0, abs(analytic))

    def test_zero_max_logit_gives_zero_gradients(self, store, cfg):
        # zero classifier weights and biases make every logit 0, so the tuned entry is 0 * vqs
        for _, t in store.items("cls"):
            t.data[:] = 0.0
        report = verify_chain_coupling(store, generic_pair(0), cfg, strict=False)
        assert report.max_norm == 0.0
        with pytest.raises(CouplingError):
            verify_chain_coupling(store, generic_pair(0), cfg)

    def test_ablated_tune_cls_gives_exact_zero(self):
        cfg = tiny_model("off")
        store = perturbed(init_model(cfg, 0), np.random.default_rng(1))
        report = verify_chain_coupling(store, generic_pair(0), cfg, strict=False)
        assert all(v == 0.0 for v in report.grad_norms.values())
        with pytest.raises(CouplingError):
            verify_chain_coupling(store, generic_pair(0), cfg)

    def test_pair_batch_type(self):
        assert isinstance(generic_pair(0), PairBatch)
