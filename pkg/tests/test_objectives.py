import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadv.autodiff import DomainError, Rng, Tensor
from cascadv.deception import build_chain, load_template_bank
from cascadv.encoder import DualEncoder, ImageSeq
from cascadv.objectives import (DEFAULT_WEIGHTS, DescriptorSet, LossEvaluator,
                                LossWeights, Mask, MatchResult, _loss_high_t,
                                _loss_low_t, _match_row_t, build_mask,
                                cosine_sim, default_descriptors,
                                load_descriptor_groups, loss_disc, loss_high,
                                loss_low, matching_head, total_loss)

BANK = load_template_bank()


def toy_instance(seed=0, n=2, size=16):
    enc = DualEncoder.create(42)
    x = ImageSeq(Rng(seed).uniform((n, size, size, 3), 0.05, 0.95))
    chains = [build_chain(BANK, "toy", "red-light")]
    return enc, x, chains


class TestCosine:
    def test_identity(self):
        v = np.array([0.3, -0.7, 0.1])
        assert cosine_sim(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        assert cosine_sim([1.0, 2.0], [2.0, 1.0]) == pytest.approx(0.8, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DomainError):
            cosine_sim([0.0, 0.0], [1.0, 0.0])


class TestMatchingHead:
    def test_default_descriptors_are_safety_pair(self):
        d = default_descriptors()
        assert d.descriptors == ("A safe driving scenario", "An unsafe driving scenario")

    def test_five_groups_shipped(self):
        groups = load_descriptor_groups()
        assert len(groups) == 5
        assert groups[0].group_id == "safety"
        assert all(len(g) == 2 for g in groups)

    def test_equidistant_embedding_gives_half_half(self):
        t = np.zeros((4, 2))
        t[:, 0] = [1.0, 0.0, 0.0, 0.0]
        t[:, 1] = [0.0, 1.0, 0.0, 0.0]
        e = Tensor(np.array([[0.5, 0.5, 0.5, 0.5]]))
        row = _match_row_t(e, t).data[0]
        assert np.allclose(row, [0.5, 0.5], atol=1e-15)

    def test_cosine_row_softmax_value(self):
        # engineered unit vectors with cosines exactly 0.2 and -0.1
        e = Tensor(np.array([[1.0, 0.0, 0.0]]))
        t = np.array([[0.2, -0.1],
                      [np.sqrt(1 - 0.04), 0.0],
                      [0.0, np.sqrt(1 - 0.01)]])
        row = _match_row_t(e, t).data[0]
        assert np.allclose(row, [0.574443, 0.425557], atol=1e-6)

    def test_rows_sum_to_one(self):
        enc, x, _ = toy_instance()
        res = matching_head(enc, x, default_descriptors())
        assert res.p.shape == (x.n, 2)
        assert np.abs(res.p.sum(axis=1) - 1.0).max() < 1e-12

    def test_descriptor_set_validation(self):
        with pytest.raises(ValueError):
            DescriptorSet(("only one",))
        with pytest.raises(ValueError):
            DescriptorSet(("dup", "dup"))


class TestMask:
    def test_argmin_placement(self):
        assert (build_mask(MatchResult(np.array([[0.9, 0.1]]))).m == [[0, 1]]).all()
        m = build_mask(MatchResult(np.array([[0.1, 0.9], [0.8, 0.2]])))
        assert (m.m == [[1, 0], [0, 1]]).all()

    def test_tie_breaks_to_lowest_index(self):
        assert (build_mask(MatchResult(np.array([[0.5, 0.5]]))).m == [[1, 0]]).all()

    @given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 10_000))
    @settings(max_examples=150, deadline=None)
    def test_one_hot_at_clean_argmin(self, n, k, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(n, k))
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        mask = build_mask(MatchResult(p)).m
        assert (mask.sum(axis=1) == 1.0).all()
        for i in range(n):
            assert mask[i, np.argmin(p[i])] == 1.0

    def test_mask_rejects_non_one_hot(self):
        with pytest.raises(DomainError):
            Mask(np.array([[1.0, 1.0]]))


class TestLossHigh:
    def test_uniform_rows_exactly_zero(self):
        val = loss_high(MatchResult(np.array([[0.5, 0.5]])), Mask(np.array([[0.0, 1.0]])))
        assert val == 0.0

    def test_anchor_positive(self):
        val = loss_high(MatchResult(np.array([[0.9, 0.1]])), Mask(np.array([[0.0, 1.0]])))
        assert val == pytest.approx(1.098612, abs=1e-5)

    def test_anchor_negative_means_flip_winning(self):
        val = loss_high(MatchResult(np.array([[0.1, 0.9]])), Mask(np.array([[0.0, 1.0]])))
        assert val == pytest.approx(-1.098612, abs=1e-5)

    def test_zero_probability_rejected_upstream(self):
        with pytest.raises(DomainError):
            MatchResult(np.array([[1.0, 0.0]]))

    def test_mean_over_all_cells(self):
        p = MatchResult(np.array([[0.7, 0.3], [0.4, 0.6]]))
        m = Mask(np.array([[0.0, 1.0], [1.0, 0.0]]))
        expected = (np.log(0.7) - np.log(0.3) - np.log(0.4) + np.log(0.6)) / 4
        assert loss_high(p, m) == pytest.approx(expected, abs=1e-12)


class TestLossLowAndDisc:
    def test_aligned_embedding_gives_zero(self):
        e = np.zeros((1, 8))
        e[0, 0] = 1.0
        assert _loss_low_t(Tensor(e), [e]).item() == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_embedding_gives_one(self):
        a = np.zeros((1, 8)); a[0, 0] = 1.0
        b = np.zeros((1, 8)); b[0, 1] = 1.0
        assert _loss_low_t(Tensor(a), [b]).item() == pytest.approx(1.0, abs=1e-12)

    def test_range_and_chain_average(self):
        enc, x, _ = toy_instance(3)
        chains = [build_chain(BANK, "toy", c) for c in ("red-light", "tailgate")]
        delta = np.zeros_like(x.frames)
        val = loss_low(enc, x, delta, chains)
        singles = [loss_low(enc, x, delta, [c]) for c in chains]
        assert 0.0 <= val <= 2.0
        assert val == pytest.approx(sum(singles) / 2, abs=1e-12)

    def test_empty_chain_list_rejected(self):
        enc, x, _ = toy_instance()
        with pytest.raises(ValueError):
            loss_low(enc, x, np.zeros_like(x.frames), [])

    def test_disc_at_zero_delta_is_one(self):
        enc, x, _ = toy_instance(4)
        assert loss_disc(enc, x, np.zeros_like(x.frames)) == pytest.approx(1.0, abs=1e-12)

    def test_disc_decreases_under_optimization(self):
        # ten optimizer steps push the perturbed embedding away from clean
        from cascadv.optimizer import AttackConfig, run_attack

        enc, x, chains = toy_instance(5, size=32)
        cfg = AttackConfig(iterations=10, seed=1)
        pert, report = run_attack(enc, x, cfg, chains, default_descriptors())
        assert report.loss_trace[0].l_disc == pytest.approx(1.0, abs=1e-12)
        assert loss_disc(enc, x, pert.delta) < 1.0


class TestTotalLoss:
    def test_paper_default_weights_and_arithmetic(self):
        w = DEFAULT_WEIGHTS
        assert (w.alpha, w.beta, w.gamma) == (0.75, 0.05, 0.75)
        assert w.alpha * 1.0 + w.beta * 0.0 + w.gamma * 1.0 == pytest.approx(1.5, abs=1e-15)

    def test_breakdown_is_exact_weighted_sum(self):
        enc, x, chains = toy_instance(6)
        d = default_descriptors()
        mask = build_mask(matching_head(enc, x, d))
        w = LossWeights(0.6, 0.3, 0.1)
        delta = Rng(8).uniform(x.frames.shape, -0.05, 0.05)
        bd = total_loss(enc, x, delta, chains, d, mask, w)
        assert bd.l_total == pytest.approx(
            w.alpha * bd.l_low + w.beta * bd.l_high + w.gamma * bd.l_disc, abs=1e-12)

    def test_power_of_two_weight_scaling_is_exact(self):
        enc, x, chains = toy_instance(7)
        d = default_descriptors()
        mask = build_mask(matching_head(enc, x, d))
        delta = Rng(9).uniform(x.frames.shape, -0.05, 0.05)
        w1 = LossWeights(0.75, 0.05, 0.75)
        w2 = LossWeights(1.5, 0.1, 1.5)
        a = total_loss(enc, x, delta, chains, d, mask, w1)
        b = total_loss(enc, x, delta, chains, d, mask, w2)
        assert b.l_total == 2.0 * a.l_total

    def test_multi_group_high_loss_is_group_mean(self):
        enc, x, chains = toy_instance(10)
        groups = load_descriptor_groups()[:2]
        masks = [build_mask(matching_head(enc, x, g)) for g in groups]
        delta = Rng(11).uniform(x.frames.shape, -0.05, 0.05)
        both = total_loss(enc, x, delta, chains, groups, masks)
        singles = [total_loss(enc, x, delta, chains, g, m).l_high
                   for g, m in zip(groups, masks)]
        assert both.l_high == pytest.approx(sum(singles) / 2, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        enc, x, chains = toy_instance(12)
        ev = LossEvaluator(enc, x, chains, [default_descriptors()])
        delta = Rng(13).uniform(x.frames.shape, -0.08, 0.08)
        bd, grad = ev.breakdown_and_grad(delta)
        rng = np.random.default_rng(1)
        for _ in range(20):
            idx = tuple(rng.integers(0, s) for s in delta.shape)
            dp, dm = delta.copy(), delta.copy()
            dp[idx] += 1e-5
            dm[idx] -= 1e-5
            fd = (ev.breakdown(dp).l_total - ev.breakdown(dm).l_total) / 2e-5
            assert abs(grad[idx] - fd) / max(abs(fd), abs(grad[idx]), 1e-9) < 1e-5

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1, 0.5, 0.5)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)

    def test_loss_high_shape_guard(self):
        with pytest.raises(Exception):
            _loss_high_t([Tensor(np.array([[0.5, 0.5]]))], Mask(np.eye(2)))
