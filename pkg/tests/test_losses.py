"""Loss functions against scalar oracles and the gated-mean contract."""

import math

import numpy as np
import pytest
import torch

from emamix.losses import smooth_one_hot, soft_target_loss, supervised_loss


def scalar_cross_entropy(logits_row, target_row):
    """Straight-line float64 CE, independent of the tensor path."""
    m = max(logits_row)
    log_z = m + math.log(sum(math.exp(v - m) for v in logits_row))
    return -sum(t * (v - log_z) for t, v in zip(target_row, logits_row))


class TestSmoothOneHot:
    def test_rows_sum_to_one(self):
        targets = smooth_one_hot(torch.tensor([0, 3, 7]), 10, 0.1)
        np.testing.assert_allclose(targets.sum(dim=1).numpy(), 1.0, atol=1e-6)

    def test_values(self):
        targets = smooth_one_hot(torch.tensor([1]), 4, 0.2)
        expected = [0.05, 0.85, 0.05, 0.05]
        np.testing.assert_allclose(targets[0].numpy(), expected, atol=1e-7)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            smooth_one_hot(torch.tensor([4]), 4, 0.0)

    def test_bad_smoothing(self):
        with pytest.raises(ValueError, match="smoothing"):
            smooth_one_hot(torch.tensor([0]), 4, 1.0)


class TestSupervisedLoss:
    def test_confident_correct_prediction_near_zero(self):
        logits = torch.zeros(2, 10)
        logits[0, 3] = 50.0
        logits[1, 7] = 50.0
        loss = supervised_loss(logits, torch.tensor([3, 7]), smoothing=0.0)
        assert loss.item() <= 1e-6

    @pytest.mark.parametrize("smoothing", [0.0, 0.1, 0.5])
    def test_uniform_prediction_is_log_c(self, smoothing):
        for c in (2, 5, 13):
            logits = torch.zeros(4, c)
            loss = supervised_loss(logits, torch.zeros(4, dtype=torch.long), smoothing)
            assert loss.item() == pytest.approx(math.log(c), abs=1e-6)

    def test_hand_computed_smoothed_case(self):
        # Oracle computed first with scalar float64 arithmetic.
        logits = [[2.0, 0.0], [0.0, 2.0]]
        targets = [[0.95, 0.05], [0.05, 0.95]]
        expected = sum(scalar_cross_entropy(l, t) for l, t in zip(logits, targets)) / 2
        loss = supervised_loss(torch.tensor(logits, dtype=torch.float64),
                               torch.tensor([0, 1]), smoothing=0.1)
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            supervised_loss(torch.zeros(1, 3), torch.tensor([3]))


class TestSoftTargetLoss:
    def test_all_weights_zero(self):
        logits = torch.randn(4, 5)
        targets = smooth_one_hot(torch.tensor([0, 1, 2, 3]), 5)
        loss = soft_target_loss(logits, targets, torch.zeros(4), denom=4)
        assert loss.item() == 0.0

    def test_reduces_to_hard_ce(self):
        torch.manual_seed(0)
        logits = torch.randn(6, 4, dtype=torch.float64)
        labels = torch.tensor([0, 1, 2, 3, 1, 0])
        targets = smooth_one_hot(labels, 4, 0.0, dtype=torch.float64)
        via_soft = soft_target_loss(logits, targets, torch.ones(6), denom=6)
        via_hard = supervised_loss(logits, labels, smoothing=0.0)
        assert via_soft.item() == pytest.approx(via_hard.item(), rel=1e-12)

    def test_partial_weights_against_per_sample_oracle(self):
        torch.manual_seed(1)
        logits = torch.randn(4, 3, dtype=torch.float64)
        targets = smooth_one_hot(torch.tensor([2, 0, 1, 2]), 3, 0.1, dtype=torch.float64)
        weights = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        ce = [scalar_cross_entropy(logits[i].tolist(), targets[i].tolist()) for i in range(4)]
        expected = (ce[0] + ce[2]) / 4
        loss = soft_target_loss(logits, targets, weights, denom=4)
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_denominator_is_full_batch_size(self):
        logits = torch.randn(2, 3, dtype=torch.float64)
        targets = smooth_one_hot(torch.tensor([0, 1]), 3, 0.0, dtype=torch.float64)
        small = soft_target_loss(logits, targets, torch.ones(2), denom=10)
        big = soft_target_loss(logits, targets, torch.ones(2), denom=2)
        assert small.item() == pytest.approx(big.item() * 2 / 10, rel=1e-12)

    def test_empty_batch_is_zero(self):
        loss = soft_target_loss(torch.zeros(0, 3), torch.zeros(0, 3), torch.zeros(0), denom=5)
        assert loss.item() == 0.0

    def test_gated_mean_matches_direct_transcription(self):
        # The gated unlabeled loss with hard pseudo labels must equal the
        # indicator-weighted mean of per-sample CE, on random inputs.
        rng = np.random.default_rng(7)
        for _ in range(200):
            n, c = int(rng.integers(1, 12)), int(rng.integers(2, 8))
            logits = torch.tensor(rng.normal(size=(n, c)), dtype=torch.float64)
            labels = torch.tensor(rng.integers(0, c, size=n))
            conf = torch.tensor(rng.uniform(0, 1, size=n), dtype=torch.float64)
            tau = float(rng.uniform(0, 1))
            mask = conf >= tau
            targets = smooth_one_hot(labels, c, 0.0, dtype=torch.float64)
            got = soft_target_loss(logits, targets, mask, denom=n).item()
            direct = sum(
                (1.0 if conf[i] >= tau else 0.0)
                * scalar_cross_entropy(logits[i].tolist(), targets[i].tolist())
                for i in range(n)
            ) / n
            assert got == pytest.approx(direct, abs=1e-7)
