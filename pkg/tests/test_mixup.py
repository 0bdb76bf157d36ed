"""Mixup variants: frozen hand-derived fixtures plus random-batch
algebra sweeps (reconstruction, ratio monotonicity, gate behavior)."""

import numpy as np
import pytest
import torch

from emamix.mixup import (
    MixConfig,
    PseudoBatch,
    mix_images,
    mix_labeled,
    mix_labels,
    pair_shuffle,
    prob_pseudo_mixup,
    pseudo_mixup,
    pseudo_mixup_plus,
    sample_lambda,
)


def pseudo_batch(confidences, num_classes=4, hard_labels=None, image_shape=(3, 4, 4),
                 tau=0.5, dtype=torch.float64, seed=0):
    """PseudoBatch whose max-prob per row equals the requested confidence."""
    conf = np.asarray(confidences, dtype=np.float64)
    n = len(conf)
    if hard_labels is None:
        hard_labels = [i % num_classes for i in range(n)]
    probs = np.empty((n, num_classes))
    for i, (o, y) in enumerate(zip(conf, hard_labels)):
        assert o >= 1.0 / num_classes, "confidence below uniform cannot be an argmax"
        rest = (1.0 - o) / (num_classes - 1)
        probs[i] = rest
        probs[i, y] = o
    rng = np.random.default_rng(seed)
    images = torch.tensor(rng.uniform(size=(n, *image_shape)), dtype=dtype)
    return PseudoBatch.from_teacher(images, torch.tensor(probs, dtype=dtype), tau)


class TestSampleLambda:
    def test_alpha_one_is_uniform(self):
        rng = np.random.default_rng(0)
        draws = np.sort([sample_lambda(1.0, rng) for _ in range(10_000)])
        # One-sample KS distance against the uniform CDF.
        grid = (np.arange(1, draws.size + 1)) / draws.size
        ks = np.max(np.maximum(np.abs(grid - draws), np.abs(grid - 1 / draws.size - draws)))
        assert ks < 0.05

    @pytest.mark.parametrize("alpha", [0.2, 0.8, 1.0, 5.0])
    def test_symmetric_mean(self, alpha):
        rng = np.random.default_rng(1)
        draws = [sample_lambda(alpha, rng) for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    def test_alpha_zero_disables_mixing(self):
        rng = np.random.default_rng(2)
        assert sample_lambda(0.0, rng) == 1.0

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            sample_lambda(-0.1, np.random.default_rng(0))


class TestPairShuffle:
    def test_single_sample_maps_to_itself(self):
        assert pair_shuffle(1, np.random.default_rng(0)).tolist() == [0]

    def test_is_bijection(self):
        for seed in range(20):
            perm = pair_shuffle(17, np.random.default_rng(seed))
            assert sorted(perm.tolist()) == list(range(17))

    def test_deterministic(self):
        a = pair_shuffle(32, np.random.default_rng(5))
        b = pair_shuffle(32, np.random.default_rng(5))
        assert (a == b).all()


class TestMixImages:
    def test_lambda_one_keeps_first_bitwise(self):
        x_i = torch.rand(2, 3, 4, 4)
        x_j = torch.rand(2, 3, 4, 4)
        mixed, lam = mix_images(x_i, x_j, 1.0, mode="blend")
        assert torch.equal(mixed, x_i)
        assert (lam == 1.0).all()

    def test_half_blend_of_constants(self):
        a = torch.full((1, 3, 4, 4), 0.2)
        b = torch.full((1, 3, 4, 4), 0.6)
        mixed, _ = mix_images(a, b, 0.5, mode="blend")
        np.testing.assert_allclose(mixed.numpy(), 0.4, atol=1e-7)

    def test_cut_pixel_count_oracle(self):
        # lam 0.75 on 8x8: box area must be exactly 16 pixels and lam
        # re-adjusts to 1 - 16/64 = 0.75. Counted per pixel.
        x_i = torch.zeros(1, 1, 8, 8)
        x_j = torch.ones(1, 1, 8, 8)
        for seed in range(10):
            mixed, lam = mix_images(x_i, x_j, 0.75, mode="cut",
                                    rng=np.random.default_rng(seed))
            replaced = int((mixed == 1.0).sum())
            assert replaced == 16
            assert lam[0].item() == pytest.approx(1.0 - 16 / 64, abs=1e-12)

    def test_cut_realized_ratio_matches_pixels(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            lam = float(rng.uniform(0, 1))
            x_i = torch.zeros(1, 1, 9, 7)
            x_j = torch.ones(1, 1, 9, 7)
            mixed, lam_real = mix_images(x_i, x_j, lam, mode="cut", rng=rng)
            frac = float((mixed == 1.0).sum()) / (9 * 7)
            assert lam_real[0].item() == pytest.approx(1.0 - frac, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            mix_images(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 5, 5), 0.5)


class TestMixLabels:
    def test_identity(self):
        y_i = torch.tensor([[0.9, 0.1]])
        y_j = torch.tensor([[0.2, 0.8]])
        assert torch.equal(mix_labels(y_i, y_j, 1.0), y_i)

    def test_one_hot_blend(self):
        y_i = torch.zeros(1, 4)
        y_i[0, 0] = 1.0
        y_j = torch.zeros(1, 4)
        y_j[0, 2] = 1.0
        mixed = mix_labels(y_i, y_j, 0.75)
        np.testing.assert_allclose(mixed[0].numpy(), [0.75, 0.0, 0.25, 0.0], atol=1e-7)

    def test_smoothed_blend_matches_scalar_oracle(self):
        # lam-blend of two smoothed one-hots, checked coordinate by
        # coordinate with plain python floats.
        eps, c, lam = 0.1, 4, 0.6
        smooth_a = [eps / c + (1 - eps) * (1 if k == 1 else 0) for k in range(c)]
        smooth_b = [eps / c + (1 - eps) * (1 if k == 3 else 0) for k in range(c)]
        expected = [lam * a + (1 - lam) * b for a, b in zip(smooth_a, smooth_b)]
        mixed = mix_labels(torch.tensor([smooth_a], dtype=torch.float64),
                           torch.tensor([smooth_b], dtype=torch.float64), lam)
        np.testing.assert_allclose(mixed[0].numpy(), expected, atol=1e-12)
        assert mixed.sum().item() == pytest.approx(1.0, abs=1e-12)


class TestPseudoMixup:
    def test_gate_saturates_when_all_confident(self):
        batch = pseudo_batch([0.9, 0.8, 0.95, 0.99], tau=0.5)
        mixed = pseudo_mixup(batch, MixConfig(), 0.5, np.random.default_rng(0))
        assert mixed.include_mask.all()

    def test_premix_gating_ignores_pairing(self):
        batch = pseudo_batch([0.9, 0.3], tau=0.5)
        for seed in range(10):
            mixed = pseudo_mixup(batch, MixConfig(), 0.5, np.random.default_rng(seed))
            assert mixed.include_mask.tolist() == [True, False]
            assert torch.equal(mixed.confidence_star, batch.confidence)

    def test_four_sample_labels_match_bruteforce(self):
        # Oracle: replay the pairing-free rng stream, then blend the
        # smoothed one-hot rows by hand.
        batch = pseudo_batch([0.9, 0.6, 0.8, 0.7], num_classes=4, tau=0.5)
        cfg = MixConfig(mixup_alpha=0.8, label_smoothing=0.1)
        pairing = np.array([2, 3, 0, 1])
        seed = 11
        mixed = pseudo_mixup(batch, cfg, 0.5, np.random.default_rng(seed), pairing=pairing)

        lam = np.random.default_rng(seed).beta(0.8, 0.8, size=4)
        eps = 0.1
        for i in range(4):
            row_i = [eps / 4 + (1 - eps) * (1 if k == batch.hard_label[i] else 0)
                     for k in range(4)]
            j = pairing[i]
            row_j = [eps / 4 + (1 - eps) * (1 if k == batch.hard_label[j] else 0)
                     for k in range(4)]
            expected = [lam[i] * a + (1 - lam[i]) * b for a, b in zip(row_i, row_j)]
            np.testing.assert_allclose(mixed.soft_labels[i].numpy(), expected, atol=1e-12)


class TestPseudoMixupPlus:
    def test_empty_clean_subset(self):
        batch = pseudo_batch([0.3, 0.3, 0.4], tau=0.9)
        mixed = pseudo_mixup_plus(batch, MixConfig(), 0.9, np.random.default_rng(0))
        assert len(mixed) == 0
        assert mixed.include_mask.numel() == 0

    def test_single_survivor_passes_through(self):
        batch = pseudo_batch([0.95, 0.3, 0.4], tau=0.5)
        mixed = pseudo_mixup_plus(batch, MixConfig(label_smoothing=0.0), 0.5,
                                  np.random.default_rng(0))
        assert len(mixed) == 1
        assert mixed.lam.tolist() == [1.0]
        assert torch.equal(mixed.images[0], batch.images_strong[0])
        assert mixed.include_mask.tolist() == [True]

    def test_clean_pair_mixes_within_subset(self):
        # Clean subset {0, 2} of four samples; explicit swap pairing.
        batch = pseudo_batch([0.9, 0.15, 0.8, 0.2], num_classes=10, tau=0.5,
                             hard_labels=[0, 1, 2, 3])
        cfg = MixConfig(mixup_alpha=0.8, label_smoothing=0.0)
        seed = 3
        mixed = pseudo_mixup_plus(batch, cfg, 0.5, np.random.default_rng(seed),
                                  pairing=np.array([1, 0]))
        assert len(mixed) == 2
        lam = np.random.default_rng(seed).beta(0.8, 0.8, size=2)
        expect_0 = lam[0] * batch.images_strong[0] + (1 - lam[0]) * batch.images_strong[2]
        expect_1 = lam[1] * batch.images_strong[2] + (1 - lam[1]) * batch.images_strong[0]
        np.testing.assert_allclose(mixed.images[0].numpy(), expect_0.numpy(), atol=1e-12)
        np.testing.assert_allclose(mixed.images[1].numpy(), expect_1.numpy(), atol=1e-12)
        # Labels of noisy samples 1 and 3 appear nowhere in the output.
        assert mixed.soft_labels[:, 1].sum().item() == 0.0
        assert mixed.soft_labels[:, 3].sum().item() == 0.0
        assert mixed.include_mask.all()


class TestProbPseudoMixup:
    def test_direct_formula(self):
        batch = pseudo_batch([0.9, 0.3], tau=0.5)
        mixed = prob_pseudo_mixup(batch, MixConfig(), 0.5, np.random.default_rng(0),
                                  pairing=np.array([1, 0]))
        assert mixed.lam[0].item() == pytest.approx(0.75, abs=1e-12)
        assert mixed.confidence_star[0].item() == pytest.approx(0.9, abs=1e-12)

    def test_equal_confidences_give_half(self):
        batch = pseudo_batch([0.7, 0.7], tau=0.5)
        mixed = prob_pseudo_mixup(batch, MixConfig(), 0.5, np.random.default_rng(0),
                                  pairing=np.array([1, 0]))
        assert mixed.lam[0].item() == pytest.approx(0.5, abs=1e-12)

    def test_four_sample_fixture(self):
        # Hand-derived before implementing: lam_i = o_i / (o_i + o_j),
        # o*_i = max(o_i, o_j), gate at tau = 0.5 on o*.
        batch = pseudo_batch([0.95, 0.40, 0.60, 0.20], num_classes=10, tau=0.5)
        pairing = np.array([2, 3, 0, 1])
        mixed = prob_pseudo_mixup(batch, MixConfig(), 0.5, np.random.default_rng(0),
                                  pairing=pairing)
        expected_lam = [0.95 / 1.55, 0.40 / 0.60, 0.60 / 1.55, 0.20 / 0.60]
        expected_star = [0.95, 0.40, 0.95, 0.40]
        np.testing.assert_allclose(mixed.lam.numpy(), expected_lam, atol=1e-12)
        np.testing.assert_allclose(mixed.confidence_star.numpy(), expected_star, atol=1e-12)
        assert mixed.include_mask.tolist() == [True, False, True, False]


def random_pseudo_batch(rng, tau):
    n = int(rng.integers(2, 12))
    c = int(rng.integers(2, 7))
    conf = rng.uniform(1.0 / c + 1e-6, 1.0, size=n)
    labels = rng.integers(0, c, size=n)
    return pseudo_batch(conf, num_classes=c, hard_labels=labels.tolist(),
                        image_shape=(1, 3, 3), tau=tau, seed=int(rng.integers(1 << 30)))


VARIANTS = {
    "pseudo": pseudo_mixup,
    "pseudo_plus": pseudo_mixup_plus,
    "prob_pseudo": prob_pseudo_mixup,
}


class TestMixupAlgebraSweep:
    """Random-batch properties shared by every variant (blend mode)."""

    @pytest.mark.parametrize("variant", sorted(VARIANTS))
    def test_reconstruction_and_row_sums(self, variant):
        fn = VARIANTS[variant]
        rng = np.random.default_rng(42)
        cfg = MixConfig(mixup_alpha=0.8, label_smoothing=0.1)
        for _ in range(300):
            tau = float(rng.uniform(0, 1))
            batch = random_pseudo_batch(rng, tau)
            n = len(batch)
            pairing = rng.permutation(n if variant != "pseudo_plus"
                                      else max(int(batch.clean_mask.sum()), 1))
            mixed = fn(batch, cfg, tau, rng, pairing=pairing)
            if len(mixed) == 0:
                continue
            np.testing.assert_allclose(mixed.soft_labels.sum(dim=1).numpy(), 1.0, atol=1e-5)
            if variant == "pseudo_plus":
                keep = torch.nonzero(batch.clean_mask).flatten()
                source = batch.images_strong[keep]
                if len(keep) < 2:
                    np.testing.assert_allclose(mixed.images.numpy(), source.numpy(),
                                               atol=1e-6)
                    continue
            else:
                source = batch.images_strong
            lam = mixed.lam.view(-1, 1, 1, 1)
            recon = lam * source + (1 - lam) * source[pairing]
            np.testing.assert_allclose(mixed.images.numpy(), recon.numpy(), atol=1e-6)

    def test_prob_monotonicity_exact(self):
        rng = np.random.default_rng(43)
        for _ in range(500):
            batch = random_pseudo_batch(rng, 0.5)
            n = len(batch)
            pairing = rng.permutation(n)
            mixed = prob_pseudo_mixup(batch, MixConfig(), 0.5, rng, pairing=pairing)
            o_i = batch.confidence.numpy()
            o_j = o_i[pairing]
            lam = mixed.lam.numpy()
            assert ((o_i >= o_j) == (lam >= 0.5)).all()

    def test_prob_gate_widens(self):
        rng = np.random.default_rng(44)
        for _ in range(500):
            tau = float(rng.uniform(0, 1))
            batch = random_pseudo_batch(rng, tau)
            mixed = prob_pseudo_mixup(batch, MixConfig(), tau, rng)
            pre = batch.clean_mask.numpy()
            post = mixed.include_mask.numpy()
            assert (post >= pre).all()

    def test_plus_output_never_contains_noisy_indices(self):
        rng = np.random.default_rng(45)
        cfg = MixConfig(label_smoothing=0.0)
        for _ in range(500):
            tau = float(rng.uniform(0, 1))
            batch = random_pseudo_batch(rng, tau)
            mixed = pseudo_mixup_plus(batch, cfg, tau, rng)
            assert len(mixed) == int(batch.clean_mask.sum())
            noisy_classes = set(batch.hard_label[~batch.clean_mask].tolist())
            clean_classes = set(batch.hard_label[batch.clean_mask].tolist())
            only_noisy = noisy_classes - clean_classes
            for c in only_noisy:
                assert mixed.soft_labels[:, c].sum().item() == 0.0

    def test_tau_zero_includes_all_and_tau_above_one_none(self):
        rng = np.random.default_rng(46)
        for variant, fn in VARIANTS.items():
            batch = random_pseudo_batch(rng, 0.0)
            all_in = fn(batch, MixConfig(), 0.0, rng)
            assert all_in.include_mask.all() and len(all_in) == len(batch)
            batch_hi = pseudo_batch([0.9, 0.8, 0.7], tau=1.5)
            none_in = fn(batch_hi, MixConfig(), 1.5, rng)
            if variant == "pseudo_plus":
                assert len(none_in) == 0
            else:
                assert not none_in.include_mask.any()


class TestMixLabeled:
    def test_disabled_alphas_pass_through(self):
        cfg = MixConfig(mixup_alpha=0.0, cutmix_alpha=0.0, label_smoothing=0.1)
        images = torch.rand(4, 3, 8, 8)
        labels = torch.tensor([0, 1, 2, 3])
        mixed_x, targets, lam = mix_labeled(images, labels, 4, cfg, np.random.default_rng(0))
        assert torch.equal(mixed_x, images)
        assert lam == 1.0
        np.testing.assert_allclose(targets.sum(dim=1).numpy(), 1.0, atol=1e-6)

    def test_rows_sum_to_one_under_both_modes(self):
        rng = np.random.default_rng(1)
        images = torch.rand(6, 3, 8, 8)
        labels = torch.tensor([0, 1, 2, 0, 1, 2])
        for cfg in (MixConfig(mixup_alpha=0.8, cutmix_alpha=0.0),
                    MixConfig(mixup_alpha=0.0, cutmix_alpha=1.0),
                    MixConfig(mixup_alpha=0.8, cutmix_alpha=1.0, label_smoothing=0.1)):
            for _ in range(20):
                _, targets, lam = mix_labeled(images, labels, 3, cfg, rng)
                np.testing.assert_allclose(targets.sum(dim=1).numpy(), 1.0, atol=1e-5)
                assert 0.0 <= lam <= 1.0
