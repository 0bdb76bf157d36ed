"""Mixup for labeled batches and the three pseudo-label variants.

On unlabeled data the three strategies differ in who gets mixed and how
the ratio is chosen:

* full-batch: every sample mixes with a random partner, ratio drawn from
  Beta(alpha, alpha); only samples confident *before* mixing count.
* clean-only: the below-threshold samples are dropped entirely and the
  confident remainder mixes among itself.
* confidence-weighted: every sample mixes, but the ratio is
  lam_i = o_i / (o_i + o_j) so the more confident partner dominates the
  pixels, the confidence is updated to o*_i = max(o_i, o_j), and the
  gate is re-applied to o*.

All unlabeled variants use element-wise ratios. Labeled batches use the
usual combined policy: per batch, flip between blend-mixup and cutmix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .losses import smooth_one_hot

__all__ = [
    "MixConfig",
    "PseudoBatch",
    "MixedBatch",
    "sample_lambda",
    "pair_shuffle",
    "mix_images",
    "mix_labels",
    "pseudo_mixup",
    "pseudo_mixup_plus",
    "prob_pseudo_mixup",
    "mix_labeled",
    "UNLABELED_MIXUP_VARIANTS",
]

UNLABELED_MIXUP_VARIANTS = ("none", "pseudo", "pseudo_plus", "prob_pseudo")


@dataclass(frozen=True)
class MixConfig:
    """Knobs for both the labeled policy and the unlabeled variants.

    elementwise controls the labeled policy only; unlabeled variants are
    always element-wise. unlabeled_mode switches the unlabeled variants
    between convex blending (default) and cutmix-style patching.
    """

    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    switch_prob: float = 0.5
    elementwise: bool = False
    label_smoothing: float = 0.0
    unlabeled_mode: str = "blend"

    def __post_init__(self) -> None:
        if self.mixup_alpha < 0 or self.cutmix_alpha < 0:
            raise ValueError("mixup/cutmix alpha must be >= 0")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ValueError(f"switch_prob must be in [0, 1], got {self.switch_prob}")
        if self.unlabeled_mode not in ("blend", "cut"):
            raise ValueError(f"unlabeled_mode must be 'blend' or 'cut', got {self.unlabeled_mode!r}")


@dataclass
class PseudoBatch:
    """Teacher predictions for one unlabeled batch, gated at threshold tau.

    clean_mask marks samples whose confidence passes the (inclusive) gate.
    """

    images_strong: torch.Tensor
    probs: torch.Tensor
    hard_label: torch.Tensor
    confidence: torch.Tensor
    clean_mask: torch.Tensor
    tau: float

    @classmethod
    def from_teacher(cls, images_strong: torch.Tensor, probs: torch.Tensor, tau: float) -> "PseudoBatch":
        row_sums = probs.sum(dim=1)
        if probs.numel() and not torch.allclose(
            row_sums, torch.ones_like(row_sums), atol=1e-5, rtol=0.0
        ):
            raise ValueError("probability rows must sum to 1")
        confidence, hard_label = probs.max(dim=1)
        return cls(
            images_strong=images_strong,
            probs=probs,
            hard_label=hard_label,
            confidence=confidence,
            clean_mask=confidence >= tau,
            tau=tau,
        )

    def __len__(self) -> int:
        return self.images_strong.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass
class MixedBatch:
    """Interpolated unlabeled batch ready for the student loss.

    include_mask says which rows contribute to the loss numerator; the
    denominator stays the size of the source batch either way.
    """

    images: torch.Tensor
    soft_labels: torch.Tensor
    lam: torch.Tensor
    confidence_star: torch.Tensor
    include_mask: torch.Tensor

    def __len__(self) -> int:
        return self.images.shape[0]


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw; alpha == 0 disables mixing (returns 1)."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return 1.0
    return float(rng.beta(alpha, alpha))


def _sample_lambdas(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return np.ones(n)
    return rng.beta(alpha, alpha, size=n)


def pair_shuffle(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random pairing permutation: sample i mixes with j[i]."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return rng.permutation(n)


def _cut_box(size_h: int, size_w: int, lam: float, rng: np.random.Generator):
    """A patch of area fraction (1 - lam) that always fits inside the image."""
    frac = np.sqrt(max(0.0, 1.0 - lam))
    cut_h = int(round(size_h * frac))
    cut_w = int(round(size_w * frac))
    top = int(rng.integers(0, size_h - cut_h + 1)) if cut_h < size_h else 0
    left = int(rng.integers(0, size_w - cut_w + 1)) if cut_w < size_w else 0
    return top, left, cut_h, cut_w


def mix_images(
    x_i: torch.Tensor,
    x_j: torch.Tensor,
    lam: float | torch.Tensor,
    mode: str = "blend",
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mix two index-aligned image stacks; returns (mixed, realized lam).

    blend: exact convex combination lam * x_i + (1 - lam) * x_j.
    cut: a rectangle of x_j with area fraction (1 - lam) is pasted into
    x_i and lam is re-adjusted to the exact realized area ratio, which is
    what the labels must be mixed with. Scalar lam cuts one box for the
    whole stack; a vector cuts per sample.
    """
    if x_i.shape != x_j.shape:
        raise ValueError(f"shape mismatch: {tuple(x_i.shape)} vs {tuple(x_j.shape)}")
    n = x_i.shape[0]
    # Ratio bookkeeping stays in float64 so realized area ratios are exact.
    lam_t = torch.as_tensor(lam, dtype=torch.float64)
    if lam_t.ndim == 0:
        lam_vec = lam_t.expand(n).clone()
        scalar = True
    else:
        if lam_t.shape[0] != n:
            raise ValueError("per-sample lam length must match the batch")
        lam_vec = lam_t.clone()
        scalar = False

    if mode == "blend":
        lam_img = lam_vec.to(x_i.dtype).view(n, *([1] * (x_i.ndim - 1)))
        return lam_img * x_i + (1.0 - lam_img) * x_j, lam_vec

    if mode != "cut":
        raise ValueError(f"mode must be 'blend' or 'cut', got {mode!r}")
    if rng is None:
        raise ValueError("cut mode needs an rng for box placement")

    h, w = x_i.shape[-2], x_i.shape[-1]
    mixed = x_i.clone()
    if scalar:
        top, left, ch, cw = _cut_box(h, w, float(lam_vec[0]), rng)
        if ch > 0 and cw > 0:
            mixed[..., top : top + ch, left : left + cw] = x_j[..., top : top + ch, left : left + cw]
        lam_vec.fill_(1.0 - (ch * cw) / (h * w))
    else:
        for i in range(n):
            top, left, ch, cw = _cut_box(h, w, float(lam_vec[i]), rng)
            if ch > 0 and cw > 0:
                mixed[i, ..., top : top + ch, left : left + cw] = x_j[
                    i, ..., top : top + ch, left : left + cw
                ]
            lam_vec[i] = 1.0 - (ch * cw) / (h * w)
    return mixed, lam_vec


def mix_labels(
    y_i: torch.Tensor, y_j: torch.Tensor, lam: float | torch.Tensor
) -> torch.Tensor:
    """Convex combination of class-distribution rows."""
    lam_t = torch.as_tensor(lam, dtype=y_i.dtype)
    if lam_t.ndim == 1:
        lam_t = lam_t.view(-1, 1)
    return lam_t * y_i + (1.0 - lam_t) * y_j


def _pseudo_targets(batch: PseudoBatch, cfg: MixConfig) -> torch.Tensor:
    return smooth_one_hot(batch.hard_label, batch.num_classes, cfg.label_smoothing,
                          dtype=batch.probs.dtype)


def pseudo_mixup(
    batch: PseudoBatch,
    cfg: MixConfig,
    tau: float,
    rng: np.random.Generator,
    pairing: np.ndarray | None = None,
) -> MixedBatch:
    """Mix the full batch with random ratios; gate on pre-mix confidence.

    A noisy sample can still leak into the loss as the minority side of a
    confident sample's mix, but it never passes the gate on its own.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be nonempty")
    j = pair_shuffle(n, rng) if pairing is None else np.asarray(pairing)
    lam = _sample_lambdas(cfg.mixup_alpha, n, rng)
    targets = _pseudo_targets(batch, cfg)
    mixed_x, lam_real = mix_images(
        batch.images_strong,
        batch.images_strong[j],
        torch.as_tensor(lam, dtype=batch.images_strong.dtype),
        mode=cfg.unlabeled_mode,
        rng=rng,
    )
    mixed_y = mix_labels(targets, targets[j], lam_real.to(targets.dtype))
    return MixedBatch(
        images=mixed_x,
        soft_labels=mixed_y,
        lam=lam_real,
        confidence_star=batch.confidence.clone(),
        include_mask=batch.confidence >= tau,
    )


def pseudo_mixup_plus(
    batch: PseudoBatch,
    cfg: MixConfig,
    tau: float,
    rng: np.random.Generator,
    pairing: np.ndarray | None = None,
) -> MixedBatch:
    """Drop the noisy samples, then mix the confident remainder.

    The output only contains above-threshold rows, so every produced
    sample is included. Fewer than two survivors pass through unmixed.
    An explicit pairing indexes into the surviving sub-batch.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be nonempty")
    keep = torch.nonzero(batch.clean_mask, as_tuple=False).flatten()
    k = int(keep.numel())
    images = batch.images_strong[keep]
    conf = batch.confidence[keep]
    targets = _pseudo_targets(batch, cfg)[keep]

    if k < 2:
        lam = torch.ones(k, dtype=batch.confidence.dtype)
        return MixedBatch(
            images=images,
            soft_labels=targets,
            lam=lam,
            confidence_star=conf.clone(),
            include_mask=torch.ones(k, dtype=torch.bool),
        )

    j = pair_shuffle(k, rng) if pairing is None else np.asarray(pairing)
    lam = _sample_lambdas(cfg.mixup_alpha, k, rng)
    mixed_x, lam_real = mix_images(
        images,
        images[j],
        torch.as_tensor(lam, dtype=images.dtype),
        mode=cfg.unlabeled_mode,
        rng=rng,
    )
    mixed_y = mix_labels(targets, targets[j], lam_real.to(targets.dtype))
    return MixedBatch(
        images=mixed_x,
        soft_labels=mixed_y,
        lam=lam_real,
        confidence_star=conf.clone(),
        include_mask=torch.ones(k, dtype=torch.bool),
    )


def prob_pseudo_mixup(
    batch: PseudoBatch,
    cfg: MixConfig,
    tau: float,
    rng: np.random.Generator,
    pairing: np.ndarray | None = None,
) -> MixedBatch:
    """Mix the full batch with confidence-weighted ratios.

    lam_i = o_i / (o_i + o_j) keeps the confident partner dominant, the
    confidence is updated to o*_i = max(o_i, o_j) to match the majority
    of the mixed content, and the gate is applied to o*. Random draws are
    only used for the pairing (and box placement in cut mode).
    """
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be nonempty")
    j_np = pair_shuffle(n, rng) if pairing is None else np.asarray(pairing)
    j = torch.as_tensor(j_np, dtype=torch.long)

    o_i = batch.confidence
    o_j = batch.confidence[j]
    lam = o_i / (o_i + o_j)
    o_star = torch.maximum(o_i, o_j)

    targets = _pseudo_targets(batch, cfg)
    mixed_x, lam_real = mix_images(
        batch.images_strong,
        batch.images_strong[j],
        lam.to(batch.images_strong.dtype),
        mode=cfg.unlabeled_mode,
        rng=rng,
    )
    mixed_y = mix_labels(targets, targets[j], lam_real.to(targets.dtype))
    lam_out = lam if cfg.unlabeled_mode == "blend" else lam_real.to(lam.dtype)
    return MixedBatch(
        images=mixed_x,
        soft_labels=mixed_y,
        lam=lam_out,
        confidence_star=o_star,
        include_mask=o_star >= tau,
    )


def mix_labeled(
    images: torch.Tensor,
    labels: torch.Tensor,
    num_classes: int,
    cfg: MixConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Combined mixup/cutmix policy for the supervised batch.

    Per batch, picks cutmix with probability switch_prob when both alphas
    are active, otherwise whichever is enabled; alphas of 0 disable
    mixing entirely (targets are still smoothed). Returns the realized
    batch-mean lam for diagnostics.
    """
    targets = smooth_one_hot(labels, num_classes, cfg.label_smoothing, dtype=images.dtype)
    use_mixup = cfg.mixup_alpha > 0
    use_cutmix = cfg.cutmix_alpha > 0
    if not use_mixup and not use_cutmix:
        return images, targets, 1.0

    if use_mixup and use_cutmix:
        cut = bool(rng.random() < cfg.switch_prob)
    else:
        cut = use_cutmix
    alpha = cfg.cutmix_alpha if cut else cfg.mixup_alpha

    n = images.shape[0]
    j = pair_shuffle(n, rng)
    if cfg.elementwise:
        lam = torch.as_tensor(_sample_lambdas(alpha, n, rng), dtype=images.dtype)
    else:
        lam = sample_lambda(alpha, rng)
    mixed_x, lam_real = mix_images(images, images[j], lam, mode="cut" if cut else "blend", rng=rng)
    mixed_y = mix_labels(targets, targets[j], lam_real.to(targets.dtype))
    return mixed_x, mixed_y, float(lam_real.mean())
