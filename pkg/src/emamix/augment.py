"""Weak/strong/labeled augmentation policies on [N, C, H, W] tensors.

The weak policy is light (crop, flip, color jitter); the strong and
labeled policies add a RandAugment-style op sequence and random erasing.
Geometric magnitudes are expressed relative to image size, so the same
policy works at desk scale. Every transform draws from a per-sample
generator derived from (seed, sample index), which makes apply() a pure
function and lets parallel workers share nothing.

This is a self-contained tensor implementation, not a bit-for-bit clone
of any third-party augmentation library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import UnlabeledBatch, ViewPair
from .seeding import derive_rng, derive_seed

__all__ = [
    "AugmentPolicy",
    "identity_policy",
    "weak_policy",
    "strong_policy",
    "labeled_policy",
    "apply",
    "make_views",
    "center_crop",
]


@dataclass(frozen=True)
class AugmentPolicy:
    """Full description of one augmentation pipeline; no hidden defaults.

    rand_augment is (num_ops, magnitude in [0, 10], magnitude std). A
    weak or identity policy must not carry strong-only transforms
    (RandAugment ops, erasing); that is enforced at construction.
    """

    name: str
    crop_scale: tuple[float, float] = (1.0, 1.0)
    hflip_prob: float = 0.0
    color_jitter: float = 0.0
    rand_augment: tuple[int, int, float] = (0, 0, 0.0)
    erase_prob: float = 0.0
    erase_scale: tuple[float, float] = (0.02, 0.33)
    erase_aspect: tuple[float, float] = (0.3, 3.3)
    erase_fill: float = 0.0

    def __post_init__(self) -> None:
        if self.name not in ("weak", "strong", "labeled", "identity"):
            raise ValueError(f"unknown policy name {self.name!r}")
        for p in (self.hflip_prob, self.erase_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must be in [0, 1], got {p}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must be ordered within (0, 1], got {self.crop_scale}")
        if self.name in ("weak", "identity"):
            if self.rand_augment[0] != 0 or self.erase_prob != 0.0:
                raise ValueError(f"{self.name} policy cannot use RandAugment ops or erasing")
        if self.name == "identity":
            if self.crop_scale != (1.0, 1.0) or self.hflip_prob != 0.0 or self.color_jitter != 0.0:
                raise ValueError("identity policy must not transform anything")

    @property
    def is_identity(self) -> bool:
        return self.name == "identity"

    @property
    def min_size(self) -> int:
        return 1 if self.is_identity else 2


def identity_policy() -> AugmentPolicy:
    return AugmentPolicy(name="identity")


def weak_policy(crop_scale: tuple[float, float] = (0.6, 1.0), hflip_prob: float = 0.5,
                color_jitter: float = 0.4) -> AugmentPolicy:
    return AugmentPolicy(
        name="weak", crop_scale=crop_scale, hflip_prob=hflip_prob, color_jitter=color_jitter
    )


def strong_policy(
    crop_scale: tuple[float, float] = (0.35, 1.0),
    hflip_prob: float = 0.5,
    rand_augment: tuple[int, int, float] = (2, 9, 0.5),
    erase_prob: float = 0.25,
) -> AugmentPolicy:
    return AugmentPolicy(
        name="strong",
        crop_scale=crop_scale,
        hflip_prob=hflip_prob,
        rand_augment=rand_augment,
        erase_prob=erase_prob,
    )


def labeled_policy(
    crop_scale: tuple[float, float] = (0.35, 1.0),
    hflip_prob: float = 0.5,
    rand_augment: tuple[int, int, float] = (2, 9, 0.5),
    erase_prob: float = 0.25,
) -> AugmentPolicy:
    return AugmentPolicy(
        name="labeled",
        crop_scale=crop_scale,
        hflip_prob=hflip_prob,
        rand_augment=rand_augment,
        erase_prob=erase_prob,
    )


def _resize(img: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return F.interpolate(img[None], size=(h, w), mode="bilinear", align_corners=False)[0]


def _random_resized_crop(img: torch.Tensor, scale: tuple[float, float],
                         rng: np.random.Generator) -> torch.Tensor:
    h, w = img.shape[-2], img.shape[-1]
    area = h * w
    log_ratio = (math.log(3.0 / 4.0), math.log(4.0 / 3.0))
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        cw = int(round(math.sqrt(target_area * aspect)))
        ch = int(round(math.sqrt(target_area / aspect)))
        if 1 <= cw <= w and 1 <= ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return _resize(img[..., top : top + ch, left : left + cw], h, w)
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return _resize(img[..., top : top + side, left : left + side], h, w)


def _blend(a: torch.Tensor, b: torch.Tensor, factor: float) -> torch.Tensor:
    """a + factor * (b - a); factor 1 keeps b, factor 0 keeps a."""
    return a + factor * (b - a)


def _grayscale(img: torch.Tensor) -> torch.Tensor:
    if img.shape[0] == 3:
        weights = torch.tensor([0.299, 0.587, 0.114], dtype=img.dtype)
        return (img * weights[:, None, None]).sum(0, keepdim=True)
    return img.mean(0, keepdim=True)


def _color_jitter(img: torch.Tensor, strength: float, rng: np.random.Generator) -> torch.Tensor:
    lo = max(0.0, 1.0 - strength)
    hi = 1.0 + strength
    img = img * rng.uniform(lo, hi)
    img = _blend(torch.full_like(img, float(_grayscale(img).mean())), img, rng.uniform(lo, hi))
    img = _blend(_grayscale(img).expand_as(img), img, rng.uniform(lo, hi))
    return img


def _affine(img: torch.Tensor, angle_deg: float = 0.0, translate: tuple[float, float] = (0.0, 0.0),
            shear: tuple[float, float] = (0.0, 0.0)) -> torch.Tensor:
    """Affine warp in normalized coordinates, zero fill outside."""
    a = math.radians(angle_deg)
    fwd = np.array(
        [
            [math.cos(a), -math.sin(a), translate[0] * 2.0],
            [math.sin(a), math.cos(a), translate[1] * 2.0],
            [0.0, 0.0, 1.0],
        ]
    ) @ np.array([[1.0, shear[0], 0.0], [shear[1], 1.0, 0.0], [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(fwd)
    theta = torch.as_tensor(inv[:2], dtype=img.dtype)[None]
    grid = F.affine_grid(theta, [1, *img.shape], align_corners=False)
    return F.grid_sample(img[None], grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)[0]


def _sharpness(img: torch.Tensor, factor: float) -> torch.Tensor:
    c = img.shape[0]
    kernel = torch.tensor([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]], dtype=img.dtype)
    kernel = (kernel / kernel.sum()).expand(c, 1, 3, 3)
    smoothed = F.conv2d(F.pad(img[None], (1, 1, 1, 1), mode="replicate"), kernel, groups=c)[0]
    return _blend(smoothed, img, factor)


def _posterize(img: torch.Tensor, levels: int) -> torch.Tensor:
    return torch.clamp(torch.floor(img * levels) / levels, 0.0, 1.0)


def _solarize(img: torch.Tensor, threshold: float) -> torch.Tensor:
    return torch.where(img >= threshold, 1.0 - img, img)


_RAND_OPS = (
    "identity",
    "brightness",
    "contrast",
    "color",
    "sharpness",
    "posterize",
    "solarize",
    "rotate",
    "shear_x",
    "shear_y",
    "translate_x",
    "translate_y",
)


def _apply_rand_op(img: torch.Tensor, op: str, frac: float, rng: np.random.Generator) -> torch.Tensor:
    direction = 1.0 if rng.random() < 0.5 else -1.0
    if op == "identity":
        return img
    if op == "brightness":
        return img * (1.0 + direction * 0.9 * frac)
    if op == "contrast":
        mean = float(_grayscale(img).mean())
        return _blend(torch.full_like(img, mean), img, 1.0 + direction * 0.9 * frac)
    if op == "color":
        return _blend(_grayscale(img).expand_as(img), img, 1.0 + direction * 0.9 * frac)
    if op == "sharpness":
        return _sharpness(img, 1.0 + direction * 0.9 * frac)
    if op == "posterize":
        bits = 8 - int(round(4 * frac))
        return _posterize(img, 2 ** bits)
    if op == "solarize":
        return _solarize(img, 1.0 - frac)
    if op == "rotate":
        return _affine(img, angle_deg=direction * 30.0 * frac)
    if op == "shear_x":
        return _affine(img, shear=(direction * 0.3 * frac, 0.0))
    if op == "shear_y":
        return _affine(img, shear=(0.0, direction * 0.3 * frac))
    if op == "translate_x":
        return _affine(img, translate=(direction * 0.45 * frac, 0.0))
    if op == "translate_y":
        return _affine(img, translate=(0.0, direction * 0.45 * frac))
    raise ValueError(f"unknown rand-augment op {op!r}")


def _rand_augment(img: torch.Tensor, spec: tuple[int, int, float],
                  rng: np.random.Generator) -> torch.Tensor:
    num_ops, magnitude, std = spec
    for _ in range(num_ops):
        op = _RAND_OPS[int(rng.integers(0, len(_RAND_OPS)))]
        mag = magnitude if std == 0 else rng.normal(magnitude, std)
        frac = float(np.clip(mag, 0.0, 10.0)) / 10.0
        img = _apply_rand_op(img, op, frac, rng)
    return img


def _random_erase(img: torch.Tensor, policy: AugmentPolicy, rng: np.random.Generator) -> torch.Tensor:
    if rng.random() >= policy.erase_prob:
        return img
    h, w = img.shape[-2], img.shape[-1]
    area = h * w
    log_aspect = (math.log(policy.erase_aspect[0]), math.log(policy.erase_aspect[1]))
    for _ in range(10):
        target = area * rng.uniform(*policy.erase_scale)
        aspect = math.exp(rng.uniform(*log_aspect))
        eh = int(round(math.sqrt(target * aspect)))
        ew = int(round(math.sqrt(target / aspect)))
        if 1 <= eh <= h and 1 <= ew <= w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            img = img.clone()
            img[..., top : top + eh, left : left + ew] = policy.erase_fill
            return img
    return img


def apply(policy: AugmentPolicy, images: torch.Tensor, seed: int) -> torch.Tensor:
    """Augment a batch; same (policy, images, seed) gives the same output.

    Per-sample generators are derived from (seed, sample index). Output
    values are clipped back to [0, 1].
    """
    if images.ndim != 4:
        raise ValueError(f"expected [N, C, H, W], got shape {tuple(images.shape)}")
    h, w = images.shape[-2], images.shape[-1]
    if h < policy.min_size or w < policy.min_size:
        raise ValueError(f"image {h}x{w} smaller than policy minimum crop {policy.min_size}")
    if policy.is_identity:
        return images.clone()

    out = torch.empty_like(images)
    for i in range(images.shape[0]):
        rng = derive_rng(seed, i)
        img = images[i]
        img = _random_resized_crop(img, policy.crop_scale, rng)
        if rng.random() < policy.hflip_prob:
            img = torch.flip(img, dims=[-1])
        if policy.color_jitter > 0:
            img = _color_jitter(img, policy.color_jitter, rng)
        if policy.rand_augment[0] > 0:
            img = _rand_augment(img, policy.rand_augment, rng)
        if policy.erase_prob > 0:
            img = _random_erase(img, policy, rng)
        out[i] = torch.clamp(img, 0.0, 1.0)
    return out


def make_views(
    batch: UnlabeledBatch,
    seed: int,
    weak: AugmentPolicy | None = None,
    strong: AugmentPolicy | None = None,
) -> ViewPair:
    """Weak and strong views of the batch, index-aligned.

    Seed derivation rule: weak uses derive_seed(seed, "weak") and strong
    uses derive_seed(seed, "strong"), so each view equals a direct
    apply() call with the derived seed.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    weak = weak if weak is not None else weak_policy()
    strong = strong if strong is not None else strong_policy()
    return ViewPair(
        weak=apply(weak, batch.images, derive_seed(seed, "weak")),
        strong=apply(strong, batch.images, derive_seed(seed, "strong")),
    )


def center_crop(images: torch.Tensor, size: int) -> torch.Tensor:
    """Inference-time preprocessing: crop the centered size x size window."""
    h, w = images.shape[-2], images.shape[-1]
    if h < size or w < size:
        raise ValueError(f"cannot center-crop {h}x{w} to {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return images[..., top : top + size, left : left + size]
