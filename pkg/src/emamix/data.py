"""Batch containers, dataset splitting, and deterministic batch planning.

The split keeps a per-class quota of labeled indices and leaves the full
training set (labels hidden) as the unlabeled pool. Batch plans are pure
functions of (seed, epoch), so any step of a run can be reproduced, or
resumed from, without carrying RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np
import torch

from .seeding import derive_rng

__all__ = [
    "LabeledBatch",
    "UnlabeledBatch",
    "ViewPair",
    "Dataset",
    "ArrayDataset",
    "ManifestDataset",
    "read_manifest",
    "write_manifest",
    "split_dataset",
    "steps_per_epoch",
    "labeled_pass_permutation",
    "unlabeled_epoch_permutation",
    "labeled_stream_slice",
    "epoch_index_batches",
    "make_batches",
]


@dataclass
class LabeledBatch:
    images: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self) -> None:
        if self.images.shape[0] < 1:
            raise ValueError("labeled batch must have at least one sample")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on batch size")
        if not torch.isfinite(self.images).all():
            raise ValueError("labeled batch contains non-finite image values")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class UnlabeledBatch:
    images: torch.Tensor

    def __post_init__(self) -> None:
        if not torch.isfinite(self.images).all():
            raise ValueError("unlabeled batch contains non-finite image values")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class ViewPair:
    """Weak and strong views of the same unlabeled batch, index-aligned."""

    weak: torch.Tensor
    strong: torch.Tensor

    def __post_init__(self) -> None:
        if self.weak.shape != self.strong.shape:
            raise ValueError("weak and strong views must have identical shape")

    def __len__(self) -> int:
        return self.weak.shape[0]


class Dataset(Protocol):
    """Indexed image collection with stable ordering."""

    num_classes: int

    def __len__(self) -> int: ...

    def image(self, index: int) -> torch.Tensor: ...

    def labels(self) -> np.ndarray: ...


class ArrayDataset:
    """In-memory dataset over pre-built tensors."""

    def __init__(self, images: torch.Tensor, labels: np.ndarray, num_classes: int):
        if images.shape[0] != len(labels):
            raise ValueError("images and labels disagree on length")
        self._images = images
        self._labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes

    def __len__(self) -> int:
        return self._images.shape[0]

    def image(self, index: int) -> torch.Tensor:
        return self._images[index]

    def labels(self) -> np.ndarray:
        return self._labels


class ManifestDataset:
    """Dataset backed by a manifest of image paths; decodes lazily."""

    def __init__(self, entries: Sequence[tuple[str, int]], num_classes: int, image_size: int):
        self._entries = list(entries)
        self.num_classes = num_classes
        self.image_size = image_size

    @classmethod
    def from_file(cls, path: str | Path, num_classes: int, image_size: int) -> "ManifestDataset":
        return cls(read_manifest(path), num_classes, image_size)

    def __len__(self) -> int:
        return len(self._entries)

    def image(self, index: int) -> torch.Tensor:
        from PIL import Image

        path, _ = self._entries[index]
        with Image.open(path) as im:
            im = im.convert("RGB").resize((self.image_size, self.image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1).contiguous()

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self._entries], dtype=np.int64)


def read_manifest(path: str | Path) -> list[tuple[str, int]]:
    """One "path label" pair per line, UTF-8, LF."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            p, label = line.rsplit(None, 1)
            entries.append((p, int(label)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed manifest line {line!r}") from exc
    return entries


def write_manifest(path: str | Path, entries: Sequence[tuple[str, int]]) -> None:
    text = "".join(f"{p} {label}\n" for p, label in entries)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    labels: Sequence[int] | np.ndarray,
    fraction: float,
    seed: int,
    num_classes: int | None = None,
) -> tuple[list[int], list[int]]:
    """Per-class labeled subset plus the full index list as unlabeled pool.

    Each class contributes round-half-up(fraction * class size), at least
    one, indices drawn without replacement. The unlabeled pool is every
    training index with labels hidden, including the labeled ones.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("dataset is empty")

    present = np.unique(labels)
    classes = range(num_classes) if num_classes is not None else present.tolist()
    labeled: list[int] = []
    for c in classes:
        class_indices = np.flatnonzero(labels == c)
        if class_indices.size == 0:
            raise ValueError(f"class {c} has no examples")
        quota = max(1, _round_half_up(fraction * class_indices.size))
        rng = derive_rng(seed, "split", int(c))
        chosen = rng.choice(class_indices, size=quota, replace=False)
        labeled.extend(int(i) for i in np.sort(chosen))
    return sorted(labeled), list(range(len(labels)))


def steps_per_epoch(n_unlabeled: int, batch_size: int, ratio: int) -> int:
    """One epoch is one pass over the unlabeled pool, dropping the last
    partial batch."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if ratio < 1:
        raise ValueError(f"unlabeled ratio must be >= 1, got {ratio}")
    return n_unlabeled // (ratio * batch_size)


def labeled_pass_permutation(labeled: Sequence[int], seed: int, pass_index: int) -> np.ndarray:
    """Shuffle of the labeled indices used for cycling pass pass_index."""
    rng = derive_rng(seed, "labeled_pass", pass_index)
    return rng.permutation(np.asarray(labeled, dtype=np.int64))


def unlabeled_epoch_permutation(unlabeled: Sequence[int], seed: int, epoch: int) -> np.ndarray:
    rng = derive_rng(seed, "unlabeled_epoch", epoch)
    return rng.permutation(np.asarray(unlabeled, dtype=np.int64))


def labeled_stream_slice(labeled: Sequence[int], seed: int, start: int, count: int) -> np.ndarray:
    """Indices [start, start+count) of the infinite cycling labeled stream.

    The stream is the concatenation of per-pass shuffles, so short labeled
    sets wrap around mid-batch; position p maps to pass p // len and
    offset p % len of that pass's permutation.
    """
    n = len(labeled)
    out = np.empty(count, dtype=np.int64)
    pos = start
    filled = 0
    while filled < count:
        pass_index, offset = divmod(pos, n)
        perm = labeled_pass_permutation(labeled, seed, pass_index)
        take = min(count - filled, n - offset)
        out[filled : filled + take] = perm[offset : offset + take]
        filled += take
        pos += take
    return out


def epoch_index_batches(
    labeled: Sequence[int],
    unlabeled: Sequence[int],
    batch_size: int,
    ratio: int,
    seed: int,
    epoch: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-step (labeled indices, unlabeled indices) for one epoch.

    Deterministic in (seed, epoch): the unlabeled pool is reshuffled per
    epoch and the labeled stream continues from where the previous epoch
    left off (a closed-form position, so no cursor state is needed).
    """
    if len(labeled) < 1:
        raise ValueError("need at least one labeled index")
    n_steps = steps_per_epoch(len(unlabeled), batch_size, ratio)
    if n_steps < 1:
        raise ValueError(
            f"unlabeled pool of {len(unlabeled)} is smaller than one batch "
            f"({ratio} x {batch_size})"
        )
    u_perm = unlabeled_epoch_permutation(unlabeled, seed, epoch)
    u_batch = ratio * batch_size
    stream_start = epoch * n_steps * batch_size
    batches = []
    for s in range(n_steps):
        l_idx = labeled_stream_slice(labeled, seed, stream_start + s * batch_size, batch_size)
        u_idx = u_perm[s * u_batch : (s + 1) * u_batch]
        batches.append((l_idx, u_idx))
    return batches


def gather(dataset: Dataset, indices: np.ndarray) -> torch.Tensor:
    return torch.stack([dataset.image(int(i)) for i in indices])


def make_batches(
    dataset: Dataset,
    labeled: Sequence[int],
    unlabeled: Sequence[int],
    batch_size: int,
    ratio: int,
    seed: int,
    epoch: int,
) -> Iterator[tuple[LabeledBatch, UnlabeledBatch]]:
    """Materialized (labeled, unlabeled) batches for one epoch."""
    all_labels = dataset.labels()
    for l_idx, u_idx in epoch_index_batches(labeled, unlabeled, batch_size, ratio, seed, epoch):
        yield (
            LabeledBatch(
                images=gather(dataset, l_idx),
                labels=torch.as_tensor(all_labels[l_idx], dtype=torch.long),
            ),
            UnlabeledBatch(images=gather(dataset, u_idx)),
        )
