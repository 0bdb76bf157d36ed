"""Top-k accuracy over a labeled evaluation set."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .augment import center_crop
from .data import Dataset, gather

__all__ = ["evaluate", "topk_accuracy"]


def topk_accuracy(logits: torch.Tensor, labels: torch.Tensor, k: int) -> int:
    """Number of rows whose label appears in the top k logits."""
    k = min(k, logits.shape[1])
    top = logits.topk(k, dim=1).indices
    return int((top == labels[:, None]).any(dim=1).sum())


def evaluate(
    model: nn.Module,
    dataset: Dataset,
    image_size: int,
    batch_size: int = 256,
) -> tuple[float, float]:
    """(top-1, top-5) accuracy in percent, center-crop preprocessing.

    Top-5 saturates at 100 when there are five or fewer classes.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("evaluation set is empty")
    labels = dataset.labels()
    was_training = model.training
    model.eval()
    hit1 = hit5 = 0
    try:
        with torch.no_grad():
            for start in range(0, n, batch_size):
                idx = np.arange(start, min(start + batch_size, n))
                images = center_crop(gather(dataset, idx), image_size)
                logits = model(images)
                batch_labels = torch.as_tensor(labels[idx], dtype=torch.long)
                hit1 += topk_accuracy(logits, batch_labels, 1)
                hit5 += topk_accuracy(logits, batch_labels, 5)
    finally:
        model.train(was_training)
    return 100.0 * hit1 / n, 100.0 * hit5 / n
