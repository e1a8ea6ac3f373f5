"""Classification loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the batch.

    The gradient that falls out of the tape is (softmax - onehot) / N.
    """
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    logp = T.log_softmax(logits, axis=1)
    flat = logp.reshape(n * c)
    picked = T.gather_rows(flat, np.arange(n) * c + labels)
    return -picked.mean()
