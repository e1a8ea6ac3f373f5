"""Batches of equal-size voxel sets, stored as concatenated rows.

Row-wise layers (linear, batch norm) act on the concatenated matrix, which
makes batch-norm statistics span every voxel row in the batch; attention and
neighbor search slice per set. Coordinates are plain numpy since gradients
never flow into them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.tensor import Tensor
from .voxel import VoxelSet


@dataclass
class SetBatch:
    features: Tensor      # (n_sets * set_size, d)
    coords: np.ndarray    # (n_sets * set_size, 3) float32
    set_size: int
    n_sets: int

    def __post_init__(self):
        if self.features.shape[0] != self.set_size * self.n_sets:
            raise ValueError(
                f"feature rows {self.features.shape[0]} != "
                f"{self.n_sets} sets x {self.set_size}")

    @property
    def rows(self) -> int:
        return self.set_size * self.n_sets

    def set_slice(self, i: int) -> slice:
        return slice(i * self.set_size, (i + 1) * self.set_size)


def batch_from_voxel_sets(sets: list[VoxelSet], dtype=np.float32) -> SetBatch:
    sizes = {len(vs) for vs in sets}
    if len(sizes) != 1:
        raise ValueError(f"voxel sets in a batch must match in size, got {sizes}")
    feats = np.concatenate([vs.patches for vs in sets]).astype(dtype)
    coords = np.concatenate([vs.coords for vs in sets]).astype(np.float32)
    return SetBatch(Tensor(feats), coords, sizes.pop(), len(sets))
