"""Neighbor embedding: k-NN graphs and multi-scale attentive aggregation.

Each voxel gathers its nearest neighbors (itself included, always first),
encodes neighbor features and pairwise positional relations, fuses both into
per-channel relational weights, and aggregates over nested distance subspaces
(nearest N/S, 2N/S, ..., N neighbors) with a softmax over each subspace's
neighbor axis. A projected shortcut closes the residual.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .batching import SetBatch
from .nn import MLP, Module, Tensor


class InsufficientVoxelsError(ValueError):
    pass


def knn(coords: np.ndarray, k: int) -> np.ndarray:
    """Exact k nearest neighbors under squared Euclidean distance.

    Row i lists i first (self-loop), then others ordered by (distance,
    index); ties therefore resolve to the lowest voxel index.
    """
    n = coords.shape[0]
    if n < k:
        raise InsufficientVoxelsError(f"need at least {k} voxels, got {n}")
    c = coords.astype(np.float64)
    d = ((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d, -1.0)  # forces the self-loop to the front
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def knn_batched(coords: np.ndarray, set_size: int, n_sets: int,
                k: int) -> np.ndarray:
    """Per-set k-NN over concatenated rows; indices are global row numbers."""
    out = np.empty((n_sets * set_size, k), dtype=np.int64)
    for b in range(n_sets):
        lo = b * set_size
        out[lo:lo + set_size] = knn(coords[lo:lo + set_size], k) + lo
    return out


def relative_relation(c_i: np.ndarray, c_ij: np.ndarray) -> np.ndarray:
    """6-vector (c_i, c_i - c_ij) describing one neighboring pair."""
    c_i = np.asarray(c_i, dtype=np.float32)
    c_ij = np.asarray(c_ij, dtype=np.float32)
    return np.concatenate([c_i, c_i - c_ij])


def relation_vectors(coords: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Stacked relative_relation for every (voxel, neighbor) pair: (R*k, 6)."""
    k = idx.shape[1]
    ci = np.repeat(coords, k, axis=0).astype(np.float32)
    cj = coords[idx.reshape(-1)].astype(np.float32)
    return np.concatenate([ci, ci - cj], axis=1)


class NeighborEmbedding(Module):
    """Local aggregation layer (cli name: mnel).

    ``multi_scale=False`` collapses to a single subspace of all neighbors;
    ``attentive=False`` replaces softmax weighting with per-subspace max
    pooling of encoded neighbor features (the relation branch is then
    unused). ``fusion_relu``/``shortcut_relu`` restore the ReLU on the two
    MLPs that feed signed quantities (softmax logits, residual sum) for
    literal-reading ablations.
    """

    def __init__(self, d_in: int, d_out: int, n_neighbors: int, subspaces: int,
                 rng: np.random.Generator, multi_scale: bool = True,
                 attentive: bool = True, fusion_relu: bool = False,
                 shortcut_relu: bool = False, dtype=np.float32):
        super().__init__()
        if d_in % 2:
            raise ValueError(f"input width must be even, got {d_in}")
        if n_neighbors % subspaces:
            raise ValueError(
                f"subspace count {subspaces} must divide neighbors {n_neighbors}")
        d_e = d_in // 2
        self.d_in, self.d_out, self.d_e = d_in, d_out, d_e
        self.n_neighbors = n_neighbors
        self.subspaces = subspaces
        self.multi_scale = multi_scale
        self.attentive = attentive
        self.feat_enc = MLP(d_in, d_e, rng, dtype=dtype)
        self.rel_enc = MLP(6, d_e, rng, dtype=dtype)
        self.fuse = MLP(2 * d_e, d_e, rng, relu=fusion_relu, dtype=dtype)
        self.out = MLP(d_e, d_out, rng, dtype=dtype)
        self.shortcut = (None if d_in == d_out
                         else MLP(d_in, d_out, rng, relu=shortcut_relu, dtype=dtype))

    def subspace_sizes(self) -> list[int]:
        if not self.multi_scale:
            return [self.n_neighbors]
        step = self.n_neighbors // self.subspaces
        return [step * k for k in range(1, self.subspaces + 1)]

    def forward(self, batch: SetBatch) -> Tensor:
        rows, k = batch.rows, self.n_neighbors
        idx = knn_batched(batch.coords, batch.set_size, batch.n_sets, k)
        f_enc = self.feat_enc(batch.features)                     # (R, De)
        f_nbr = nn.gather_rows(f_enc, idx.reshape(-1))            # (R*k, De)
        f3 = f_nbr.reshape(rows, k, self.d_e)
        if self.attentive:
            rel = Tensor(relation_vectors(batch.coords, idx).astype(
                batch.features.dtype))
            r_enc = self.rel_enc(rel)
            weights = self.fuse(nn.concat([f_nbr, r_enc], axis=1))
            w3 = weights.reshape(rows, k, self.d_e)
        agg = None
        for m in self.subspace_sizes():
            fs = f3[:, :m, :]
            if self.attentive:
                scores = nn.softmax(w3[:, :m, :], axis=1)
                contrib = (fs * scores).sum(axis=1)
            else:
                contrib = fs.max(axis=1)
            agg = contrib if agg is None else agg + contrib
        out = self.out(agg)
        residual = (batch.features if self.shortcut is None
                    else self.shortcut(batch.features))
        return out + residual
