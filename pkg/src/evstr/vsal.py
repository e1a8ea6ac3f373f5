"""Global feature interaction: self-attention over voxel sets.

Features get absolute positional embeddings (an MLP of the grid coordinate)
added before the query/key/value projections, and the attention logits carry
a learned scalar bias per voxel pair computed from their relative positions.
Attention, softmax, and the output projection follow one voxel set at a
time; projections and the bias encoder run over the whole batch so
batch-norm statistics cover every row.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .batching import SetBatch
from .nn import MLP, BatchNorm, Linear, Module, Parameter, Tensor, uniform_init


def attend(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None,
           scale: float = 1.0) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention; returns (values, attention weights)."""
    scores = (q @ k.T) * scale
    if bias is not None:
        scores = scores + bias
    weights = nn.softmax(scores, axis=1)
    return weights @ v, weights


class PairBiasEncoder(Module):
    """Two linear stages squeezing a pair's 6-vector relation to a scalar."""

    def __init__(self, d_hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.lin1 = Linear(6, d_hidden, rng, dtype=dtype)
        self.bn = BatchNorm(d_hidden, dtype=dtype)
        self.lin2 = Linear(d_hidden, 1, rng, dtype=dtype)

    def forward(self, rel: Tensor) -> Tensor:
        return self.lin2(nn.relu(self.bn(self.lin1(rel))))


class VoxelAttention(Module):
    """Self-attention layer over voxel features (cli name: vsal).

    ``ape``/``rpb`` toggle the absolute positional embeddings and the
    relative position bias. The logits are scaled by 1/sqrt(d_model) as the
    aggregation rule is written; ``scale_quarter`` switches to the
    conventional 1/sqrt(d_model/4) matching the actual query width.
    """

    def __init__(self, d_model: int, rng: np.random.Generator,
                 ape: bool = True, rpb: bool = True, scale_quarter: bool = False,
                 out_relu: bool = False, dtype=np.float32):
        super().__init__()
        if d_model % 4:
            raise ValueError(f"model width must be divisible by 4, got {d_model}")
        self.d_model = d_model
        self.ape = ape
        self.rpb = rpb
        self.scale = 1.0 / np.sqrt(d_model / 4 if scale_quarter else d_model)
        self.pos_mlp = MLP(3, d_model, rng, dtype=dtype)
        self.w_q = Parameter(uniform_init(rng, d_model, (d_model, d_model // 4), dtype))
        self.w_k = Parameter(uniform_init(rng, d_model, (d_model, d_model // 4), dtype))
        self.w_v = Parameter(uniform_init(rng, d_model, (d_model, d_model), dtype))
        self.bias_enc = PairBiasEncoder(d_model // 4, rng, dtype=dtype)
        self.out_mlp = MLP(d_model, d_model, rng, relu=out_relu, dtype=dtype)

    def absolute_pe(self, coords: np.ndarray, dtype=None) -> Tensor:
        dtype = dtype or np.float32
        return self.pos_mlp(Tensor(coords.astype(dtype)))

    def pair_relations(self, coords: np.ndarray) -> np.ndarray:
        """All-pairs (c_i, c_i - c_j) rows, shape (n*n, 6), row-major in i."""
        n = coords.shape[0]
        ci = np.repeat(coords, n, axis=0)
        cj = np.tile(coords, (n, 1))
        return np.concatenate([ci, ci - cj], axis=1).astype(np.float32)

    def relative_bias(self, coords: np.ndarray, dtype=None) -> Tensor:
        """Dense (n, n) bias matrix for one voxel set."""
        n = coords.shape[0]
        rel = Tensor(self.pair_relations(coords).astype(dtype or np.float32))
        return self.bias_enc(rel).reshape(n, n)

    def forward(self, batch: SetBatch) -> Tensor:
        feats = batch.features
        dtype = feats.dtype
        x = feats + self.absolute_pe(batch.coords, dtype) if self.ape else feats
        q = x @ self.w_q
        k = x @ self.w_k
        v = x @ self.w_v
        bias = None
        if self.rpb:
            n = batch.set_size
            rels = np.concatenate([
                self.pair_relations(batch.coords[batch.set_slice(b)])
                for b in range(batch.n_sets)])
            bias = self.bias_enc(Tensor(rels.astype(dtype)))
            bias = bias.reshape(batch.n_sets * n, n)
        outs = []
        for b in range(batch.n_sets):
            sl = batch.set_slice(b)
            bias_b = None
            if bias is not None:
                bias_b = bias[b * batch.set_size:(b + 1) * batch.set_size, :]
            attended, _ = attend(q[sl], k[sl], v[sl], bias_b, self.scale)
            outs.append(attended)
        a = nn.concat(outs, axis=0) if len(outs) > 1 else outs[0]
        return self.out_mlp(a) + feats
