"""Network assembly: encoder stack, task heads, segment temporal modeling.

The encoder runs three neighbor-embedding layers with progressive random
downsampling, then two voxel-attention layers at fixed size; both attention
outputs are concatenated and fused back to the model width. The object head
pools voxel rows and classifies; the action model encodes every stream
segment with the shared encoder, maps each to a token, and aggregates the
token sequence with a small transformer (or an ablation aggregator).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .batching import SetBatch
from .config import EncoderConfig, RunConfig, S2tmConfig
from .mnel import NeighborEmbedding
from .nn import (MLP, BatchNorm, Dropout, LayerNorm, Linear, Module,
                 Parameter, Tensor, uniform_init)
from .seeding import derive_seed
from .vsal import VoxelAttention, attend
from .voxel import downsample_indices


class Encoder(Module):
    """Five-layer voxel-set encoder; ``last_stage_rows`` traces row counts."""

    def __init__(self, patch_len: int, cfg: EncoderConfig,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        d1, d2, d3 = cfg.mnel_dims
        self.voxel_feat = MLP(patch_len, cfg.d_f, rng, dtype=dtype)
        mnel_kw = dict(n_neighbors=cfg.n_neighbors, subspaces=cfg.subspaces,
                       multi_scale=cfg.multi_scale, attentive=cfg.attentive,
                       fusion_relu=cfg.fusion_relu, shortcut_relu=cfg.shortcut_relu,
                       dtype=dtype)
        self.mnel1 = NeighborEmbedding(cfg.d_f, d1, rng=rng, **mnel_kw)
        self.mnel2 = NeighborEmbedding(d1, d2, rng=rng, **mnel_kw)
        self.mnel3 = NeighborEmbedding(d2, d3, rng=rng, **mnel_kw)
        vsal_kw = dict(ape=cfg.ape, rpb=cfg.rpb, scale_quarter=cfg.scale_quarter,
                       out_relu=cfg.vsal_out_relu, dtype=dtype)
        self.vsal1 = VoxelAttention(cfg.d_model, rng=rng, **vsal_kw)
        self.vsal2 = VoxelAttention(cfg.d_model, rng=rng, **vsal_kw)
        self.fusion = MLP(2 * cfg.d_model, cfg.d_model, rng, dtype=dtype)
        self.last_stage_rows: list[int] = []

    def _downsample(self, batch: SetBatch, stage: int, seed: int) -> SetBatch:
        n = batch.set_size
        offsets = []
        for b in range(batch.n_sets):
            idx = downsample_indices(n, self.cfg.sample_rate,
                                     derive_seed(seed, stage, b))
            offsets.append(idx + b * n)
        gidx = np.concatenate(offsets)
        feats = nn.gather_rows(batch.features, gidx)
        m = int(np.floor(self.cfg.sample_rate * n))
        return SetBatch(feats, batch.coords[gidx], m, batch.n_sets)

    def forward(self, batch: SetBatch, seed: int) -> SetBatch:
        self.last_stage_rows = []
        x = SetBatch(self.voxel_feat(batch.features), batch.coords,
                     batch.set_size, batch.n_sets)
        for stage, layer in enumerate((self.mnel1, self.mnel2, self.mnel3)):
            self.last_stage_rows.append(x.set_size)
            x = SetBatch(layer(x), x.coords, x.set_size, x.n_sets)
            x = self._downsample(x, stage, seed)
        self.last_stage_rows.append(x.set_size)
        a1 = self.vsal1(x)
        x1 = SetBatch(a1, x.coords, x.set_size, x.n_sets)
        self.last_stage_rows.append(x1.set_size)
        a2 = self.vsal2(x1)
        fused = self.fusion(nn.concat([a1, a2], axis=1))
        return SetBatch(fused, x.coords, x.set_size, x.n_sets)


def pool_sets(batch: SetBatch) -> Tensor:
    """Per-set concat(max-pool, mean-pool) over voxel rows: (n_sets, 2d)."""
    d = batch.features.shape[1]
    grid = batch.features.reshape(batch.n_sets, batch.set_size, d)
    return nn.concat([grid.max(axis=1), grid.mean(axis=1)], axis=1)


class ObjectClassifier(Module):
    """Encoder plus a three-layer classification head over pooled features."""

    def __init__(self, patch_len: int, classes: int, cfg: EncoderConfig,
                 rng: np.random.Generator, dropout: float = 0.5,
                 dtype=np.float32):
        super().__init__()
        self.encoder = Encoder(patch_len, cfg, rng, dtype=dtype)
        d = cfg.d_model
        self.fc1 = MLP(2 * d, 512, rng, dtype=dtype)
        self.drop1 = Dropout(dropout)
        self.fc2 = MLP(512, 256, rng, dtype=dtype)
        self.drop2 = Dropout(dropout)
        self.fc3 = Linear(256, classes, rng, dtype=dtype)

    def forward(self, batch: SetBatch, seed: int,
                dropout_seed: int | None = None) -> Tensor:
        encoded = self.encoder(batch, seed)
        pooled = pool_sets(encoded)
        h = self.drop1(self.fc1(pooled),
                       None if dropout_seed is None else derive_seed(dropout_seed, 1))
        h = self.drop2(self.fc2(h),
                       None if dropout_seed is None else derive_seed(dropout_seed, 2))
        return self.fc3(h)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, head_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        inner = heads * head_dim
        self.heads, self.head_dim = heads, head_dim
        self.q = Linear(dim, inner, rng, dtype=dtype)
        self.k = Linear(dim, inner, rng, dtype=dtype)
        self.v = Linear(dim, inner, rng, dtype=dtype)
        self.proj = Linear(inner, dim, rng, dtype=dtype)
        self.scale = 1.0 / np.sqrt(head_dim)

    def forward(self, x: Tensor) -> Tensor:
        q, k, v = self.q(x), self.k(x), self.v(x)
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            attended, _ = attend(q[:, cols], k[:, cols], v[:, cols],
                                 scale=self.scale)
            outs.append(attended)
        return self.proj(nn.concat(outs, axis=1))


class TransformerLayer(Module):
    """Pre-norm encoder block: LN -> MHA -> residual, LN -> FFN -> residual."""

    def __init__(self, dim: int, heads: int, head_dim: int, ffn_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, head_dim, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.ffn1 = Linear(dim, ffn_dim, rng, dtype=dtype)
        self.ffn2 = Linear(ffn_dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ffn2(nn.relu(self.ffn1(self.ln2(x))))


class GruCell(Module):
    """Single gated recurrent cell; the ablation aggregator over tokens."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.zx = Linear(dim, dim, rng, dtype=dtype)
        self.zh = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.rx = Linear(dim, dim, rng, dtype=dtype)
        self.rh = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.hx = Linear(dim, dim, rng, dtype=dtype)
        self.hh = Linear(dim, dim, rng, bias=False, dtype=dtype)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        z = nn.sigmoid(self.zx(x) + self.zh(h))
        r = nn.sigmoid(self.rx(x) + self.rh(h))
        cand = nn.tanh(self.hx(x) + self.hh(r * h))
        return (1.0 - z) * h + z * cand


class SegmentTemporalModel(Module):
    """Token-level aggregation over per-segment features (cli name: s2tm).

    Maps each segment's pooled feature to a token, then aggregates the
    sequence with the configured temporal model. Self-attention prepends a
    learnable class token, adds trainable positional embeddings, and reads
    the class token back out of one transformer layer.
    """

    def __init__(self, d_model: int, cfg: S2tmConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.mapping = MLP(2 * d_model, cfg.token_dim, rng, dtype=dtype)
        if cfg.temporal_model == "self-attention":
            self.cls_token = Parameter(
                rng.normal(0.0, 0.02, size=(1, cfg.token_dim)).astype(dtype))
            self.pos_embed = Parameter(
                rng.normal(0.0, 0.02,
                           size=(cfg.segments + 1, cfg.token_dim)).astype(dtype))
            self.block = TransformerLayer(cfg.token_dim, cfg.heads, cfg.head_dim,
                                          cfg.ffn_dim, rng, dtype=dtype)
        elif cfg.temporal_model == "recurrent":
            self.cell = GruCell(cfg.token_dim, rng, dtype=dtype)

    def forward(self, encoded: SetBatch, batch_samples: int) -> Tensor:
        """encoded holds batch_samples * segments voxel sets, segment-major
        within each sample; returns one representation row per sample."""
        k = self.cfg.segments
        if encoded.n_sets != batch_samples * k:
            raise ValueError(
                f"expected {batch_samples}x{k} voxel sets, got {encoded.n_sets}")
        tokens = self.mapping(pool_sets(encoded))  # (samples*k, token_dim)
        if self.cfg.temporal_model == "avgpool":
            grid = tokens.reshape(batch_samples, k, self.cfg.token_dim)
            return grid.mean(axis=1)
        if self.cfg.temporal_model == "recurrent":
            grid = tokens.reshape(batch_samples, k, self.cfg.token_dim)
            h = Tensor(np.zeros((batch_samples, self.cfg.token_dim),
                                dtype=tokens.data.dtype))
            for step in range(k):
                h = self.cell(grid[:, step, :], h)
            return h
        outs = []
        for b in range(batch_samples):
            seq = nn.concat([self.cls_token,
                             tokens[b * k:(b + 1) * k, :]], axis=0)
            seq = seq + self.pos_embed
            out = self.block(seq)
            outs.append(out[0:1, :])
        return nn.concat(outs, axis=0) if len(outs) > 1 else outs[0]


class ActionRecognizer(Module):
    """Weight-shared encoder per segment, temporal aggregation, single FC."""

    def __init__(self, patch_len: int, classes: int, enc_cfg: EncoderConfig,
                 s2tm_cfg: S2tmConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.encoder = Encoder(patch_len, enc_cfg, rng, dtype=dtype)
        self.s2tm = SegmentTemporalModel(enc_cfg.d_model, s2tm_cfg, rng,
                                         dtype=dtype)
        self.head = Linear(s2tm_cfg.token_dim, classes, rng, dtype=dtype)

    def forward(self, batch: SetBatch, batch_samples: int, seed: int) -> Tensor:
        encoded = self.encoder(batch, seed)
        return self.head(self.s2tm(encoded, batch_samples))


def build_model(cfg: RunConfig, dtype=np.float32) -> Module:
    cfg.validate()
    rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    patch_len = cfg.grid().patch_len
    if cfg.task == "object":
        return ObjectClassifier(patch_len, cfg.classes, cfg.encoder, rng,
                                dropout=cfg.dropout, dtype=dtype)
    return ActionRecognizer(patch_len, cfg.classes, cfg.encoder, cfg.s2tm,
                            rng, dtype=dtype)


# -- complexity reporting ---------------------------------------------------


def count_parameters(model: Module) -> int:
    return model.num_parameters()


@dataclass
class MacItem:
    name: str
    rows: int
    macs: int


def _mnel_macs(name: str, n: int, d_in: int, d_out: int,
               cfg: EncoderConfig) -> list[MacItem]:
    k = cfg.n_neighbors
    d_e = d_in // 2
    items = [MacItem(f"{name}.feat_enc", n, n * d_in * d_e)]
    if cfg.attentive:
        items.append(MacItem(f"{name}.rel_enc", n * k, n * k * 6 * d_e))
        items.append(MacItem(f"{name}.fuse", n * k, n * k * 2 * d_e * d_e))
    if cfg.multi_scale:
        sizes = [k * s // cfg.subspaces for s in range(1, cfg.subspaces + 1)]
    else:
        sizes = [k]
    items.append(MacItem(f"{name}.aggregate", n, n * d_e * sum(sizes)))
    items.append(MacItem(f"{name}.out", n, n * d_e * d_out))
    if d_in != d_out:
        items.append(MacItem(f"{name}.shortcut", n, n * d_in * d_out))
    return items


def _vsal_macs(name: str, n: int, cfg: EncoderConfig) -> list[MacItem]:
    d = cfg.d_model
    items = []
    if cfg.ape:
        items.append(MacItem(f"{name}.pos_mlp", n, n * 3 * d))
    items.append(MacItem(f"{name}.qkv", n, n * d * (d // 4 + d // 4 + d)))
    if cfg.rpb:
        d_b = d // 4
        items.append(MacItem(f"{name}.bias_enc", n * n, n * n * (6 * d_b + d_b)))
    items.append(MacItem(f"{name}.scores", n, n * n * (d // 4)))
    items.append(MacItem(f"{name}.values", n, n * n * d))
    items.append(MacItem(f"{name}.out_mlp", n, n * d * d))
    return items


def estimate_macs(cfg: RunConfig) -> tuple[int, list[MacItem]]:
    """Multiply-accumulate estimate for one sample at batch size 1.

    Counted: every linear map (rows x in x out), the attention score and
    value matmuls, the pair-bias encoder over n^2 pairs, and the
    Hadamard-weighted neighbor aggregation. Elementwise work (BN, ReLU,
    softmax), pooling, and neighbor search are not counted.
    """
    enc = cfg.encoder
    stages = enc.stage_sizes(cfg.n_voxels)
    d1, d2, d3 = enc.mnel_dims
    items = [MacItem("voxel_feat", stages[0],
                     stages[0] * cfg.grid().patch_len * enc.d_f)]
    items += _mnel_macs("mnel1", stages[0], enc.d_f, d1, enc)
    items += _mnel_macs("mnel2", stages[1], d1, d2, enc)
    items += _mnel_macs("mnel3", stages[2], d2, d3, enc)
    items += _vsal_macs("vsal1", stages[3], enc)
    items += _vsal_macs("vsal2", stages[4], enc)
    items.append(MacItem("fusion", stages[4],
                         stages[4] * 2 * enc.d_model * enc.d_model))
    if cfg.task == "object":
        d = enc.d_model
        items.append(MacItem("head.fc1", 1, 2 * d * 512))
        items.append(MacItem("head.fc2", 1, 512 * 256))
        items.append(MacItem("head.fc3", 1, 256 * cfg.classes))
    else:
        k = cfg.s2tm.segments
        per_segment = sum(i.macs for i in items)
        items = [MacItem(f"encoder (x{k} segments)", k, per_segment * k)]
        s = cfg.s2tm
        d = enc.d_model
        items.append(MacItem("s2tm.mapping", k, k * 2 * d * s.token_dim))
        if s.temporal_model == "self-attention":
            length = k + 1
            inner = s.heads * s.head_dim
            items.append(MacItem("s2tm.qkv", length, 3 * length * s.token_dim * inner))
            items.append(MacItem("s2tm.scores", length, length * length * inner))
            items.append(MacItem("s2tm.values", length, length * length * inner))
            items.append(MacItem("s2tm.proj", length, length * inner * s.token_dim))
            items.append(MacItem("s2tm.ffn", length,
                                 2 * length * s.token_dim * s.ffn_dim))
        elif s.temporal_model == "recurrent":
            items.append(MacItem("s2tm.gru", k, k * 6 * s.token_dim * s.token_dim))
        items.append(MacItem("head", 1, s.token_dim * cfg.classes))
    return sum(i.macs for i in items), items


# -- checkpoints ------------------------------------------------------------


def save_model(path, model: Module, cfg: RunConfig, extra: dict | None = None):
    from .config import config_to_text
    from .nn.serialize import save_checkpoint
    save_checkpoint(path, model, config_to_text(cfg, extra))


def load_model(path, dtype=np.float32):
    from .config import parse_checkpoint_text
    from .nn.serialize import load_checkpoint, restore_model
    tensors, text = load_checkpoint(path)
    cfg, extra = parse_checkpoint_text(text)
    model = build_model(cfg, dtype=dtype)
    restore_model(model, tensors)
    return model, cfg, extra
