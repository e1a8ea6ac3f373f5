"""Event voxel sets: temporal normalization, grid binning, patch integration.

A stream is normalized so its time axis spans [0, time_scale], cut into a 3D
grid of (voxel_w x voxel_h x voxel_t) cells, and each non-empty cell becomes
one voxel: an integer grid coordinate plus a 2D patch accumulating
polarity * normalized-timestamp per local pixel. The densest cells are kept
(event count as the motion proxy) and the set is padded by re-sampling when
fewer than the target count exist, so downstream layers always see a fixed
number of rows.

Voxel-set dump format (little-endian): magic ``EVX1``, u32 voxel count,
u32 patch length, then per voxel 3 x f32 grid coordinates, f32 patch values,
u32 event count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .events import EventStream

EVX_MAGIC = b"EVX1"


class VoxelError(ValueError):
    pass


class DegenerateDurationError(VoxelError):
    pass


@dataclass(frozen=True)
class VoxelGridConfig:
    voxel_h: int          # cell height in pixels
    voxel_w: int          # cell width in pixels
    voxel_t: float        # cell extent on the normalized time axis
    time_scale: float     # total normalized duration (compensation coefficient)
    n_voxels: int         # rows in the final voxel set

    def validate(self, width: int, height: int):
        if min(self.voxel_h, self.voxel_w, self.n_voxels) < 1 or self.voxel_t <= 0:
            raise VoxelError("voxel dimensions and target count must be positive")
        if self.time_scale <= 0:
            raise VoxelError("time_scale must be positive")
        if width % self.voxel_w or height % self.voxel_h:
            raise VoxelError(
                f"sensor {width}x{height} not divisible by voxel "
                f"{self.voxel_w}x{self.voxel_h}")
        n_tbins = self.time_scale / self.voxel_t
        if abs(n_tbins - round(n_tbins)) > 1e-9:
            raise VoxelError("voxel_t must divide time_scale")

    @property
    def n_time_bins(self) -> int:
        return int(round(self.time_scale / self.voxel_t))

    @property
    def patch_len(self) -> int:
        return self.voxel_h * self.voxel_w


@dataclass
class NormalizedEvents:
    """Stream after temporal normalization; timestamps are float64."""
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int


@dataclass
class RawVoxel:
    coord: tuple[int, int, int]   # (x_cell, y_cell, t_cell)
    x: np.ndarray                 # internal events, stream order
    y: np.ndarray
    t: np.ndarray                 # normalized timestamps
    p: np.ndarray

    @property
    def count(self) -> int:
        return self.x.size


@dataclass
class VoxelSet:
    coords: np.ndarray    # (n, 3) float32 grid coordinates
    patches: np.ndarray   # (n, voxel_h * voxel_w) float32, row-major
    counts: np.ndarray    # (n,) int64 event counts

    def __len__(self) -> int:
        return self.coords.shape[0]


def normalize_time(stream: EventStream, time_scale: float) -> NormalizedEvents:
    """Map timestamps affinely onto [0, time_scale]."""
    if len(stream) == 0:
        raise VoxelError("cannot normalize an empty stream")
    t0, t1 = float(stream.t[0]), float(stream.t[-1])
    if t1 == t0:
        raise DegenerateDurationError("stream duration is zero")
    t = time_scale * (stream.t.astype(np.float64) - t0) / (t1 - t0)
    return NormalizedEvents(stream.x.copy(), stream.y.copy(), t,
                            stream.p.copy(), stream.width, stream.height)


def build_voxel_grid(ev: NormalizedEvents, cfg: VoxelGridConfig) -> list[RawVoxel]:
    """Bin events into grid cells; only non-empty cells are materialized."""
    cfg.validate(ev.width, ev.height)
    cx = ev.x // cfg.voxel_w
    cy = ev.y // cfg.voxel_h
    ct = np.minimum((ev.t / cfg.voxel_t).astype(np.int64), cfg.n_time_bins - 1)
    keys = np.stack([cx, cy, ct], axis=1)
    # group by cell, keeping stream order inside each group
    order = np.lexsort((np.arange(len(cx)), ct, cy, cx))
    sk = keys[order]
    boundaries = np.nonzero(np.any(np.diff(sk, axis=0) != 0, axis=1))[0] + 1
    groups = np.split(order, boundaries)
    voxels = []
    for g in groups:
        g = np.sort(g)  # stream order within the voxel
        coord = (int(cx[g[0]]), int(cy[g[0]]), int(ct[g[0]]))
        voxels.append(RawVoxel(coord, ev.x[g], ev.y[g], ev.t[g], ev.p[g]))
    return voxels


def integrate_patch(voxel: RawVoxel, cfg: VoxelGridConfig) -> np.ndarray:
    """Accumulate polarity * normalized timestamp per local pixel (float32).

    Local coordinates are the event position modulo the cell size; events are
    summed in stream order, which pins the floating-point result exactly.
    """
    if voxel.count == 0:
        raise VoxelError("cannot integrate an empty voxel")
    patch = np.zeros((cfg.voxel_h, cfg.voxel_w), dtype=np.float32)
    lx = (voxel.x % cfg.voxel_w).astype(np.int64)
    ly = (voxel.y % cfg.voxel_h).astype(np.int64)
    vals = (voxel.p * voxel.t).astype(np.float32)
    np.add.at(patch, (ly, lx), vals)
    return patch


def select_voxels(raw: list[RawVoxel], cfg: VoxelGridConfig, seed: int) -> VoxelSet:
    """Keep the n_voxels densest cells; pad by re-sampling when short.

    Ordering: descending event count, ties by ascending grid coordinate.
    Padding rows are uniform draws (with replacement) over the kept voxels,
    so the output is always exactly n_voxels rows.
    """
    if not raw:
        raise VoxelError("no voxels to select from")
    order = sorted(range(len(raw)),
                   key=lambda i: (-raw[i].count, raw[i].coord))
    kept = order[:cfg.n_voxels]
    if len(kept) < cfg.n_voxels:
        rng = np.random.default_rng(seed)
        extra = rng.integers(0, len(kept), size=cfg.n_voxels - len(kept))
        kept = kept + [kept[i] for i in extra]
    coords = np.array([raw[i].coord for i in kept], dtype=np.float32)
    patches = np.stack([integrate_patch(raw[i], cfg).reshape(-1) for i in kept])
    counts = np.array([raw[i].count for i in kept], dtype=np.int64)
    return VoxelSet(coords, patches, counts)


def voxelize(stream: EventStream, cfg: VoxelGridConfig, seed: int) -> VoxelSet:
    """Full pipeline: normalize, bin, integrate, select."""
    ev = normalize_time(stream, cfg.time_scale)
    return select_voxels(build_voxel_grid(ev, cfg), cfg, seed)


def downsample_indices(n: int, rate: float, seed: int) -> np.ndarray:
    """Uniform subset of floor(rate * n) indices, re-sorted ascending.

    Sorting keeps relative row order, so rate=1 is exactly the identity.
    """
    m = int(np.floor(rate * n))
    if m < 1:
        raise VoxelError(f"downsample rate {rate} leaves no rows of {n}")
    if m == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def random_downsample(coords: np.ndarray, features: np.ndarray, rate: float,
                      seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-paired uniform downsampling of a (coords, features) pair."""
    idx = downsample_indices(coords.shape[0], rate, seed)
    return coords[idx], features[idx]


# -- voxel-set dump ---------------------------------------------------------


def write_voxel_set(vs: VoxelSet) -> bytes:
    n, plen = vs.patches.shape
    out = [EVX_MAGIC, struct.pack("<II", n, plen)]
    for i in range(n):
        out.append(vs.coords[i].astype("<f4").tobytes())
        out.append(vs.patches[i].astype("<f4").tobytes())
        out.append(struct.pack("<I", int(vs.counts[i])))
    return b"".join(out)


def read_voxel_set(data: bytes) -> VoxelSet:
    if data[:4] != EVX_MAGIC:
        raise VoxelError("bad voxel-set magic")
    n, plen = struct.unpack_from("<II", data, 4)
    stride = 4 * (3 + plen) + 4
    body = data[12:]
    if len(body) != n * stride:
        raise VoxelError("truncated voxel-set payload")
    coords = np.empty((n, 3), dtype=np.float32)
    patches = np.empty((n, plen), dtype=np.float32)
    counts = np.empty(n, dtype=np.int64)
    for i in range(n):
        off = i * stride
        coords[i] = np.frombuffer(body, "<f4", count=3, offset=off)
        patches[i] = np.frombuffer(body, "<f4", count=plen, offset=off + 12)
        (counts[i],) = struct.unpack_from("<I", body, off + 12 + 4 * plen)
    return VoxelSet(coords, patches, counts)
