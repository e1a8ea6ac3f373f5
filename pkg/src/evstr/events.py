"""Event streams: parsing, writing, segmentation, and threshold-model synthesis.

An event records a per-pixel log-brightness change: column x, row y, timestamp
t in integer microseconds, polarity +1/-1. Streams keep events in columnar
numpy arrays, time-sorted, together with the sensor geometry.

File formats
  csv  one record per line ``x,y,t,p`` (decimal integers, p in {1,-1});
       an optional leading header line ``# x,y,t,p`` is skipped on parse.
  bin  magic ``EVS1``, u16 width, u16 height, u32 count (little-endian),
       then per event u16 x, u16 y, u64 t, i8 p.

Dataset manifests are text files with one ``<path> <label-id>`` line per
sample; paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

BIN_MAGIC = b"EVS1"
_BIN_EVENT = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])


class EventError(ValueError):
    """Base class for event stream failures."""


class EventParseError(EventError):
    pass


class EmptyStreamError(EventError):
    pass


class DegenerateSegmentError(EventError):
    pass


class EmptySynthesisError(EventError):
    pass


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


class EventStream:
    """Time-sorted collection of events plus sensor geometry.

    Immutable after construction; the constructor sorts by timestamp
    (stable, so equal-t records keep their input order) and validates
    bounds and polarities.
    """

    def __init__(self, x, y, t, p, width: int, height: int,
                 label: Optional[int] = None):
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        if not (x.shape == y.shape == t.shape == p.shape):
            raise EventError("event field arrays must share one length")
        if x.size:
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise EventError(
                    f"event coordinates outside {width}x{height} sensor")
            if not np.all(np.abs(p) == 1):
                raise EventError("polarity must be +1 or -1")
            if t.min() < 0:
                raise EventError("timestamps must be non-negative")
            order = np.argsort(t, kind="stable")
            x, y, t, p = x[order], y[order], t[order], p[order]
        self.x, self.y, self.t, self.p = x, y, t, p
        self.width = int(width)
        self.height = int(height)
        self.label = label

    def __len__(self) -> int:
        return self.x.size

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    @property
    def duration(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.t[-1] - self.t[0])

    def with_label(self, label: int) -> "EventStream":
        return EventStream(self.x, self.y, self.t, self.p, self.width,
                           self.height, label)


# -- parsing / writing --------------------------------------------------


def parse_events(data: bytes, fmt: str, width: Optional[int] = None,
                 height: Optional[int] = None) -> EventStream:
    """Decode a byte payload into a sorted stream.

    csv payloads need the sensor geometry from the caller; bin payloads
    carry it in the header.
    """
    if fmt == "csv":
        if width is None or height is None:
            raise ValueError("csv parsing requires explicit width/height")
        return _parse_csv(data, width, height)
    if fmt == "bin":
        return _parse_bin(data)
    raise ValueError(f"unknown event format {fmt!r}")


def _parse_csv(data: bytes, width: int, height: int) -> EventStream:
    text = data.decode("utf-8", errors="strict")
    xs, ys, ts, ps = [], [], [], []
    seen_any = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        seen_any = True
        parts = line.split(",")
        if len(parts) != 4:
            raise EventParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            x, y, t, p = (int(v) for v in parts)
        except ValueError as exc:
            raise EventParseError(f"line {lineno}: {exc}") from None
        if p not in (1, -1):
            raise EventParseError(f"line {lineno}: polarity must be 1 or -1, got {p}")
        if not (0 <= x < width and 0 <= y < height):
            raise EventParseError(
                f"line {lineno}: event ({x},{y}) outside {width}x{height} sensor")
        if t < 0:
            raise EventParseError(f"line {lineno}: negative timestamp {t}")
        xs.append(x); ys.append(y); ts.append(t); ps.append(p)
    if not seen_any or not xs:
        raise EmptyStreamError("csv payload contains no events")
    return EventStream(xs, ys, ts, ps, width, height)


def _parse_bin(data: bytes) -> EventStream:
    if len(data) < 12 or data[:4] != BIN_MAGIC:
        raise EventParseError("bad or truncated bin header")
    width, height = struct.unpack_from("<HH", data, 4)
    (count,) = struct.unpack_from("<I", data, 8)
    if count == 0:
        raise EmptyStreamError("bin payload contains no events")
    body = data[12:]
    need = count * _BIN_EVENT.itemsize
    if len(body) != need:
        raise EventParseError(
            f"bin payload length {len(body)} does not match count {count}")
    rec = np.frombuffer(body, dtype=_BIN_EVENT, count=count)
    try:
        return EventStream(rec["x"], rec["y"], rec["t"], rec["p"], width, height)
    except EventError as exc:
        raise EventParseError(str(exc)) from None


def write_events(stream: EventStream, fmt: str) -> bytes:
    if len(stream) == 0:
        raise EmptyStreamError("refusing to write an empty stream")
    if fmt == "csv":
        lines = [f"{x},{y},{t},{p}"
                 for x, y, t, p in zip(stream.x, stream.y, stream.t, stream.p)]
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "bin":
        rec = np.empty(len(stream), dtype=_BIN_EVENT)
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["t"] = stream.t
        rec["p"] = stream.p
        head = BIN_MAGIC + struct.pack("<HHI", stream.width, stream.height, len(stream))
        return head + rec.tobytes()
    raise ValueError(f"unknown event format {fmt!r}")


# -- segmentation --------------------------------------------------------


def split_segments(stream: EventStream, k: int) -> list[EventStream]:
    """Cut a stream into k half-open windows of equal duration.

    Window width is (t_last - t_first + 1) / k so the final event falls
    inside the last segment. Any empty segment raises; callers that see the
    error should reduce k.
    """
    if k < 1:
        raise ValueError(f"segment count must be >= 1, got {k}")
    if len(stream) == 0:
        raise EmptyStreamError("cannot segment an empty stream")
    if k == 1:
        return [stream]
    if stream.duration == 0:
        raise DegenerateSegmentError("stream duration is zero, cannot segment")
    t0 = stream.t[0]
    delta = (stream.t[-1] - t0 + 1) / k
    idx = np.minimum(((stream.t - t0) / delta).astype(np.int64), k - 1)
    segments = []
    for s in range(k):
        mask = idx == s
        if not mask.any():
            raise DegenerateSegmentError(
                f"segment {s + 1} of {k} contains no events")
        segments.append(EventStream(stream.x[mask], stream.y[mask],
                                    stream.t[mask], stream.p[mask],
                                    stream.width, stream.height, stream.label))
    return segments


# -- synthesis ------------------------------------------------------------


@dataclass
class SceneConfig:
    """One synthetic recording: an analytic shape under a motion law.

    ``contrast`` is the log-intensity threshold each emitted event
    represents; ``speed_scale`` scales the motion amplitude (0 freezes the
    scene, which produces no events and therefore an error).
    """
    shape: str                # disk | bar | square
    motion: str               # translate | rotate | expand
    contrast: float
    duration_us: int
    timestep_us: int
    width: int
    height: int
    seed: int
    speed_scale: float = 1.0

    def validate(self):
        if self.shape not in ("disk", "bar", "square"):
            raise ValueError(f"unknown shape kind {self.shape!r}")
        if self.motion not in ("translate", "rotate", "expand"):
            raise ValueError(f"unknown motion kind {self.motion!r}")
        if self.contrast <= 0:
            raise ValueError("contrast threshold must be positive")
        if self.timestep_us <= 0 or self.duration_us <= 0:
            raise ValueError("duration and timestep must be positive")
        if self.duration_us % self.timestep_us != 0:
            raise ValueError("timestep must divide duration")


def events_from_intensity(frames: np.ndarray, timestep_us: int,
                          contrast: float) -> tuple[np.ndarray, ...]:
    """Threshold-crossing event generation from sampled log intensity.

    ``frames`` has shape (steps+1, H, W). Per pixel, an event of polarity p
    fires every time log intensity moves p*contrast away from the level at
    that pixel's previous event; timestamps interpolate linearly inside the
    step. Returns columnar (x, y, t, p) arrays in emission order.
    """
    steps = frames.shape[0] - 1
    ref = frames[0].astype(np.float64).copy()
    xs, ys, ts, ps = [], [], [], []
    c = float(contrast)
    for s in range(steps):
        prev = frames[s].astype(np.float64)
        cur = frames[s + 1].astype(np.float64)
        diff = cur - ref
        # 1e-9 slack so an exact k*C ramp yields exactly k events
        n_cross = np.floor(np.abs(diff) / c + 1e-9).astype(np.int64)
        kmax = int(n_cross.max()) if n_cross.size else 0
        if kmax == 0:
            continue
        sign = np.where(diff > 0, 1, -1).astype(np.int64)
        slope = cur - prev
        t0 = s * timestep_us
        for j in range(1, kmax + 1):
            mask = n_cross >= j
            py, px = np.nonzero(mask)
            level = ref[mask] + sign[mask] * j * c
            sl = slope[mask]
            safe = np.where(np.abs(sl) > 1e-12, sl, 1.0)
            frac = np.where(np.abs(sl) > 1e-12, (level - prev[mask]) / safe, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            xs.append(px)
            ys.append(py)
            ts.append(np.rint(t0 + frac * timestep_us).astype(np.int64))
            ps.append(sign[mask])
        ref += sign * n_cross * c
    if not xs:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy(), empty.copy()
    return (np.concatenate(xs), np.concatenate(ys),
            np.concatenate(ts), np.concatenate(ps))


def _render_scene(cfg: SceneConfig) -> np.ndarray:
    """Sample the scene's per-pixel log intensity at every sim step."""
    rng = np.random.default_rng(cfg.seed)
    steps = cfg.duration_us // cfg.timestep_us
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    amp = 1.0  # log-intensity amplitude of the shape over background

    # per-sample jitter: geometry and motion phase drawn once from the seed
    base = min(h, w)
    size = rng.uniform(0.14, 0.22) * base
    cx0 = rng.uniform(0.35, 0.65) * w
    cy0 = rng.uniform(0.35, 0.65) * h
    phase = rng.uniform(0.0, 2.0 * np.pi)
    direction = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(0.8, 1.2) * cfg.speed_scale

    frames = np.empty((steps + 1, h, w), dtype=np.float64)
    for s in range(steps + 1):
        u = s / steps  # normalized time in [0, 1]
        cx, cy, scale, angle = cx0, cy0, size, phase
        if cfg.motion == "translate":
            # bounce along a fixed direction so the shape stays in frame
            travel = speed * 0.6 * base * u
            tri = abs((travel / (0.3 * base) + 1) % 2 - 1)  # triangle wave
            cx = cx0 + np.cos(direction) * (tri - 0.5) * 0.6 * base
            cy = cy0 + np.sin(direction) * (tri - 0.5) * 0.6 * base
        elif cfg.motion == "rotate":
            # orbit around the image center
            ang = phase + speed * 2.0 * np.pi * u
            orbit = 0.22 * base
            cx = w / 2 + orbit * np.cos(ang)
            cy = h / 2 + orbit * np.sin(ang)
            angle = phase + speed * 4.0 * np.pi * u
        elif cfg.motion == "expand":
            # breathe between 60% and 160% of the base size
            tri = abs(((speed * 2.0 * u) + 1) % 2 - 1)
            scale = size * (0.6 + 1.0 * tri)
        frames[s] = amp * _shape_mask(cfg.shape, xx, yy, cx, cy, scale, angle)
    return frames


def _shape_mask(kind: str, xx, yy, cx, cy, size, angle) -> np.ndarray:
    """Soft-edged coverage in [0, 1]; one-pixel edge keeps gradients finite."""
    if kind == "disk":
        d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2) - size
    elif kind == "square":
        d = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) - size
    elif kind == "bar":
        ca, sa = np.cos(angle), np.sin(angle)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        d = np.maximum(np.abs(u) - size, np.abs(v) - size * 0.28)
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return np.clip(0.5 - d, 0.0, 1.0)


def synthesize_stream(cfg: SceneConfig) -> EventStream:
    """Run the brightness-threshold camera model over a rendered scene."""
    cfg.validate()
    frames = _render_scene(cfg)
    x, y, t, p = events_from_intensity(frames, cfg.timestep_us, cfg.contrast)
    if x.size == 0:
        raise EmptySynthesisError(
            "scene produced no events (static or below contrast threshold)")
    return EventStream(x, y, t, p, cfg.width, cfg.height)


# -- dataset manifests ----------------------------------------------------


def write_manifest(path, entries: list[tuple[str, int]]):
    with open(path, "w", encoding="utf-8") as fh:
        for rel, label in entries:
            fh.write(f"{rel} {label}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.rsplit(" ", 1)
            if len(parts) != 2:
                raise EventParseError(f"{path}:{lineno}: expected '<path> <label>'")
            entries.append((parts[0], int(parts[1])))
    return entries
