"""Run configuration: dataclasses plus the textual key=value format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Keys mirror the dataclass fields below; unknown keys are an error so typos
fail fast. The same serialization is embedded into checkpoints so a saved
model can be rebuilt without the original file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .voxel import VoxelGridConfig


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    d_f: int = 32
    mnel_dims: tuple[int, int, int] = (64, 64, 128)
    n_neighbors: int = 24
    subspaces: int = 3
    sample_rate: float = 0.75
    d_model: int = 128
    # ablation switches
    multi_scale: bool = True
    attentive: bool = True
    ape: bool = True
    rpb: bool = True
    scale_quarter: bool = False
    # literal-reading switches: ReLU on MLPs that feed signed quantities
    fusion_relu: bool = False
    shortcut_relu: bool = False
    vsal_out_relu: bool = False

    def stage_sizes(self, n_voxels: int) -> list[int]:
        """Input row counts of the five encoder layers (3 local + 2 global)."""
        sizes = [n_voxels]
        for _ in range(3):
            sizes.append(int(sizes[-1] * self.sample_rate))
        return [sizes[0], sizes[1], sizes[2], sizes[3], sizes[3]]


@dataclass
class S2tmConfig:
    segments: int = 4
    token_dim: int = 512
    heads: int = 8
    head_dim: int = 64
    ffn_dim: int = 1024
    temporal_model: str = "self-attention"  # self-attention | avgpool | recurrent


@dataclass
class RunConfig:
    task: str = "object"                  # object | action
    train_manifest: str = ""
    test_manifest: str = ""
    width: int = 64
    height: int = 64
    classes: int = 3
    # representation
    voxel_h: int = 4
    voxel_w: int = 4
    voxel_t: float = 1.0
    time_scale: float = 4.0
    n_voxels: int = 256
    # encoder
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    # temporal modeling (action task)
    s2tm: S2tmConfig = field(default_factory=S2tmConfig)
    # training
    epochs: int = 250
    batch_size: int = 32
    lr_max: float = 3e-2
    lr_min: float = 1e-6
    momentum: float = 0.9
    dropout: float = 0.5
    seed: int = 0

    def grid(self) -> VoxelGridConfig:
        return VoxelGridConfig(self.voxel_h, self.voxel_w, self.voxel_t,
                               self.time_scale, self.n_voxels)

    def validate(self):
        if self.task not in ("object", "action"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.encoder.d_model % 4:
            raise ConfigError("d_model must be divisible by 4")
        if self.encoder.n_neighbors % self.encoder.subspaces:
            raise ConfigError("subspaces must divide n_neighbors")
        if self.s2tm.temporal_model not in ("self-attention", "avgpool", "recurrent"):
            raise ConfigError(
                f"unknown temporal model {self.s2tm.temporal_model!r}")


def action_defaults() -> RunConfig:
    """Training defaults for the long-stream task."""
    cfg = RunConfig(task="action")
    cfg.time_scale = 8.0
    cfg.epochs = 300
    cfg.batch_size = 16
    cfg.lr_max = 1e-2
    cfg.lr_min = 1e-7
    return cfg


_ENCODER_KEYS = {f.name for f in fields(EncoderConfig)}
_S2TM_KEYS = {f.name for f in fields(S2tmConfig)}
_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"encoder", "s2tm"}


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [int(v) for v in raw.split(",")]
        if len(parts) != len(current):
            raise ConfigError(f"expected {len(current)} values, got {raw!r}")
        return tuple(parts)
    return raw


def parse_config_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        pairs[key.strip()] = raw.strip()
    if base is None:
        base = action_defaults() if pairs.get("task") == "action" else RunConfig()
    cfg = replace(base, encoder=replace(base.encoder), s2tm=replace(base.s2tm))
    for key, raw in pairs.items():
        if key in _TOP_KEYS:
            setattr(cfg, key, _parse_value(raw, getattr(cfg, key)))
        elif key in _ENCODER_KEYS:
            setattr(cfg.encoder, key, _parse_value(raw, getattr(cfg.encoder, key)))
        elif key in _S2TM_KEYS:
            setattr(cfg.s2tm, key, _parse_value(raw, getattr(cfg.s2tm, key)))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: RunConfig, extra: Optional[dict] = None) -> str:
    lines = []
    for f in fields(RunConfig):
        if f.name in ("encoder", "s2tm"):
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for f in fields(EncoderConfig):
        lines.append(f"{f.name} = {_format_value(getattr(cfg.encoder, f.name))}")
    for f in fields(S2tmConfig):
        lines.append(f"{f.name} = {_format_value(getattr(cfg.s2tm, f.name))}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_checkpoint_text(text: str) -> tuple[RunConfig, dict]:
    """Split a checkpoint blob into the run config and extra state keys."""
    known = _TOP_KEYS | _ENCODER_KEYS | _S2TM_KEYS
    cfg_lines, extra = [], {}
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key = stripped.partition("=")[0].strip()
        if key in known:
            cfg_lines.append(line)
        else:
            extra[key] = stripped.partition("=")[2].strip()
    return parse_config_text("\n".join(cfg_lines)), extra
