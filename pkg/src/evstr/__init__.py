"""Event-camera voxel-set attention networks.

Pipeline: synthesize or parse event streams, voxelize them into fixed-size
voxel sets, encode with neighbor-embedding and self-attention layers, and
classify (single set) or recognize motion patterns (segment sequence).
"""

from . import events, voxel, mnel, vsal, model, config, nn

__all__ = ["events", "voxel", "mnel", "vsal", "model", "config", "nn"]
__version__ = "0.1.0"
