"""Deterministic seed derivation.

All run randomness flows from one master seed; every consumer derives its
own stream from a labelled path so runs reproduce exactly regardless of
execution order.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    text = "/".join(str(p) for p in parts)
    digest = hashlib.blake2s(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
