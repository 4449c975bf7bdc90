"""Deterministic seed derivation.

Every source of randomness in a run is fed from one master seed through
named sub-streams, so individual stages can be re-run in isolation and
still reproduce the full pipeline bit for bit.
"""
from __future__ import annotations

import zlib

import numpy as np


def child_seed(master: int, *names) -> int:
    """Derive a stable 32-bit seed for the sub-stream identified by `names`.

    The name parts are joined and hashed with crc32, which is stable across
    platforms and Python versions (unlike builtin hash()).
    """
    key = ".".join(str(part) for part in names)
    tag = zlib.crc32(key.encode("utf-8"))
    seq = np.random.SeedSequence([int(master) & 0xFFFFFFFF, tag])
    return int(seq.generate_state(1, np.uint32)[0])


def child_rng(master: int, *names) -> np.random.Generator:
    return np.random.default_rng(child_seed(master, *names))
