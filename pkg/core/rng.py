"""rng.py — Counter-based random streams keyed by particle label.

Every random draw in a realization comes from a Philox stream whose 128-bit
key is a hash of (seed, Ulam–Harris label, context). Nothing depends on the
order in which particles or replicas are visited, so a run is reproducible
byte-for-byte regardless of worker count.

Contexts in use:
  CTX_PARTICLE — lifetime, motion and offspring draws of one particle
  CTX_SPINE    — single-particle / two-spine Monte Carlo batches
  CTX_G        — one-unit branching runs inside the G operator (folded in by derive_seed)
"""
from __future__ import annotations

import hashlib
import struct
from typing import Sequence

import numpy as np

RandomStream = np.random.Generator
ParticleId = tuple[int, ...]

ROOT: ParticleId = ()

CTX_PARTICLE = 0
CTX_SPINE    = 1
CTX_G        = 2

_MASK64 = (1 << 64) - 1


def child_id(parent: ParticleId, index: int) -> ParticleId:
    """Ulam–Harris label of the ``index``-th child (0-based) of ``parent``."""
    return parent + (index,)


def _key(seed: int, label: Sequence[int], context: int) -> int:
    h = hashlib.blake2b(digest_size=16, person=b"branch-lln-rng")
    h.update(struct.pack("<QqI", seed & _MASK64, context, len(label)))
    if label:
        h.update(struct.pack(f"<{len(label)}I", *label))
    return int.from_bytes(h.digest(), "little")


def stream_for(seed: int, label: Sequence[int] = ROOT, context: int = CTX_PARTICLE) -> RandomStream:
    """Deterministic stream for (seed, label, context); distinct keys give independent streams."""
    return np.random.Generator(np.random.Philox(key=_key(seed, tuple(label), context)))


def replica_seed(seed: int, replica: int) -> int:
    """64-bit seed of replica ``replica``, mixed so neighbouring indices decorrelate."""
    h = hashlib.blake2b(digest_size=8, person=b"branch-lln-rep")
    h.update(struct.pack("<QQ", seed & _MASK64, replica & _MASK64))
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, *parts: int) -> int:
    """Fold integer parts into a seed, e.g. derive_seed(seed, CTX_G, sweep, point)."""
    for part in parts:
        seed = replica_seed(seed, part)
    return seed
