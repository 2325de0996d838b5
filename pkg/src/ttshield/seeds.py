"""Deterministic seed fan-out.

Every stochastic job in the toolkit derives its seed from a single master seed
plus a path of string/int tags, so reruns are bit-for-bit reproducible and
independent jobs can be scheduled in any order.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["child_seed", "child_rng"]

_MASK = (1 << 63) - 1


def child_seed(master: int, *tags) -> int:
    """Derive a 63-bit seed from ``master`` and a tag path, stable across runs."""
    key = "/".join([str(int(master))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK


def child_rng(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(child_seed(master, *tags))
