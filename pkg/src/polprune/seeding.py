"""Seed derivation shared by every stochastic component.

Child seeds are a hash of their parts, so any (world, episode, ...) job can be
run in any order or process and still see the same random stream.
"""
from __future__ import annotations

import hashlib
import random


def derive_seed(*parts: object) -> int:
    """Return a 63-bit seed that depends only on ``parts``.

    Parts are joined by their ``repr``; floats therefore hash by their exact
    shortest round-trip representation.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def stream(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))
