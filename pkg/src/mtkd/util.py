"""Seeding, stable hashing, and small shared helpers.

All randomness in the package flows through ``numpy.random.Generator``
instances created here. Seeds for sub-stages are derived by hashing a
root seed together with string labels, so every stage is reproducible in
isolation and insensitive to the order other stages run in.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(*parts) -> int:
    """64-bit hash of the given parts, stable across processes.

    Python's builtin ``hash`` is salted per process; this one is not.
    """
    h = hashlib.sha256()
    for part in parts:
        data = part if isinstance(part, bytes) else str(part).encode("utf-8")
        h.update(data)
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") & _MASK64


def derive_seed(root_seed: int, *labels) -> int:
    """Child seed for a named sub-stage of a seeded computation."""
    return stable_hash(root_seed, *labels)


def new_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def format_mmss(seconds: float) -> str:
    """Duration as mm:ss.mmm, the format used in the audio reports."""
    minutes = int(seconds // 60)
    rest = seconds - 60 * minutes
    return f"{minutes:02d}:{rest:06.3f}"
