"""Text-encoder backends and their registry.

A backend turns text into a summary vector plus per-token vectors of a
fixed width. Real pretrained language models are referenced by id only;
the deterministic toy encoder ships so every pipeline stage is testable
without pretrained weights. Custom backends can be registered under new
ids; ``resolve_backend`` also accepts ``name:arg`` forms whose suffix is
passed to the factory (e.g. ``toy-deterministic:7`` for a different
embedding seed).
"""
from __future__ import annotations

import numpy as np

from .errors import BackendFailure
from .tokenizer import tokenize
from .util import new_rng, stable_hash


class EncoderBackend:
    """Interface: deterministic text → (summary, token matrix) of width d."""

    name: str
    width: int
    max_length: int

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)[: self.max_length]

    def token_vector(self, token: str) -> np.ndarray:
        raise NotImplementedError

    def encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Summary vector and (n, width) per-token matrix."""
        tokens = self.tokenize(text)
        if not tokens:
            return np.zeros(self.width), np.zeros((0, self.width))
        matrix = np.stack([self.token_vector(t) for t in tokens])
        return matrix.mean(axis=0), matrix


class ToyDeterministicEncoder(EncoderBackend):
    """Hashes each token to a fixed seeded Gaussian vector; the sequence
    summary is the mean of the token vectors.

    The registry id encodes the configuration: ``toy-deterministic``
    is width 24 / seed 0, ``toy-deterministic:<width>[:<seed>]``
    anything else.
    """

    def __init__(self, width: int = 24, seed: int = 0, max_length: int = 256):
        if width == 24 and seed == 0:
            self.name = "toy-deterministic"
        else:
            self.name = f"toy-deterministic:{width}:{seed}"
        self.width = width
        self.max_length = max_length
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = new_rng(stable_hash("toy-token", self.seed, self.width, token))
            vec = rng.normal(0.0, 1.0, self.width)
            self._cache[token] = vec
        return vec


def _unavailable(plm_id: str):
    def factory(arg=None):
        raise BackendFailure(
            f"backend {plm_id!r} needs pretrained weights that are not "
            f"bundled; register an implementation for this id")
    return factory


def _toy_factory(arg=None):
    if not arg:
        return ToyDeterministicEncoder()
    parts = arg.split(":")
    width = int(parts[0])
    seed = int(parts[1]) if len(parts) > 1 else 0
    return ToyDeterministicEncoder(width=width, seed=seed)


_REGISTRY = {
    "toy-deterministic": _toy_factory,
    "bert-base-uncased": _unavailable("bert-base-uncased"),
    "roberta-base": _unavailable("roberta-base"),
    "mentalbert": _unavailable("mentalbert"),
    "clinicalbert": _unavailable("clinicalbert"),
}


def register_backend(name: str, factory) -> None:
    _REGISTRY[name] = factory


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def resolve_backend(name: str) -> EncoderBackend:
    if name in _REGISTRY:
        return _REGISTRY[name]()
    if ":" in name:
        base, arg = name.split(":", 1)
        if base in _REGISTRY:
            return _REGISTRY[base](arg)
    raise BackendFailure(f"unknown encoder backend {name!r}; "
                         f"known: {available_backends()}")
