"""Hyperparameter search spaces and range validation.

One discrete space per model family; training configs validate their
fields against these unless explicitly overridden.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError


@dataclass(frozen=True)
class Choice:
    values: tuple

    def contains(self, v) -> bool:
        return any(v == c for c in self.values)

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int  # inclusive

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and self.lo <= v <= self.hi

    def sample(self, rng: np.random.Generator):
        return int(rng.integers(self.lo, self.hi + 1))


@dataclass(frozen=True)
class SearchSpace:
    name: str
    params: dict[str, Choice | IntRange]

    def contains(self, assignment: dict) -> bool:
        return all(key in self.params and self.params[key].contains(val)
                   for key, val in assignment.items())

    def sample(self, rng: np.random.Generator) -> dict:
        return {key: spec.sample(rng) for key, spec in self.params.items()}

    def validate(self, values: dict, allow_out_of_range: bool = False) -> None:
        """Raise RangeError for any field outside the space."""
        if allow_out_of_range:
            return
        for key, val in values.items():
            spec = self.params.get(key)
            if spec is not None and not spec.contains(val):
                raise RangeError(
                    f"{self.name}: {key}={val!r} outside the search space "
                    f"{spec}; pass allow_out_of_range to override")


_DROPOUT = Choice((0.01, 0.05, 0.1, 0.5))
_WEIGHT_DECAY = Choice((0.0, 0.01, 0.1))

TEXT_TEACHER_SPACE = SearchSpace("text-teacher", {
    "dropout": _DROPOUT,
    "hidden_layers": Choice((2, 4, 6, 8, 10, 12)),
    "attention_heads": Choice((2, 4, 6, 8, 12)),
    "learning_rate": Choice((1e-4, 1e-5, 2e-5, 3e-5, 4e-5, 5e-5)),
    "weight_decay": _WEIGHT_DECAY,
    "epochs": IntRange(2, 5),
})

EMOTION_TEACHER_SPACE = SearchSpace("emotion-teacher", {
    "dropout": _DROPOUT,
    "hidden_layers": IntRange(2, 5),
    "hidden_dim": Choice((100, 200, 300, 400, 500)),
    "learning_rate": Choice((1e-3, 1e-4, 1e-5)),
    "weight_decay": _WEIGHT_DECAY,
})

AUDIO_TEACHER_SPACE = SearchSpace("audio-teacher", {
    "dropout": _DROPOUT,
    "hidden_layers": Choice((2, 4, 6, 8, 10, 12)),
    "attention_heads": Choice((2, 4, 6, 8, 12)),
    "learning_rate": Choice((1e-3, 1e-4, 1e-5, 5e-5)),
    "scheduler_patience": IntRange(2, 5),
    "scheduler_factor": Choice((0.1, 0.5)),
})

STUDENT_SPACE = SearchSpace("student", {
    "dropout": _DROPOUT,
    "learning_rate": Choice((1e-4, 1e-5, 2e-5, 3e-5, 4e-5, 5e-5)),
    "weight_decay": _WEIGHT_DECAY,
    "hidden_layers": Choice((2, 4, 6, 8, 10, 12)),
    "attention_heads": Choice((2, 4, 6, 8, 12)),
    "activation": Choice(("relu", "gelu")),
    "epochs": IntRange(3, 5),
})

SPACES = {
    "text-teacher": TEXT_TEACHER_SPACE,
    "emotion-teacher": EMOTION_TEACHER_SPACE,
    "audio-teacher": AUDIO_TEACHER_SPACE,
    "student": STUDENT_SPACE,
}
