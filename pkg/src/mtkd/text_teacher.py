"""Semantic text teacher: pluggable encoder backend + transformer head.

The backend supplies "pretrained" token vectors; fine-tuning updates a
trainable copy of the embedding rows for the training vocabulary (full
fine-tune) together with the classification head. Tokens unseen during
training fall back to the frozen backend vectors at inference.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .backends import EncoderBackend, resolve_backend
from .corpus import Dataset, Post, SplitIds
from .errors import IncompatibleHead, MtkdError
from .evaluation import MetricsReport, confusion_metrics
from .search_spaces import TEXT_TEACHER_SPACE
from .serialize import load_checkpoint, save_checkpoint
from .util import derive_seed, new_rng


@dataclass(frozen=True)
class ClassifierHead:
    """Shape of the transformer classification block on top of a backend."""
    n_layers: int = 2
    n_heads: int = 2
    dropout: float = 0.0
    activation: str = "relu"

    def validate(self, width: int) -> None:
        if width % self.n_heads != 0:
            raise IncompatibleHead(
                f"{self.n_heads} heads do not divide encoder width {width}")
        if not 2 <= self.n_layers <= 12 or not 2 <= self.n_heads <= 12:
            raise ValueError("head layers/heads must lie in 2..12")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")


class TextClassifierModel(nn.Module):
    """Trainable embedding table + transformer encoder + linear classifier.

    ``pooling`` is ``"mean"`` (teacher) or ``"slot"`` (student): slot
    pooling prepends a summary position, initialised with the mean token
    embedding and optionally rewritten by a fusion transform, and reads
    the classifier input from that position.
    """

    def __init__(self, backend: EncoderBackend, head: ClassifierHead,
                 n_classes: int, seed: int, pooling: str = "mean",
                 pretrained_init: bool = True):
        super().__init__()
        head.validate(backend.width)
        self.backend = backend
        self.head = head
        self.pooling = pooling
        self.pretrained_init = pretrained_init
        self.seed = seed
        rng = new_rng(derive_seed(seed, "text-model-init"))
        self.stack = self.register("stack", nn.TransformerStack(
            backend.width, head.n_layers, head.n_heads, head.dropout,
            head.activation, rng, seed=derive_seed(seed, "head-dropout")))
        self.out = self.register("out", nn.Linear(backend.width, n_classes, rng))
        self.vocab: dict[str, int] = {}
        self.summary_transform = None  # optional fusion module

    def set_summary_transform(self, module) -> None:
        self.summary_transform = self.register("fusion", module)

    def init_vocab(self, tokens) -> None:
        vocab = sorted(set(tokens))
        self.vocab = {t: i for i, t in enumerate(vocab)}
        if self.pretrained_init:
            table = np.stack([self.backend.token_vector(t) for t in vocab]) \
                if vocab else np.zeros((0, self.backend.width))
        else:
            rng = new_rng(derive_seed(self.seed, "scratch-embeddings"))
            table = rng.normal(0.0, 1.0, (len(vocab), self.backend.width))
        self.params["emb"] = table
        self.grads["emb"] = np.zeros_like(table)

    def _token_states(self, tokens: list[str]) -> tuple[np.ndarray, list[int]]:
        ids, rows = [], []
        table = self.params.get("emb")
        for t in tokens:
            ix = self.vocab.get(t, -1)
            ids.append(ix)
            rows.append(table[ix] if ix >= 0 else self.backend.token_vector(t))
        if not rows:
            return np.zeros((0, self.backend.width)), ids
        return np.stack(rows), ids

    def forward(self, tokens: list[str], train: bool = False,
                extras: dict[str, np.ndarray] | None = None) -> np.ndarray:
        states, ids = self._token_states(tokens)
        n = len(tokens)
        if self.pooling == "slot":
            summary = states.mean(axis=0) if n else np.zeros(self.backend.width)
            if self.summary_transform is not None:
                summary = self.summary_transform.forward(summary, extras)
            x = np.vstack([summary[None, :], states])
        else:
            x = states if n else np.zeros((1, self.backend.width))
        h = self.stack.forward(x, train)
        pooled = h[0] if self.pooling == "slot" else h.mean(axis=0)
        self._ids, self._n = ids, n
        return self.out.forward(pooled[None, :])[0]

    def backward(self, dlogits: np.ndarray) -> None:
        dpooled = self.out.backward(dlogits[None, :])[0]
        rows = self._n + 1 if self.pooling == "slot" else max(self._n, 1)
        dh = np.zeros((rows, self.backend.width))
        if self.pooling == "slot":
            dh[0] = dpooled
        else:
            dh[:] = dpooled / rows
        dx = self.stack.backward(dh)
        if self.pooling == "slot":
            dsummary, dtok = dx[0], dx[1:]
            if self.summary_transform is not None:
                dsummary = self.summary_transform.backward(dsummary)
            if self._n:
                dtok = dtok + dsummary[None, :] / self._n
        else:
            dtok = dx if self._n else dx[:0]
        emb_grad = self.grads.get("emb")
        if emb_grad is not None and self._n:
            pos = [i for i, ix in enumerate(self._ids) if ix >= 0]
            if pos:
                np.add.at(emb_grad, [self._ids[i] for i in pos], dtok[pos])

    def predict_proba(self, text: str,
                      extras: dict[str, np.ndarray] | None = None) -> np.ndarray:
        logits = self.forward(self.backend.tokenize(text), train=False,
                              extras=extras)
        return nn.softmax(logits)


@dataclass
class FinetuneConfig:
    learning_rate: float = 4e-5
    weight_decay: float = 0.0
    epochs: int = 4
    batch_size: int = 8
    seed: int = 0
    allow_out_of_range: bool = False

    def validate(self) -> None:
        TEXT_TEACHER_SPACE.validate(
            {"learning_rate": self.learning_rate,
             "weight_decay": self.weight_decay, "epochs": self.epochs},
            self.allow_out_of_range)


class TextTeacher:
    """Frozen-after-fine-tuning classifier over post text."""

    modality = "text"

    def __init__(self, backend: EncoderBackend, head: ClassifierHead,
                 classes: list[str], seed: int = 0):
        self.backend = backend
        self.head = head
        self.classes = list(classes)
        self.seed = seed
        self.model = TextClassifierModel(backend, head, len(classes), seed)
        self.frozen = False

    def predict_proba(self, post: Post) -> np.ndarray:
        return self.model.predict_proba(post.text)

    def predict(self, posts) -> list[int]:
        return [int(np.argmax(self.predict_proba(p))) for p in posts]

    def save(self, path) -> None:
        manifest = {
            "kind": "text-teacher",
            "backend": self.backend.name,
            "head": asdict(self.head),
            "classes": self.classes,
            "seed": self.seed,
            "vocab": sorted(self.model.vocab),
            "frozen": self.frozen,
            "version": 1,
        }
        save_checkpoint(path, manifest, self.model.named_parameters())

    @classmethod
    def load(cls, path) -> "TextTeacher":
        manifest, params = load_checkpoint(path)
        if manifest["kind"] != "text-teacher":
            raise MtkdError(f"{path}: not a text-teacher checkpoint")
        teacher = cls(resolve_backend(manifest["backend"]),
                      ClassifierHead(**manifest["head"]),
                      manifest["classes"], manifest["seed"])
        teacher.model.init_vocab(manifest["vocab"])
        teacher.model.load_parameters(params)
        teacher.frozen = manifest["frozen"]
        return teacher


def build_text_teacher(backend: EncoderBackend, head: ClassifierHead,
                       classes: list[str], seed: int = 0) -> TextTeacher:
    """Construct an (untrained) text teacher; raises IncompatibleHead when
    the head's attention heads do not divide the backend width."""
    return TextTeacher(backend, head, classes, seed)


def finetune_teacher(teacher: TextTeacher, dataset: Dataset, split: SplitIds,
                     cfg: FinetuneConfig) -> tuple[TextTeacher, MetricsReport]:
    """Cross-entropy fine-tuning on the train portion; returns validation
    metrics and freezes the teacher."""
    if teacher.frozen:
        raise MtkdError("teacher is frozen; build a new one to retrain")
    cfg.validate()
    model = teacher.model
    train_posts = [dataset.post(pid) for pid in split.train]
    tokens = [t for p in train_posts for t in teacher.backend.tokenize(p.text)]
    model.init_vocab(tokens)

    opt = nn.Adam(model, cfg.learning_rate, cfg.weight_decay)
    rng = new_rng(derive_seed(cfg.seed, "finetune-shuffle"))
    order = list(range(len(train_posts)))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_posts[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grads()
            total = 0.0
            for post in batch:
                logits = model.forward(teacher.backend.tokenize(post.text),
                                       train=True)
                loss, dlogits = nn.cross_entropy(logits, [post.label])
                total += loss
                model.backward(dlogits[0] / len(batch))
            nn.check_finite(total / len(batch))
            opt.step()

    eval_ids = split.val if split.val else split.train
    eval_posts = [dataset.post(pid) for pid in eval_ids]
    report = confusion_metrics([p.label for p in eval_posts],
                               teacher.predict(eval_posts), dataset.classes)
    teacher.frozen = True
    return teacher, report
