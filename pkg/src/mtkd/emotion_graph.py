"""Emotion-based teacher: lexicon labels, post-token graph, GCN, MLP.

Pipeline: a term lexicon tags every post with a 7-way multi-label
emotion target; a heterogeneous graph over posts and vocabulary tokens
(PMI token-token, TF-IDF token-post, Jaccard post-post edges) feeds a
two-layer GCN trained on those targets; its second-layer states
re-initialise an encoder's token embeddings, which are fine-tuned on the
same multi-label task; the resulting per-post embeddings finally train
an MLP over the mental-health classes.

Node ids are namespaced ``post:<id>`` / ``token:<token>`` wherever posts
and tokens share a table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from . import nn
from .backends import EncoderBackend
from .corpus import Dataset, Post, SplitIds
from .errors import EmptyVocabulary, MtkdError
from .search_spaces import EMOTION_TEACHER_SPACE
from .serialize import (load_checkpoint, read_matrix, save_checkpoint,
                        write_json, write_matrix)
from .tokenizer import tokenize
from .util import derive_seed, new_rng

EMOTION_TYPES = ("anger", "disgust", "fear", "sadness", "surprise",
                 "negative", "other")


# ----------------------------------------------------------------------
# lexicon and per-post targets


@dataclass(frozen=True)
class EmotionLexicon:
    """Term → set of emotion-type indices over the fixed 7-type order."""

    entries: dict[str, frozenset[int]]
    emotion_types: tuple[str, ...] = EMOTION_TYPES

    @classmethod
    def from_names(cls, raw: dict[str, set[str] | list[str]]) -> "EmotionLexicon":
        index = {name: i for i, name in enumerate(EMOTION_TYPES)}
        entries = {}
        for term, names in raw.items():
            if not names:
                raise ValueError(f"term {term!r} has no emotion types")
            unknown = set(names) - set(index)
            if unknown:
                raise ValueError(f"term {term!r}: unknown emotion types {unknown}")
            entries[term.lower()] = frozenset(index[n] for n in names)
        return cls(entries=entries)

    def names_for(self, term: str) -> set[str]:
        return {EMOTION_TYPES[i] for i in self.entries.get(term, ())}


def load_lexicon(path) -> EmotionLexicon:
    """Tab-separated ``term<TAB>emotion1,emotion2,...`` lines."""
    raw: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                term, names = line.split("\t", 1)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected term<TAB>emotions")
            raw[term] = {n.strip() for n in names.split(",") if n.strip()}
    return EmotionLexicon.from_names(raw)


def save_lexicon(lex: EmotionLexicon, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for term in sorted(lex.entries):
            names = sorted(lex.names_for(term))
            fh.write(f"{term}\t{','.join(names)}\n")


@dataclass(frozen=True)
class EmotionLabelSet:
    bits: tuple[int, ...]  # 7 entries of 0/1

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)

    @property
    def n_active(self) -> int:
        return sum(self.bits)


def assign_emotions(post: Post, lexicon: EmotionLexicon) -> EmotionLabelSet:
    """Union of the lexicon's emotion sets over the post's tokens.

    Posts matching no term get the all-zero target and stay in training.
    """
    active: set[int] = set()
    for token in tokenize(post.text):
        active |= lexicon.entries.get(token, frozenset())
    return EmotionLabelSet(bits=tuple(int(i in active)
                                      for i in range(len(EMOTION_TYPES))))


def emotion_label_histogram(label_sets) -> list[int]:
    """Count of posts matching m of the 7 labels, for m = 0..7."""
    counts = [0] * (len(EMOTION_TYPES) + 1)
    for ls in label_sets:
        counts[ls.n_active] += 1
    return counts


# ----------------------------------------------------------------------
# graph construction


class Edge(NamedTuple):
    src: str
    dst: str
    weight: float
    kind: str  # token-token | token-post | post-post


@dataclass
class TextGraph:
    """Undirected post+token graph; each edge stored once, applied
    symmetrically. Node order is posts first, then tokens."""

    post_nodes: tuple[str, ...]
    token_nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    features: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.post_nodes) + len(self.token_nodes)

    @property
    def node_ids(self) -> list[str]:
        return [f"post:{p}" for p in self.post_nodes] + \
               [f"token:{t}" for t in self.token_nodes]

    def node_index(self) -> dict[str, int]:
        return {nid: i for i, nid in enumerate(self.node_ids)}

    def _edge_indices(self, edge: Edge, index: dict[str, int]) -> tuple[int, int]:
        src_ns = "token" if edge.kind.startswith("token") else "post"
        dst_ns = "post" if edge.kind.endswith("post") else "token"
        return index[f"{src_ns}:{edge.src}"], index[f"{dst_ns}:{edge.dst}"]

    def normalized_adjacency(self) -> sp.csr_matrix:
        """Symmetric normalization with self-loops,
        D^-1/2 (A + I) D^-1/2."""
        n = self.n_nodes
        index = self.node_index()
        rows, cols, vals = [], [], []
        for edge in self.edges:
            i, j = self._edge_indices(edge, index)
            rows += [i, j]
            cols += [j, i]
            vals += [edge.weight, edge.weight]
        a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        a = (a + sp.eye(n)).tocsr()
        d = np.asarray(a.sum(axis=1)).ravel()
        d_inv_sqrt = 1.0 / np.sqrt(d)
        dmat = sp.diags(d_inv_sqrt)
        return (dmat @ a @ dmat).tocsr()


def jaccard(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def build_graph(corpus: Dataset, window: int = 20,
                tokenizer: Callable[[str], list[str]] = tokenize) -> TextGraph:
    """Heterogeneous graph with PMI / TF-IDF / Jaccard edge weights.

    PMI runs over sliding windows of ``window`` tokens (a shorter post
    is a single window) with presence counts; only strictly positive
    weights become edges. Natural log throughout.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    if not corpus.posts:
        raise MtkdError("corpus is empty")
    docs = [(p.id, tokenizer(p.text)) for p in corpus.posts]
    vocab = sorted({t for _, toks in docs for t in toks})
    if not vocab:
        raise EmptyVocabulary("no tokens after tokenization")

    # PMI over sliding windows
    n_windows = 0
    single: dict[str, int] = {}
    pair: dict[tuple[str, str], int] = {}
    for _, toks in docs:
        spans = [toks] if len(toks) <= window else \
            [toks[i:i + window] for i in range(len(toks) - window + 1)]
        for span in spans:
            n_windows += 1
            present = sorted(set(span))
            for t in present:
                single[t] = single.get(t, 0) + 1
            for i in range(len(present)):
                for j in range(i + 1, len(present)):
                    key = (present[i], present[j])
                    pair[key] = pair.get(key, 0) + 1

    edges: list[Edge] = []
    for (ti, tj), nij in sorted(pair.items()):
        pmi = np.log(nij * n_windows / (single[ti] * single[tj]))
        if pmi > 0:
            edges.append(Edge(ti, tj, float(pmi), "token-token"))

    # TF-IDF token-post
    n_docs = len(docs)
    df: dict[str, int] = {}
    for _, toks in docs:
        for t in set(toks):
            df[t] = df.get(t, 0) + 1
    for pid, toks in docs:
        counts: dict[str, int] = {}
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
        for t in sorted(counts):
            w = counts[t] * np.log(n_docs / df[t])
            if w > 0:
                edges.append(Edge(t, pid, float(w), "token-post"))

    # Jaccard post-post
    token_sets = [(pid, set(toks)) for pid, toks in docs]
    for i in range(len(token_sets)):
        for j in range(i + 1, len(token_sets)):
            w = jaccard(token_sets[i][1], token_sets[j][1])
            if w > 0:
                edges.append(Edge(token_sets[i][0], token_sets[j][0],
                                  float(w), "post-post"))

    return TextGraph(post_nodes=tuple(pid for pid, _ in docs),
                     token_nodes=tuple(vocab), edges=tuple(edges))


def init_node_features(corpus: Dataset, encoder: EncoderBackend,
                       graph: TextGraph) -> np.ndarray:
    """Post rows from the encoder summary; token rows as the element-wise
    minimum of that token's contextual embeddings across the corpus."""
    width = encoder.width
    summaries: dict[str, np.ndarray] = {}
    token_min: dict[str, np.ndarray] = {}
    for post in corpus.posts:
        summary, matrix = encoder.encode(post.text)
        summaries[post.id] = summary
        for tok, row in zip(encoder.tokenize(post.text), matrix):
            prev = token_min.get(tok)
            token_min[tok] = row if prev is None else np.minimum(prev, row)
    rows = [summaries.get(pid, np.zeros(width)) for pid in graph.post_nodes]
    for tok in graph.token_nodes:
        # tokens beyond the encoder's max length fall back to its static vector
        rows.append(token_min.get(tok, encoder.token_vector(tok)))
    return np.stack(rows)


def export_graph(graph: TextGraph, base_path) -> None:
    """Write ``<base>.graph.json`` plus ``<base>.features.bin`` (rows/cols
    header, little-endian float32, row-major)."""
    base = Path(base_path)
    write_json(base.with_suffix(".graph.json"), {
        "post_nodes": list(graph.post_nodes),
        "token_nodes": list(graph.token_nodes),
        "edges": [[e.src, e.dst, e.weight, e.kind] for e in graph.edges],
    })
    if graph.features is not None:
        write_matrix(base.with_suffix(".features.bin"), graph.features)


def load_graph(base_path) -> TextGraph:
    import json
    base = Path(base_path)
    raw = json.loads(base.with_suffix(".graph.json").read_text("utf-8"))
    features_path = base.with_suffix(".features.bin")
    features = read_matrix(features_path) if features_path.exists() else None
    return TextGraph(post_nodes=tuple(raw["post_nodes"]),
                     token_nodes=tuple(raw["token_nodes"]),
                     edges=tuple(Edge(s, d, w, k) for s, d, w, k in raw["edges"]),
                     features=features)


# ----------------------------------------------------------------------
# two-layer GCN


@dataclass
class GcnConfig:
    hidden_dim: int = 32
    learning_rate: float = 0.01
    epochs: int = 100
    patience: int = 10
    seed: int = 0


class GcnModel(nn.Module):
    """Two-layer graph convolution over a cached normalized adjacency.

    Layer 1: relu(A (X W1 + b1)); layer 2 (pre-activation, the extracted
    state): A (H1 W2 + b2). Sigmoid scores on post rows give the
    multi-label predictions.
    """

    def __init__(self, d_in: int, hidden: int, n_labels: int,
                 adjacency: sp.csr_matrix, seed: int):
        super().__init__()
        rng = new_rng(derive_seed(seed, "gcn-init"))
        self.a = adjacency
        self.params = {
            "w1": rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, n_labels)),
            "b2": np.zeros(n_labels),
        }
        self._init_grads()

    def forward(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        self._x = x
        self._n1 = self.a @ (x @ p["w1"] + p["b1"])
        self._h1 = nn.relu(self._n1)
        return self.a @ (self._h1 @ p["w2"] + p["b2"])

    def backward(self, dz: np.ndarray) -> None:
        p, g = self.params, self.grads
        dm = self.a.T @ dz
        g["w2"] += self._h1.T @ dm
        g["b2"] += dm.sum(axis=0)
        dh1 = dm @ p["w2"].T
        dn1 = dh1 * (self._n1 > 0)
        dp = self.a.T @ dn1
        g["w1"] += self._x.T @ dp
        g["b1"] += dp.sum(axis=0)


def train_emotion_gcn(graph: TextGraph, targets: dict[str, EmotionLabelSet],
                      cfg: GcnConfig) -> GcnModel:
    """Fit the GCN on post-node multi-label targets with sigmoid + BCE.

    Full-batch Adam for ``cfg.epochs`` epochs, stopping once the loss
    has not improved for ``cfg.patience`` epochs.
    """
    if graph.features is None:
        raise MtkdError("graph has no node features; run init_node_features")
    missing = [p for p in graph.post_nodes if p not in targets]
    if missing:
        raise MtkdError(f"missing emotion targets for posts {missing[:5]}")
    n_posts = len(graph.post_nodes)
    y = np.stack([targets[p].as_array() for p in graph.post_nodes])
    model = GcnModel(graph.features.shape[1], cfg.hidden_dim,
                     len(EMOTION_TYPES), graph.normalized_adjacency(),
                     cfg.seed)
    opt = nn.Adam(model, cfg.learning_rate)
    stopper = nn.EarlyStopping(cfg.patience)
    for _ in range(cfg.epochs):
        model.zero_grads()
        z = model.forward(graph.features)
        loss, dz_post = nn.bce_with_logits(z[:n_posts], y)
        nn.check_finite(loss)
        dz = np.zeros_like(z)
        dz[:n_posts] = dz_post
        model.backward(dz)
        opt.step()
        if stopper.update(loss):
            break
    return model


def extract_emotion_embeddings(model: GcnModel,
                               graph: TextGraph) -> dict[str, np.ndarray]:
    """Pre-activation second-layer states for every node, keyed by the
    namespaced node id."""
    z = model.forward(graph.features)
    return {nid: z[i].copy() for i, nid in enumerate(graph.node_ids)}


# ----------------------------------------------------------------------
# encoder refinement on the multi-label task


@dataclass
class RefineConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    patience: int = 10
    batch_size: int = 16
    projector_seed: int = 7
    seed: int = 0


class _RefineModel(nn.Module):
    """Mean-pooled trainable embeddings + linear multi-label head."""

    def __init__(self, vocab: list[str], table: np.ndarray, n_labels: int,
                 seed: int):
        super().__init__()
        self.vocab = {t: i for i, t in enumerate(vocab)}
        self.params["emb"] = table
        self.grads["emb"] = np.zeros_like(table)
        self.head = self.register("head", nn.Linear(
            table.shape[1], n_labels, new_rng(derive_seed(seed, "refine-head"))))

    def forward(self, tokens: list[str]) -> np.ndarray:
        self._ids = [self.vocab[t] for t in tokens if t in self.vocab]
        if self._ids:
            summary = self.params["emb"][self._ids].mean(axis=0)
        else:
            summary = np.zeros(self.params["emb"].shape[1])
        self._summary = summary
        return self.head.forward(summary[None, :])[0]

    def backward(self, dlogits: np.ndarray) -> None:
        dsum = self.head.backward(dlogits[None, :])[0]
        if self._ids:
            np.add.at(self.grads["emb"], self._ids, dsum / len(self._ids))

    def summary_of(self, tokens: list[str]) -> np.ndarray:
        ids = [self.vocab[t] for t in tokens if t in self.vocab]
        if not ids:
            return np.zeros(self.params["emb"].shape[1])
        return self.params["emb"][ids].mean(axis=0)


def multilabel_micro_f1(scores: np.ndarray, targets: np.ndarray,
                        threshold: float = 0.5) -> float:
    preds = (scores >= threshold).astype(int)
    tp = int(((preds == 1) & (targets == 1)).sum())
    fp = int(((preds == 1) & (targets == 0)).sum())
    fn = int(((preds == 0) & (targets == 1)).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass(frozen=True)
class RefinedEmbeddings:
    post_table: dict[str, np.ndarray]
    token_table: dict[str, np.ndarray]
    f1_before: float
    f1_after: float


def refine_with_encoder(embeddings: dict[str, np.ndarray], corpus: Dataset,
                        targets: dict[str, EmotionLabelSet],
                        encoder: EncoderBackend,
                        cfg: RefineConfig) -> RefinedEmbeddings:
    """Re-initialise encoder token embeddings from GCN token states and
    fine-tune on the 7-way multi-label task.

    The 7-dim GCN states enter encoder width through a fixed seeded
    linear projection; tokens absent from the graph keep their backend
    vectors. Returns the fine-tuned per-post summaries and per-token
    rows, with training micro-F1 before/after for inspection.
    """
    proj_rng = new_rng(derive_seed(cfg.projector_seed, "gcn-projection"))
    projector = proj_rng.normal(0.0, 1.0 / np.sqrt(len(EMOTION_TYPES)),
                                (len(EMOTION_TYPES), encoder.width))
    doc_tokens = {p.id: encoder.tokenize(p.text) for p in corpus.posts}
    vocab = sorted({t for toks in doc_tokens.values() for t in toks})
    rows = []
    for tok in vocab:
        state = embeddings.get(f"token:{tok}")
        rows.append(state @ projector if state is not None
                    else encoder.token_vector(tok))
    table = np.stack(rows) if rows else np.zeros((0, encoder.width))
    model = _RefineModel(vocab, table, len(EMOTION_TYPES), cfg.seed)

    y = {p.id: targets[p.id].as_array() for p in corpus.posts}

    def scores_and_targets():
        s = np.stack([nn.sigmoid(model.forward(doc_tokens[p.id]))
                      for p in corpus.posts])
        t = np.stack([y[p.id] for p in corpus.posts])
        return s, t

    f1_before = multilabel_micro_f1(*scores_and_targets())
    opt = nn.Adam(model, cfg.learning_rate)
    stopper = nn.EarlyStopping(cfg.patience)
    rng = new_rng(derive_seed(cfg.seed, "refine-shuffle"))
    order = list(range(len(corpus.posts)))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [corpus.posts[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grads()
            for post in batch:
                logits = model.forward(doc_tokens[post.id])
                loss, dz = nn.bce_with_logits(logits, y[post.id])
                epoch_loss += loss
                model.backward(dz / len(batch))
            opt.step()
        nn.check_finite(epoch_loss)
        if stopper.update(epoch_loss):
            break
    f1_after = multilabel_micro_f1(*scores_and_targets())

    post_table = {p.id: model.summary_of(doc_tokens[p.id]) for p in corpus.posts}
    token_table = {t: model.params["emb"][i].copy() for t, i in model.vocab.items()}
    return RefinedEmbeddings(post_table=post_table, token_table=token_table,
                             f1_before=f1_before, f1_after=f1_after)


def gcn_post_states(embeddings: dict[str, np.ndarray],
                    corpus: Dataset) -> dict[str, np.ndarray]:
    """Raw 7-dim GCN post states as the alternative teacher input."""
    return {p.id: embeddings[f"post:{p.id}"] for p in corpus.posts}


# ----------------------------------------------------------------------
# downstream MLP teacher


@dataclass
class EmotionTeacherConfig:
    dropout: float = 0.1
    weight_decay: float = 0.0
    learning_rate: float = 1e-3
    hidden_layers: int = 2
    hidden_dim: int = 100
    batch_size: int = 16
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    allow_out_of_range: bool = False

    def validate(self) -> None:
        EMOTION_TEACHER_SPACE.validate(
            {"dropout": self.dropout, "weight_decay": self.weight_decay,
             "learning_rate": self.learning_rate,
             "hidden_layers": self.hidden_layers,
             "hidden_dim": self.hidden_dim},
            self.allow_out_of_range)


class EmotionTeacher:
    """MLP over per-post emotion embeddings, frozen after training."""

    modality = "emotion"

    def __init__(self, embedding_table: dict[str, np.ndarray],
                 classes: list[str], cfg: EmotionTeacherConfig):
        self.embedding_table = embedding_table
        self.classes = list(classes)
        self.cfg = cfg
        width = next(iter(embedding_table.values())).shape[0]
        self.mlp = nn.Mlp(width, cfg.hidden_dim, cfg.hidden_layers,
                          len(classes),
                          new_rng(derive_seed(cfg.seed, "emotion-mlp")),
                          dropout=cfg.dropout,
                          seed=derive_seed(cfg.seed, "emotion-dropout"))
        self.frozen = False

    def embedding_of(self, post: Post) -> np.ndarray:
        vec = self.embedding_table.get(post.id)
        if vec is None:
            raise MtkdError(f"no emotion embedding for post {post.id!r}")
        return vec

    def predict_proba(self, post: Post) -> np.ndarray:
        logits = self.mlp.forward(self.embedding_of(post)[None, :])[0]
        return nn.softmax(logits)

    def predict(self, posts) -> list[int]:
        return [int(np.argmax(self.predict_proba(p))) for p in posts]

    def save(self, path) -> None:
        ids = sorted(self.embedding_table)
        params = dict(self.mlp.named_parameters())
        params["embedding_table"] = np.stack(
            [self.embedding_table[i] for i in ids])
        manifest = {"kind": "emotion-teacher", "classes": self.classes,
                    "post_ids": ids, "frozen": self.frozen, "version": 1,
                    "cfg": {"dropout": self.cfg.dropout,
                            "weight_decay": self.cfg.weight_decay,
                            "learning_rate": self.cfg.learning_rate,
                            "hidden_layers": self.cfg.hidden_layers,
                            "hidden_dim": self.cfg.hidden_dim,
                            "batch_size": self.cfg.batch_size,
                            "epochs": self.cfg.epochs,
                            "patience": self.cfg.patience,
                            "seed": self.cfg.seed}}
        save_checkpoint(path, manifest, params)

    @classmethod
    def load(cls, path) -> "EmotionTeacher":
        manifest, params = load_checkpoint(path)
        if manifest["kind"] != "emotion-teacher":
            raise MtkdError(f"{path}: not an emotion-teacher checkpoint")
        table_matrix = params.pop("embedding_table")
        table = {pid: table_matrix[i]
                 for i, pid in enumerate(manifest["post_ids"])}
        cfg = EmotionTeacherConfig(**manifest["cfg"], allow_out_of_range=True)
        teacher = cls(table, manifest["classes"], cfg)
        teacher.mlp.load_parameters(params)
        teacher.frozen = manifest["frozen"]
        return teacher


def train_emotion_teacher(embeddings: dict[str, np.ndarray],
                          dataset: Dataset, cfg: EmotionTeacherConfig,
                          split: SplitIds | None = None) -> EmotionTeacher:
    """Cross-entropy training of the MLP teacher over the class labels.

    Trains on the split's train ids when given, otherwise on all posts.
    """
    cfg.validate()
    train_ids = list(split.train) if split is not None \
        else [p.id for p in dataset.posts]
    missing = [pid for pid in train_ids if pid not in embeddings]
    if missing:
        raise MtkdError(f"missing embeddings for training posts {missing[:5]}")
    teacher = EmotionTeacher(embeddings, dataset.classes, cfg)
    x = np.stack([embeddings[pid] for pid in train_ids])
    labels = np.array([dataset.post(pid).label for pid in train_ids])
    opt = nn.Adam(teacher.mlp, cfg.learning_rate, cfg.weight_decay)
    stopper = nn.EarlyStopping(cfg.patience)
    rng = new_rng(derive_seed(cfg.seed, "emotion-teacher-shuffle"))
    order = np.arange(len(train_ids))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            teacher.mlp.zero_grads()
            logits = teacher.mlp.forward(x[idx], train=True)
            loss, dlogits = nn.cross_entropy(logits, labels[idx])
            epoch_loss += loss * len(idx)
            teacher.mlp.backward(dlogits)
            opt.step()
        nn.check_finite(epoch_loss)
        if stopper.update(epoch_loss):
            break
    teacher.frozen = True
    return teacher
