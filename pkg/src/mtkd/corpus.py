"""Dataset ingestion, de-identification, split planning, and statistics.

Datasets are line-delimited JSON records with string keys ``id``,
``text``, ``label``. An optional sidecar manifest ``<file>.manifest.json``
declares the ordered class list and the evaluation protocol; explicit
arguments override the sidecar.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (EmptyDataset, InfeasibleStratification, MissingField,
                     UnknownLabel)
from .serialize import write_json
from .util import new_rng

_HANDLE_RE = re.compile(r"@\w")
_URL_RE = re.compile(r"(\w+://|www\.)")

USER_MASK = "_USER_"
URL_MASK = "_URL_"


def deidentify(text: str) -> str:
    """Replace @-handles with ``_USER_`` and URLs with ``_URL_``.

    Works on whitespace-delimited tokens; a handle is a token starting
    with ``@`` followed by a word character (bare e-mail addresses are
    left alone), a URL is a token starting with ``scheme://`` or
    ``www.``. All other characters, including whitespace runs, are
    preserved, so the operation is idempotent.
    """

    def _mask(match: re.Match) -> str:
        tok = match.group(0)
        if _HANDLE_RE.match(tok):
            return USER_MASK
        if _URL_RE.match(tok):
            return URL_MASK
        return tok

    return re.sub(r"\S+", _mask, text)


# ----------------------------------------------------------------------
# protocols


@dataclass(frozen=True)
class KFold:
    k: int

    def describe(self) -> str:
        return f"kfold:{self.k}"


@dataclass(frozen=True)
class FixedSplit:
    """Stratified random split at the given fractions (val optional)."""
    train: float
    test: float
    val: float | None = None

    def describe(self) -> str:
        if self.val is None:
            return f"fixed:{self.train:g}/{self.test:g}"
        return f"fixed:{self.train:g}/{self.val:g}/{self.test:g}"


@dataclass(frozen=True)
class ExplicitSplit:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    val_ids: tuple[str, ...] = ()

    def describe(self) -> str:
        return "explicit"


Protocol = KFold | FixedSplit | ExplicitSplit


def parse_protocol(spec) -> Protocol:
    """Protocol from a string (``kfold:10``, ``fixed:0.8/0.2``,
    ``fixed:0.6/0.2/0.2``) or an equivalent mapping."""
    if isinstance(spec, (KFold, FixedSplit, ExplicitSplit)):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "kfold":
            return KFold(int(spec["k"]))
        if kind == "fixed":
            if "train_ids" in spec:
                return ExplicitSplit(tuple(spec["train_ids"]),
                                     tuple(spec["test_ids"]),
                                     tuple(spec.get("val_ids", ())))
            return FixedSplit(float(spec["train"]), float(spec["test"]),
                              spec.get("val"))
        raise ValueError(f"unknown protocol kind {kind!r}")
    text = str(spec)
    if text.startswith("kfold:"):
        return KFold(int(text.split(":", 1)[1]))
    if text.startswith("fixed:"):
        parts = [float(p) for p in text.split(":", 1)[1].split("/")]
        if len(parts) == 2:
            return FixedSplit(parts[0], parts[1])
        if len(parts) == 3:
            return FixedSplit(parts[0], parts[2], parts[1])
    raise ValueError(f"cannot parse protocol {spec!r}")


# ----------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class Post:
    id: str
    text: str
    label: int
    char_length: int
    word_count: int


@dataclass
class Dataset:
    name: str
    classes: list[str]
    posts: list[Post]
    protocol: Protocol

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("a dataset needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")

    def post(self, post_id: str) -> Post:
        return self._by_id[post_id]

    @property
    def _by_id(self) -> dict[str, Post]:
        cached = getattr(self, "_idx", None)
        if cached is None or len(cached) != len(self.posts):
            cached = {p.id: p for p in self.posts}
            object.__setattr__(self, "_idx", cached)
        return cached

    def labels(self, ids=None) -> list[int]:
        if ids is None:
            return [p.label for p in self.posts]
        return [self.post(i).label for i in ids]

    def fingerprint(self) -> str:
        from .util import sha256_bytes
        payload = json.dumps(
            [self.name, self.classes,
             [[p.id, p.text, p.label] for p in self.posts]],
            sort_keys=True).encode("utf-8")
        return sha256_bytes(payload)


@dataclass(frozen=True)
class SplitIds:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[SplitIds, ...]
    seed: int


def make_post(id: str, text: str, label: int, mask: bool = True) -> Post:
    if mask:
        text = deidentify(text)
    if not text.strip():
        raise MissingField(f"record {id!r} has empty text")
    return Post(id=id, text=text, label=label,
                char_length=len(text), word_count=max(len(text.split()), 1))


def load_dataset(path, name: str | None = None, protocol=None,
                 classes: list[str] | None = None, mask: bool = True) -> Dataset:
    """Read a line-delimited dataset, masking each record's text.

    Classes and protocol come from explicit arguments first, then the
    sidecar manifest; with neither, classes fall back to the sorted set
    of labels seen in the file and the protocol to an 80/20 split.
    """
    path = Path(path)
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    name = name or manifest.get("name") or path.stem
    classes = classes or manifest.get("classes")
    protocol = protocol if protocol is not None else manifest.get("protocol")

    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("id", "text", "label"):
                if key not in rec or rec[key] is None:
                    raise MissingField(f"line {lineno}: record lacks {key!r}")
            records.append(rec)
    if not records:
        raise EmptyDataset(f"{path}: no records")

    if classes is None:
        classes = sorted({str(r["label"]) for r in records})
    index = {c: i for i, c in enumerate(classes)}

    posts = []
    for rec in records:
        label = str(rec["label"])
        if label not in index:
            raise UnknownLabel(f"record {rec['id']!r}: label {label!r} "
                               f"not in declared classes {classes}")
        posts.append(make_post(str(rec["id"]), str(rec["text"]),
                               index[label], mask=mask))

    proto = parse_protocol(protocol) if protocol is not None else FixedSplit(0.8, 0.2)
    return Dataset(name=name, classes=list(classes), posts=posts, protocol=proto)


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in dataset.posts:
            fh.write(json.dumps({"id": p.id, "text": p.text,
                                 "label": dataset.classes[p.label]},
                                ensure_ascii=False) + "\n")
    manifest = {"name": dataset.name, "classes": dataset.classes,
                "protocol": _protocol_dict(dataset.protocol)}
    write_json(path.with_name(path.name + ".manifest.json"), manifest)


def _protocol_dict(proto: Protocol) -> dict:
    if isinstance(proto, KFold):
        return {"kind": "kfold", "k": proto.k}
    if isinstance(proto, FixedSplit):
        out = {"kind": "fixed", "train": proto.train, "test": proto.test}
        if proto.val is not None:
            out["val"] = proto.val
        return out
    return {"kind": "fixed", "train_ids": list(proto.train_ids),
            "val_ids": list(proto.val_ids), "test_ids": list(proto.test_ids)}


# ----------------------------------------------------------------------
# split planning


def _carve_val(pool: list[str], rng, fraction: float = 0.1) -> tuple[tuple, tuple]:
    """Shuffle the training pool and peel its last ``fraction`` off as
    validation."""
    pool = list(pool)
    rng.shuffle(pool)
    n_val = max(1, round(fraction * len(pool))) if len(pool) > 1 else 0
    cut = len(pool) - n_val
    return tuple(pool[:cut]), tuple(pool[cut:])


def make_splits(dataset: Dataset, seed: int) -> SplitPlan:
    """Deterministic stratified split plan for the dataset's protocol.

    For k-fold, every post lands in exactly one test fold; 10% of each
    training portion becomes validation when the protocol declares none.
    """
    rng = new_rng(seed)
    proto = dataset.protocol
    by_class: dict[int, list[str]] = {i: [] for i in range(len(dataset.classes))}
    for p in dataset.posts:
        by_class[p.label].append(p.id)

    if isinstance(proto, KFold):
        k = proto.k
        for ci, ids in by_class.items():
            if 0 < len(ids) < k:
                raise InfeasibleStratification(
                    f"class {dataset.classes[ci]!r} has {len(ids)} samples "
                    f"for {k} folds")
        folds_ids: list[list[str]] = [[] for _ in range(k)]
        for ci in sorted(by_class):
            ids = list(by_class[ci])
            rng.shuffle(ids)
            for j, pid in enumerate(ids):
                folds_ids[j % k].append(pid)
        folds = []
        for i in range(k):
            test = tuple(folds_ids[i])
            pool = [pid for j in range(k) if j != i for pid in folds_ids[j]]
            train, val = _carve_val(pool, rng)
            folds.append(SplitIds(train=train, val=val, test=test))
        return SplitPlan(folds=tuple(folds), seed=seed)

    if isinstance(proto, ExplicitSplit):
        train, val = proto.train_ids, proto.val_ids
        if not val:
            train, val = _carve_val(list(train), rng)
        return SplitPlan(folds=(SplitIds(train=tuple(train), val=tuple(val),
                                         test=tuple(proto.test_ids)),),
                         seed=seed)

    # fixed fractions, stratified per class
    train_pool, val_ids, test_ids = [], [], []
    for ci in sorted(by_class):
        ids = list(by_class[ci])
        rng.shuffle(ids)
        n = len(ids)
        n_test = round(proto.test * n)
        n_val = round(proto.val * n) if proto.val is not None else 0
        test_ids.extend(ids[:n_test])
        val_ids.extend(ids[n_test:n_test + n_val])
        train_pool.extend(ids[n_test + n_val:])
    if proto.val is None:
        train, val = _carve_val(train_pool, rng)
    else:
        train, val = tuple(train_pool), tuple(val_ids)
    return SplitPlan(folds=(SplitIds(train=train, val=val,
                                     test=tuple(test_ids)),),
                     seed=seed)


def save_split_plan(plan: SplitPlan, path) -> None:
    write_json(path, {"seed": plan.seed,
                      "folds": [{"train": list(f.train), "val": list(f.val),
                                 "test": list(f.test)} for f in plan.folds]})


def load_split_plan(path) -> SplitPlan:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitPlan(folds=tuple(SplitIds(tuple(f["train"]), tuple(f["val"]),
                                          tuple(f["test"]))
                                 for f in raw["folds"]),
                     seed=raw["seed"])


# ----------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class LengthAggregate:
    min: int
    max: int
    avg: float


def _aggregate(values: list[int]) -> LengthAggregate:
    return LengthAggregate(min=min(values), max=max(values),
                           avg=sum(values) / len(values))


@dataclass(frozen=True)
class ClassStats:
    name: str
    count: int
    percent: float
    chars: LengthAggregate
    words: LengthAggregate


@dataclass(frozen=True)
class DatasetStats:
    total: int
    per_class: tuple[ClassStats, ...]
    chars: LengthAggregate
    words: LengthAggregate


def compute_stats(dataset: Dataset) -> DatasetStats:
    """Per-class counts/percentages and character/word length aggregates."""
    if not dataset.posts:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    total = len(dataset.posts)
    per_class = []
    for ci, cname in enumerate(dataset.classes):
        members = [p for p in dataset.posts if p.label == ci]
        if not members:
            per_class.append(ClassStats(cname, 0, 0.0,
                                        LengthAggregate(0, 0, 0.0),
                                        LengthAggregate(0, 0, 0.0)))
            continue
        per_class.append(ClassStats(
            name=cname, count=len(members),
            percent=100.0 * len(members) / total,
            chars=_aggregate([p.char_length for p in members]),
            words=_aggregate([p.word_count for p in members])))
    return DatasetStats(
        total=total, per_class=tuple(per_class),
        chars=_aggregate([p.char_length for p in dataset.posts]),
        words=_aggregate([p.word_count for p in dataset.posts]))


def write_stats_report(dataset: Dataset, stats: DatasetStats, path) -> None:
    """Structured report with the same fields as the data-statistics tables."""

    def agg(a: LengthAggregate) -> dict:
        return {"min": a.min, "max": a.max, "avg": round(a.avg, 2)}

    write_json(path, {
        "name": dataset.name,
        "num_classes": len(dataset.classes),
        "total_samples": stats.total,
        "evaluation": dataset.protocol.describe(),
        "length": agg(stats.chars),
        "words": agg(stats.words),
        "classes": [{
            "class": c.name,
            "total": c.count,
            "percent": round(c.percent, 2),
            "length": agg(c.chars),
            "words": agg(c.words),
        } for c in stats.per_class],
    })
