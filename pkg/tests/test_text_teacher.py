"""Text teacher: backend registry, head compatibility, fine-tuning."""
import numpy as np
import pytest

from mtkd.backends import (ToyDeterministicEncoder, available_backends,
                           register_backend, resolve_backend)
from mtkd.corpus import Dataset, FixedSplit, SplitIds, make_post, make_splits
from mtkd.errors import BackendFailure, IncompatibleHead, MtkdError, RangeError
from mtkd.text_teacher import (ClassifierHead, FinetuneConfig, TextTeacher,
                               build_text_teacher, finetune_teacher)
from mtkd.util import new_rng, sha256_bytes


def separable_dataset(n=20):
    rng = new_rng(17)
    pools = (["win", "sun", "good", "calm"], ["loss", "rain", "bad", "storm"])
    posts = []
    for i in range(n):
        label = i % 2
        text = " ".join(rng.choice(pools[label], size=5))
        posts.append(make_post(f"p{i}", text, label, mask=False))
    return Dataset("sep", ["c0", "c1"], posts, FixedSplit(0.8, 0.2))


def full_split(ds):
    ids = tuple(p.id for p in ds.posts)
    return SplitIds(train=ids, val=(), test=())


# ----------------------------------------------------------------------
# backends


def test_backend_determinism():
    a = ToyDeterministicEncoder(width=8)
    b = ToyDeterministicEncoder(width=8)
    s1, m1 = a.encode("hello world")
    s2, m2 = b.encode("hello world")
    assert np.array_equal(s1, s2)
    assert np.array_equal(m1, m2)
    assert m1.shape == (2, 8)
    assert np.allclose(s1, m1.mean(axis=0))


def test_backend_seed_changes_vectors():
    a = ToyDeterministicEncoder(width=8, seed=0)
    b = ToyDeterministicEncoder(width=8, seed=1)
    assert not np.allclose(a.token_vector("x"), b.token_vector("x"))


def test_registry_resolution_and_failure():
    enc = resolve_backend("toy-deterministic")
    assert enc.width == 24
    alt = resolve_backend("toy-deterministic:5")
    assert not np.allclose(enc.token_vector("w"), alt.token_vector("w"))
    for plm in ("bert-base-uncased", "roberta-base", "mentalbert",
                "clinicalbert"):
        assert plm in available_backends()
        with pytest.raises(BackendFailure):
            resolve_backend(plm)
    with pytest.raises(BackendFailure):
        resolve_backend("no-such-backend")


def test_register_custom_backend():
    register_backend("custom-toy", lambda arg=None: ToyDeterministicEncoder(
        width=8, seed=42))
    assert resolve_backend("custom-toy").width == 8


# ----------------------------------------------------------------------
# head / build


def test_head_divisibility():
    with pytest.raises(IncompatibleHead):
        build_text_teacher(ToyDeterministicEncoder(width=768),
                           ClassifierHead(n_layers=2, n_heads=5),
                           classes=["a", "b"])


def test_best_config_shapes_accepted():
    # strongest found text-teacher setting: 10 layers, 8 heads, dropout 0.01
    teacher = build_text_teacher(ToyDeterministicEncoder(width=24),
                                 ClassifierHead(n_layers=10, n_heads=8,
                                                dropout=0.01),
                                 classes=["a", "b", "c"])
    assert teacher.model.head.n_layers == 10


def test_toy_backend_predicts_distribution():
    ds = separable_dataset(6)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes)
    probs = teacher.predict_proba(ds.posts[0])
    assert probs.shape == (2,)
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.all(probs >= 0)


# ----------------------------------------------------------------------
# fine-tuning


def test_finetune_range_enforcement():
    with pytest.raises(RangeError):
        FinetuneConfig(learning_rate=0.5).validate()
    FinetuneConfig(learning_rate=0.5, allow_out_of_range=True).validate()
    with pytest.raises(RangeError):
        FinetuneConfig(epochs=9).validate()


def test_finetune_reaches_separation_within_five_epochs():
    ds = separable_dataset(20)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes, seed=1)
    cfg = FinetuneConfig(learning_rate=0.01, epochs=5, batch_size=4,
                         allow_out_of_range=True, seed=1)
    teacher, _ = finetune_teacher(teacher, ds, full_split(ds), cfg)
    preds = teacher.predict(ds.posts)
    assert preds == [p.label for p in ds.posts]
    assert teacher.frozen


def test_finetune_deterministic_checksum(tmp_path):
    ds = separable_dataset(12)
    digests = []
    for run in range(2):
        teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                     ClassifierHead(n_layers=2, n_heads=2),
                                     classes=ds.classes, seed=9)
        cfg = FinetuneConfig(learning_rate=0.01, epochs=2, batch_size=4,
                             allow_out_of_range=True, seed=9)
        teacher, _ = finetune_teacher(teacher, ds, full_split(ds), cfg)
        path = tmp_path / f"run{run}.ckpt"
        teacher.save(path)
        digests.append(sha256_bytes(path.read_bytes()))
    assert digests[0] == digests[1]


def test_frozen_teacher_refuses_retraining():
    ds = separable_dataset(8)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes)
    cfg = FinetuneConfig(learning_rate=0.01, epochs=2, batch_size=4,
                         allow_out_of_range=True)
    teacher, _ = finetune_teacher(teacher, ds, full_split(ds), cfg)
    with pytest.raises(MtkdError):
        finetune_teacher(teacher, ds, full_split(ds), cfg)


def test_frozen_outputs_bit_stable():
    ds = separable_dataset(8)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes)
    cfg = FinetuneConfig(learning_rate=0.01, epochs=2, batch_size=4,
                         allow_out_of_range=True)
    teacher, _ = finetune_teacher(teacher, ds, full_split(ds), cfg)
    p = ds.posts[0]
    a = teacher.predict_proba(p)
    b = teacher.predict_proba(p)
    assert np.array_equal(a, b)


def test_argmax_invariant_to_trailing_whitespace():
    ds = separable_dataset(8)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes)
    post = ds.posts[0]
    padded = make_post(post.id, post.text + "   ", post.label, mask=False)
    assert np.argmax(teacher.predict_proba(post)) == \
        np.argmax(teacher.predict_proba(padded))


def test_checkpoint_roundtrip_preserves_predictions(tmp_path):
    ds = separable_dataset(10)
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes, seed=3)
    cfg = FinetuneConfig(learning_rate=0.01, epochs=2, batch_size=4,
                         allow_out_of_range=True, seed=3)
    teacher, report = finetune_teacher(teacher, ds, full_split(ds), cfg)
    path = tmp_path / "text.ckpt"
    teacher.save(path)
    again = TextTeacher.load(path)
    assert again.frozen
    for p in ds.posts:
        assert np.allclose(teacher.predict_proba(p), again.predict_proba(p),
                           atol=1e-12)


def test_validation_metrics_returned():
    ds = separable_dataset(20)
    plan = make_splits(
        Dataset(ds.name, ds.classes, ds.posts, FixedSplit(0.8, 0.2)), seed=2)
    split = plan.folds[0]
    teacher = build_text_teacher(ToyDeterministicEncoder(width=16),
                                 ClassifierHead(n_layers=2, n_heads=2),
                                 classes=ds.classes, seed=5)
    cfg = FinetuneConfig(learning_rate=0.01, epochs=5, batch_size=4,
                         allow_out_of_range=True, seed=5)
    _, report = finetune_teacher(teacher, ds, split, cfg)
    assert 0.0 <= report.accuracy <= 1.0
    assert set(report.per_class_f1) == set(ds.classes)
