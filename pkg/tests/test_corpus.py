"""Ingestion, masking, split planning, and statistics."""
import json

import numpy as np
import pytest

from mtkd.corpus import (Dataset, FixedSplit, KFold, compute_stats,
                         deidentify, load_dataset, load_split_plan,
                         make_post, make_splits, parse_protocol,
                         save_dataset, save_split_plan, write_stats_report)
from mtkd.errors import (EmptyDataset, InfeasibleStratification, MissingField,
                         UnknownLabel)
from mtkd.util import new_rng


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def balanced_records(n, classes):
    return [{"id": f"p{i}", "text": f"text number {i} about topic",
             "label": classes[i % len(classes)]} for i in range(n)]


# ----------------------------------------------------------------------
# deidentify


@pytest.mark.parametrize("raw,masked", [
    ("@bob see http://a.b/x", "_USER_ see _URL_"),
    ("no handles here", "no handles here"),
    ("mail me a@b.com", "mail me a@b.com"),  # bare e-mail is not a handle
    ("www.example.com and @x_1", "_URL_ and _USER_"),
    ("ftp://host/file ok", "_URL_ ok"),
])
def test_deidentify_cases(raw, masked):
    assert deidentify(raw) == masked


def test_deidentify_idempotent_and_token_preserving():
    rng = new_rng(42)
    pieces = ["@user1", "hello", "http://x.y", "a@b.c", "@@", "w.w", ":)",
              "www.z.org", "plain", "@ok", "…", "über"]
    for _ in range(300):
        text = "  ".join(rng.choice(pieces, size=rng.integers(1, 8)))
        once = deidentify(text)
        assert deidentify(once) == once
        assert len(once.split()) == len(text.split())


def test_deidentify_preserves_whitespace_shape():
    text = "@a  two\tspaces\nnewline http://u"
    out = deidentify(text)
    assert out == "_USER_  two\tspaces\nnewline _URL_"


# ----------------------------------------------------------------------
# load_dataset


def test_load_dataset_twitsuicide_shape(tmp_path):
    classes = ["SI", "PC", "SC"]
    counts = {"SI": 103, "PC": 264, "SC": 293}
    records = []
    i = 0
    for cname, n in counts.items():
        for _ in range(n):
            records.append({"id": f"t{i}", "text": f"post {i}", "label": cname})
            i += 1
    path = tmp_path / "twit.jsonl"
    write_jsonl(path, records)
    ds = load_dataset(path, name="twit-fixture", protocol="kfold:10",
                      classes=classes)
    assert len(ds.posts) == 660
    assert ds.classes == classes


def test_load_dataset_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(EmptyDataset):
        load_dataset(path, protocol="fixed:0.8/0.2")


def test_load_dataset_unknown_label(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_jsonl(path, [{"id": "1", "text": "x", "label": "SEVERE+"}])
    with pytest.raises(UnknownLabel):
        load_dataset(path, classes=["ND", "MI", "MO", "SE"],
                     protocol="fixed:0.8/0.2")


def test_load_dataset_missing_field(tmp_path):
    path = tmp_path / "missing.jsonl"
    write_jsonl(path, [{"id": "1", "label": "a"}])
    with pytest.raises(MissingField):
        load_dataset(path, classes=["a", "b"], protocol="fixed:0.8/0.2")


def test_load_dataset_sidecar_manifest(tmp_path):
    path = tmp_path / "data.jsonl"
    write_jsonl(path, balanced_records(6, ["x", "y"]))
    (tmp_path / "data.jsonl.manifest.json").write_text(json.dumps(
        {"name": "demo", "classes": ["y", "x"],
         "protocol": {"kind": "kfold", "k": 3}}))
    ds = load_dataset(path)
    assert ds.name == "demo"
    assert ds.classes == ["y", "x"]
    assert ds.protocol == KFold(3)


def test_save_load_roundtrip(tmp_path):
    path = tmp_path / "ds.jsonl"
    write_jsonl(path, balanced_records(8, ["a", "b"]))
    ds = load_dataset(path, name="rt", protocol="fixed:0.8/0.2",
                      classes=["a", "b"])
    out = tmp_path / "copy.jsonl"
    save_dataset(ds, out)
    again = load_dataset(out)
    assert again.fingerprint() == ds.fingerprint()


def test_masking_applied_on_load(tmp_path):
    path = tmp_path / "m.jsonl"
    write_jsonl(path, [{"id": "1", "text": "@bob hi", "label": "a"},
                       {"id": "2", "text": "ok then", "label": "b"}])
    ds = load_dataset(path, classes=["a", "b"], protocol="fixed:0.5/0.5")
    assert ds.post("1").text == "_USER_ hi"


# ----------------------------------------------------------------------
# splits


def make_dataset(n=40, n_classes=2, protocol=KFold(10)):
    posts = [make_post(f"p{i}", f"text {i}", i % n_classes, mask=False)
             for i in range(n)]
    return Dataset(name="toy", classes=[f"c{j}" for j in range(n_classes)],
                   posts=posts, protocol=protocol)


def test_kfold_stratified_sizes():
    ds = make_dataset(40, 2, KFold(10))
    plan = make_splits(ds, seed=7)
    assert len(plan.folds) == 10
    for fold in plan.folds:
        assert len(fold.test) == 4
        labels = [ds.post(pid).label for pid in fold.test]
        assert labels.count(0) == 2 and labels.count(1) == 2
        combined = set(fold.train) | set(fold.val) | set(fold.test)
        assert len(combined) == 40  # disjoint and covering
        assert not (set(fold.train) & set(fold.val))
        assert not (set(fold.train) & set(fold.test))
        assert not (set(fold.val) & set(fold.test))


def test_kfold_test_sets_partition_ids():
    ds = make_dataset(30, 3, KFold(5))
    plan = make_splits(ds, seed=3)
    seen = [pid for fold in plan.folds for pid in fold.test]
    assert sorted(seen) == sorted(p.id for p in ds.posts)
    assert len(seen) == len(set(seen))


def test_split_determinism():
    ds = make_dataset(40, 2, KFold(10))
    assert make_splits(ds, seed=7) == make_splits(ds, seed=7)
    assert make_splits(ds, seed=7) != make_splits(ds, seed=8)


def test_kfold_infeasible():
    ds = make_dataset(9, 1 + 8, KFold(10))  # every class has 1 sample
    with pytest.raises(InfeasibleStratification):
        make_splits(ds, seed=0)


def test_fixed_split_fractions_and_val_carve():
    ds = make_dataset(100, 2, FixedSplit(0.8, 0.2))
    plan = make_splits(ds, seed=5)
    (fold,) = plan.folds
    assert len(fold.test) == 20
    # validation carved as 10% of the 80-post training portion
    assert len(fold.val) == 8
    assert len(fold.train) == 72
    labels = [ds.post(pid).label for pid in fold.test]
    assert labels.count(0) == 10


def test_fixed_split_declared_val():
    ds = make_dataset(100, 2, FixedSplit(0.6, 0.2, val=0.2))
    (fold,) = make_splits(ds, seed=5).folds
    assert (len(fold.train), len(fold.val), len(fold.test)) == (60, 20, 20)


def test_split_plan_roundtrip(tmp_path):
    ds = make_dataset(20, 2, KFold(5))
    plan = make_splits(ds, seed=2)
    save_split_plan(plan, tmp_path / "plan.json")
    assert load_split_plan(tmp_path / "plan.json") == plan


def test_parse_protocol_strings():
    assert parse_protocol("kfold:10") == KFold(10)
    assert parse_protocol("fixed:0.8/0.2") == FixedSplit(0.8, 0.2)
    assert parse_protocol("fixed:0.6/0.2/0.2") == FixedSplit(0.6, 0.2, 0.2)
    with pytest.raises(ValueError):
        parse_protocol("bogus")


# ----------------------------------------------------------------------
# statistics


def test_stats_symmetric_two_classes():
    ds = make_dataset(4, 2, FixedSplit(0.5, 0.5))
    stats = compute_stats(ds)
    assert [c.percent for c in stats.per_class] == [50.0, 50.0]


def test_stats_twitsuicide_percentages():
    posts = []
    for cname, count in (("SI", 103), ("PC", 264), ("SC", 293)):
        for i in range(count):
            posts.append(make_post(f"{cname}{i}", "w " * 5,
                                   {"SI": 0, "PC": 1, "SC": 2}[cname],
                                   mask=False))
    ds = Dataset("twit", ["SI", "PC", "SC"], posts, KFold(10))
    stats = compute_stats(ds)
    assert [round(c.percent, 2) for c in stats.per_class] == [15.61, 40.0, 44.39]
    assert sum(c.count for c in stats.per_class) == stats.total == 660
    assert sum(c.percent for c in stats.per_class) == pytest.approx(100.0, abs=0.01)


def test_stats_word_count_aggregates():
    posts = [make_post("a", "x " * 3, 0, mask=False),
             make_post("b", "y " * 31, 1, mask=False)]
    ds = Dataset("w", ["c0", "c1"], posts, FixedSplit(0.5, 0.5))
    stats = compute_stats(ds)
    assert stats.words.min == 3
    assert stats.words.max == 31
    assert stats.words.avg == pytest.approx(17.0)


def test_stats_invariant_under_reordering():
    ds = make_dataset(17, 3, KFold(3))
    forward = compute_stats(ds)
    ds_rev = Dataset(ds.name, ds.classes, list(reversed(ds.posts)), ds.protocol)
    backward = compute_stats(ds_rev)
    assert [c.count for c in forward.per_class] == \
        [c.count for c in backward.per_class]
    assert forward.chars == backward.chars


def test_char_length_counts_code_points():
    post = make_post("e", "hi 😀", 0, mask=False)
    assert post.char_length == 4  # emoji is one code point


def test_stats_report_file(tmp_path):
    ds = make_dataset(10, 2, FixedSplit(0.8, 0.2))
    stats = compute_stats(ds)
    path = tmp_path / "stats.json"
    write_stats_report(ds, stats, path)
    raw = json.loads(path.read_text())
    assert raw["total_samples"] == 10
    assert raw["num_classes"] == 2
    assert {c["class"] for c in raw["classes"]} == {"c0", "c1"}
    assert raw["evaluation"] == "fixed:0.8/0.2"
