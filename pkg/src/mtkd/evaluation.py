"""Classification metrics, cross-validation, PCA analysis, result tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientSamples, LengthMismatch, StageError
from .serialize import write_json
from .util import new_rng


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple[str, ...]
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class_f1: dict[str, float]
    confusion: tuple[tuple[int, ...], ...]  # rows: true class, cols: predicted
    support: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": dict(self.per_class_f1),
            "confusion": [list(row) for row in self.confusion],
            "support": list(self.support),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        return cls(classes=tuple(raw["classes"]),
                   accuracy=raw["accuracy"], macro_f1=raw["macro_f1"],
                   weighted_f1=raw["weighted_f1"],
                   per_class_f1=dict(raw["per_class_f1"]),
                   confusion=tuple(tuple(r) for r in raw["confusion"]),
                   support=tuple(raw["support"]))


def confusion_metrics(y_true, y_pred, classes) -> MetricsReport:
    """Accuracy, macro/weighted/per-class F1 from paired label sequences.

    Per-class F1 is 2PR/(P+R), defined as 0 when P+R is 0; the macro
    mean runs over every declared class, including ones absent from both
    label sequences.
    """
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true vs {len(y_pred)} predicted")
    n_cls = len(classes)
    for y in (*y_true, *y_pred):
        if not 0 <= y < n_cls:
            raise ValueError(f"label {y} out of range for {n_cls} classes")
    confusion = np.zeros((n_cls, n_cls), dtype=int)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    support = confusion.sum(axis=1)
    f1 = np.zeros(n_cls)
    for c in range(n_cls):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = support[c] - tp
        denom = 2 * tp + fp + fn  # == P+R rescaled; 2PR/(P+R) = 2tp/denom
        f1[c] = 2 * tp / denom if denom > 0 else 0.0
    total = len(y_true)
    return MetricsReport(
        classes=tuple(classes),
        accuracy=float(np.trace(confusion) / total) if total else 0.0,
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / support.sum()) if total else 0.0,
        per_class_f1={classes[c]: float(f1[c]) for c in range(n_cls)},
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        support=tuple(int(s) for s in support))


# ----------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CrossValidationResult:
    pooled: MetricsReport
    per_fold: tuple[MetricsReport, ...]
    predictions: dict[str, int]  # post id -> predicted label


def cross_validate(pipeline_factory, dataset, plan) -> CrossValidationResult:
    """Train a fresh pipeline per fold and score the pooled test predictions.

    ``pipeline_factory(fold_index)`` must return an object with
    ``fit(dataset, split)`` and ``predict(posts) -> labels``. Each post
    is predicted exactly once across folds; the pooled report is the
    primary aggregate, with per-fold reports alongside.
    """
    pooled_true: list[int] = []
    pooled_pred: list[int] = []
    predictions: dict[str, int] = {}
    per_fold = []
    for i, split in enumerate(plan.folds):
        try:
            pipeline = pipeline_factory(i)
            pipeline.fit(dataset, split)
            posts = [dataset.post(pid) for pid in split.test]
            preds = list(pipeline.predict(posts))
        except Exception as exc:
            raise StageError(f"fold-{i}", str(exc)) from exc
        truth = [p.label for p in posts]
        for pid, pred in zip(split.test, preds):
            if pid in predictions:
                raise ValueError(f"post {pid!r} appears in two test folds")
            predictions[pid] = int(pred)
        pooled_true.extend(truth)
        pooled_pred.extend(int(p) for p in preds)
        per_fold.append(confusion_metrics(truth, preds, dataset.classes))
    pooled = confusion_metrics(pooled_true, pooled_pred, dataset.classes)
    return CrossValidationResult(pooled=pooled, per_fold=tuple(per_fold),
                                 predictions=predictions)


# ----------------------------------------------------------------------
# PCA over spectrograms


@dataclass(frozen=True)
class PcaSample:
    post_id: str
    spectrogram: np.ndarray  # (frames, mel bins)
    class_name: str
    duration_s: float


@dataclass(frozen=True)
class PcaProjection:
    bin_label: str
    post_ids: tuple[str, ...]
    class_names: tuple[str, ...]
    durations: tuple[float, ...]
    coords: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, features)
    explained_variance: tuple[float, float]


DURATION_BINS = (("0-10s", 0.0, 10.0), ("10-25s", 10.0, 25.0))


def _pca_two(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    # deterministic sign: largest-magnitude loading is positive
    for row in comps:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    coords = centered @ comps.T
    var = (s[:2] ** 2) / max(len(matrix) - 1, 1)
    if len(var) < 2:
        var = np.pad(var, (0, 2 - len(var)))
    return coords, comps, var


def pca_spectrograms(samples: list[PcaSample], n_per_group: int = 10,
                     seed: int = 0, out_dir=None) -> list[PcaProjection]:
    """Two-component PCA of flattened spectrograms per duration bin.

    Within each bin, ``n_per_group`` samples per class are drawn with a
    seeded RNG, zero-padded to the bin's maximum frame count, flattened,
    and centered. Optionally writes a scatter plot (post ids annotated)
    and a coordinates sidecar per bin into ``out_dir``.
    """
    rng = new_rng(seed)
    class_names = sorted({s.class_name for s in samples})
    projections = []
    for label, lo, hi in DURATION_BINS:
        in_bin = [s for s in samples if lo < s.duration_s <= hi]
        if not in_bin:
            continue
        chosen: list[PcaSample] = []
        for cname in class_names:
            group = [s for s in in_bin if s.class_name == cname]
            if len(group) < n_per_group:
                raise InsufficientSamples(
                    f"bin {label} class {cname!r}: {len(group)} < {n_per_group}")
            idx = rng.choice(len(group), size=n_per_group, replace=False)
            chosen.extend(group[i] for i in sorted(idx))
        max_frames = max(s.spectrogram.shape[0] for s in chosen)
        rows = []
        for s in chosen:
            padded = np.zeros((max_frames, s.spectrogram.shape[1]))
            padded[: s.spectrogram.shape[0]] = s.spectrogram
            rows.append(padded.ravel())
        coords, comps, var = _pca_two(np.stack(rows))
        proj = PcaProjection(
            bin_label=label,
            post_ids=tuple(s.post_id for s in chosen),
            class_names=tuple(s.class_name for s in chosen),
            durations=tuple(s.duration_s for s in chosen),
            coords=coords, components=comps,
            explained_variance=(float(var[0]), float(var[1])))
        projections.append(proj)
        if out_dir is not None:
            _emit_pca_artifacts(proj, Path(out_dir))
    return projections


def _emit_pca_artifacts(proj: PcaProjection, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"pca_{proj.bin_label.replace('-', '_')}"
    with open(out_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "class", "duration"])
        for pid, (x, y), cname, dur in zip(proj.post_ids, proj.coords,
                                           proj.class_names, proj.durations):
            writer.writerow([pid, f"{x:.6f}", f"{y:.6f}", cname, f"{dur:.3f}"])
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    for cname in sorted(set(proj.class_names)):
        pts = np.array([xy for xy, c in zip(proj.coords, proj.class_names)
                        if c == cname])
        ax.scatter(pts[:, 0], pts[:, 1], label=cname, s=36)
    for pid, (x, y) in zip(proj.post_ids, proj.coords):
        ax.annotate(str(pid), (x, y), fontsize=7, alpha=0.8)
    ax.set_title(f"spectrogram PCA, {proj.bin_label}")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / f"{stem}.png", dpi=120)
    plt.close(fig)


# ----------------------------------------------------------------------
# result tables


def emit_tables(reports: dict[str, MetricsReport], path=None,
                csv_path=None) -> str:
    """Aligned text table of Acc / F1m / F1w / per-class F1 per config.

    The row with the best weighted F1 gets a ``*`` marker when more than
    one report is present; class columns are the union over reports,
    blank where a report lacks the class.
    """
    if not reports:
        raise ValueError("no reports to tabulate")
    class_cols: list[str] = []
    for rep in reports.values():
        for c in rep.classes:
            if c not in class_cols:
                class_cols.append(c)
    header = ["config", "acc", "f1m", "f1w"] + [f"f1({c})" for c in class_cols]
    mark_best = len(reports) > 1
    if mark_best:
        header.append("best")
        best_key = max(reports, key=lambda k: reports[k].weighted_f1)
    rows = [header]
    for key, rep in reports.items():
        row = [key, f"{100 * rep.accuracy:.2f}", f"{100 * rep.macro_f1:.2f}",
               f"{100 * rep.weighted_f1:.2f}"]
        for c in class_cols:
            f1 = rep.per_class_f1.get(c)
            row.append("" if f1 is None else f"{100 * f1:.2f}")
        if mark_best:
            row.append("*" if key == best_key else "")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    table = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(table, encoding="utf-8")
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
    return table


def write_metrics_report(report: MetricsReport, path) -> bytes:
    return write_json(path, report.to_dict())
