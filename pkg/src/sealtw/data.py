"""Synthetic hierarchical datasets and CSV ingestion."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np


class CsvFormatError(ValueError):
    """Structural problem with a CSV file (empty, no label column)."""


class CsvParseError(ValueError):
    """A cell that could not be parsed; carries its line and column."""

    def __init__(self, message, line, column):
        super().__init__(message)
        self.line = line
        self.column = column


class Split(NamedTuple):
    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian classes grouped into well-separated superclusters.

    ``separation`` is the minimum distance between supercluster centers;
    class centers sit at distance ``class_offset`` from their supercluster
    center and samples are isotropic Gaussians with std ``sigma_class``.
    """

    num_superclusters: int = 2
    classes_per_cluster: int = 3
    feature_dim: int = 8
    sigma_class: float = 1.0
    separation: float = 10.0
    class_offset: float = 2.5
    samples_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0

    def errors(self):
        errs = []
        for name in ("num_superclusters", "classes_per_cluster", "feature_dim",
                     "samples_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be positive")
        if self.sigma_class < 0:
            errs.append("sigma_class must be nonnegative")
        if self.separation <= 0:
            errs.append("separation must be positive")
        return errs

    @property
    def well_separated(self):
        return self.separation > self.sigma_class

    @property
    def num_classes(self):
        return self.num_superclusters * self.classes_per_cluster


@dataclass(frozen=True, eq=False)
class SplitDataset:
    labeled: Split
    unlabeled: Split
    test: Split
    class_names: tuple
    superclusters: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def feature_dim(self):
        return self.labeled.X.shape[1]


def _empty(d):
    return Split(np.zeros((0, d)), np.zeros(0, dtype=np.int64))


def _spread_centers(n, d, dist, rng):
    # random directions scaled so that every pair is at least ``dist`` apart
    for _ in range(1000):
        C = rng.standard_normal((n, d))
        if n == 1:
            return np.zeros((1, d))
        gaps = np.linalg.norm(C[:, None] - C[None, :], axis=-1)
        gaps = gaps[~np.eye(n, dtype=bool)]
        if gaps.min() > 1e-6:
            return C * (dist / gaps.min())
    raise RuntimeError("could not place supercluster centers")


def generate(spec):
    """Draw a dataset; all training samples start out labeled (see :func:`split_labeled`)."""
    errs = spec.errors()
    if errs:
        raise ValueError("; ".join(errs))
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    super_centers = _spread_centers(spec.num_superclusters, d, spec.separation, rng)
    centers, supers = [], []
    for g in range(spec.num_superclusters):
        for _ in range(spec.classes_per_cluster):
            u = rng.standard_normal(d)
            centers.append(super_centers[g] + spec.class_offset * u / np.linalg.norm(u))
            supers.append(g)
    centers = np.array(centers)

    def draw(per_class):
        X = np.concatenate([
            c + spec.sigma_class * rng.standard_normal((per_class, d)) for c in centers
        ])
        y = np.repeat(np.arange(len(centers)), per_class)
        return Split(X, y)

    train = draw(spec.samples_per_class)
    test = draw(spec.test_per_class)
    return SplitDataset(
        labeled=train,
        unlabeled=_empty(d),
        test=test,
        class_names=tuple(f"class_{c}" for c in range(len(centers))),
        superclusters=np.array(supers),
        meta={"synthetic_spec": asdict(spec), "class_centers": centers.tolist()},
    )


def split_labeled(dataset, labels_per_class, seed=0):
    """Keep ``labels_per_class`` labeled samples per class; the rest become unlabeled.

    The pool is the union of the current labeled and unlabeled sets. Unlabeled
    samples keep their true labels in ``unlabeled.y`` for diagnostics only.
    """
    X = np.concatenate([dataset.labeled.X, dataset.unlabeled.X])
    y = np.concatenate([dataset.labeled.y, dataset.unlabeled.y])
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(y == c)
        if labels_per_class > idx.size:
            raise ValueError(f"class {c} has {idx.size} samples, cannot label {labels_per_class}")
        keep.append(rng.choice(idx, size=labels_per_class, replace=False))
    keep = np.sort(np.concatenate(keep))
    mask = np.zeros(y.size, dtype=bool)
    mask[keep] = True
    return replace(
        dataset,
        labeled=Split(X[mask], y[mask]),
        unlabeled=Split(X[~mask], y[~mask]),
        meta={**dataset.meta, "labels_per_class": labels_per_class, "split_seed": seed},
    )


def write_csv(path, X, y, class_names=None):
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feature_{i}" for i in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, y):
            name = class_names[lab] if class_names is not None else lab
            writer.writerow([repr(float(v)) for v in row] + [name])


def read_csv(path, require_label=True):
    """Parse a feature CSV into ``(X, labels, feature_names)``.

    ``labels`` holds the raw label strings (or ``None`` when the file has no
    label column and ``require_label`` is false).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise CsvFormatError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if "label" in header:
        label_col = header.index("label")
    elif require_label:
        raise CsvFormatError(f"{path}: no 'label' column in header")
    else:
        label_col = None
    feat_cols = [i for i in range(len(header)) if i != label_col]
    X, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CsvParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}",
                                lineno, None)
        vals = []
        for i in feat_cols:
            try:
                vals.append(float(row[i]))
            except ValueError:
                raise CsvParseError(
                    f"{path}:{lineno}: column {header[i]!r} has non-numeric value {row[i]!r}",
                    lineno, header[i]) from None
        X.append(vals)
        if label_col is not None:
            labels.append(row[label_col].strip())
    X = np.array(X, dtype=np.float64).reshape(len(X), len(feat_cols))
    return X, (labels if label_col is not None else None), [header[i] for i in feat_cols]


def index_labels(labels, names=None):
    """Map label strings to indices in order of first appearance (after ``names``)."""
    names = list(names or [])
    lookup = {n: i for i, n in enumerate(names)}
    out = []
    for lab in labels:
        if lab not in lookup:
            lookup[lab] = len(names)
            names.append(lab)
        out.append(lookup[lab])
    return np.array(out, dtype=np.int64), tuple(names)


def load_csv(path, test_path=None):
    """Load a labeled CSV (and optionally a test CSV) into a :class:`SplitDataset`."""
    X, labels, _ = read_csv(path)
    y, names = index_labels(labels)
    if test_path is not None:
        Xt, tl, _ = read_csv(test_path)
        if Xt.shape[1] != X.shape[1]:
            raise CsvFormatError(f"{test_path}: {Xt.shape[1]} features, expected {X.shape[1]}")
        yt, names = index_labels(tl, names)
        test = Split(Xt, yt)
    else:
        test = _empty(X.shape[1])
    return SplitDataset(labeled=Split(X, y), unlabeled=_empty(X.shape[1]), test=test,
                        class_names=names, meta={"source": str(path)})


def save_dataset(dataset, out_dir):
    """Write train/unlabeled/test CSVs plus a JSON manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "train.csv", *dataset.labeled, dataset.class_names)
    write_csv(out / "test.csv", *dataset.test, dataset.class_names)
    if len(dataset.unlabeled.X):
        write_csv(out / "unlabeled.csv", *dataset.unlabeled, dataset.class_names)
    manifest = {
        "class_names": list(dataset.class_names),
        "superclusters": None if dataset.superclusters is None else dataset.superclusters.tolist(),
        **{k: v for k, v in dataset.meta.items() if k != "class_centers"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out
