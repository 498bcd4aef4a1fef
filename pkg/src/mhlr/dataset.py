"""Multiview datasets: validation, CSV/JSON manifest I/O, label masking and
synthetic generators."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset inputs."""


class RowCountMismatchError(DatasetError):
    pass


class NonFiniteValueError(DatasetError):
    def __init__(self, view: int, row: int, column: int, source: str | None = None):
        self.view, self.row, self.column = view, row, column
        where = f" in {source}" if source else ""
        super().__init__(
            f"non-finite value at (view={view},row={row},column={column}){where}"
        )


class LabelMaskError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class MultiviewDataset:
    """V feature views over the same n examples, plus labels and a labeled mask.

    Labels at unlabeled positions are kept as ground truth for evaluation;
    training code must only read ``labels[labeled_mask]``.
    """

    views: tuple[np.ndarray, ...]
    labels: np.ndarray
    labeled_mask: np.ndarray
    class_names: tuple[str, ...] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.views) < 1:
            raise DatasetError("a dataset needs at least one view")
        views = []
        for k, X in enumerate(self.views):
            X = np.array(X, dtype=np.float64)
            if X.ndim == 1:
                X = X[:, None]
            if X.ndim != 2:
                raise DatasetError(f"view {k} must be a 2-D matrix, got ndim={X.ndim}")
            bad = np.argwhere(~np.isfinite(X))
            if len(bad):
                raise NonFiniteValueError(k, int(bad[0, 0]), int(bad[0, 1]))
            X.flags.writeable = False
            views.append(X)
        n = views[0].shape[0]
        if n < 1:
            raise DatasetError("a dataset needs at least one example")
        for k, X in enumerate(views):
            if X.shape[0] != n:
                raise RowCountMismatchError(
                    f"view {k} has {X.shape[0]} rows, view 0 has {n}"
                )
        labels = np.array(self.labels).reshape(-1)
        if labels.shape[0] != n:
            raise RowCountMismatchError(f"{labels.shape[0]} labels for {n} examples")
        if labels.dtype.kind not in "iu":
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise DatasetError("labels must be integer class identifiers")
            labels = as_int
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise DatasetError("labels must be nonnegative integers")
        mask = np.array(self.labeled_mask).reshape(-1)
        if mask.shape[0] != n:
            raise RowCountMismatchError(f"mask has {mask.shape[0]} entries for {n} examples")
        if mask.dtype != bool:
            if not np.all(np.isin(mask, (0, 1))):
                raise DatasetError("mask entries must be 0 or 1")
            mask = mask.astype(bool)
        if not mask.any():
            raise LabelMaskError("at least one example must be labeled")
        labels.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "views", tuple(views))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "labeled_mask", mask)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def n(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    def with_mask(self, mask: np.ndarray) -> "MultiviewDataset":
        return replace(self, labeled_mask=np.asarray(mask, dtype=bool))

    def subset(self, rows: Sequence[int]) -> "MultiviewDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return MultiviewDataset(
            views=tuple(X[rows] for X in self.views),
            labels=self.labels[rows],
            labeled_mask=self.labeled_mask[rows],
            class_names=self.class_names,
        )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _read_matrix_csv(path: str, view: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for r, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                values = [float(c) for c in rec]
            except ValueError as exc:
                raise DatasetError(f"{path}: row {r} does not parse: {exc}") from None
            for c, v in enumerate(values):
                if not math.isfinite(v):
                    raise NonFiniteValueError(view, r, c, path)
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DatasetError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def _read_int_column(path: str) -> np.ndarray:
    values = []
    with open(path, newline="") as fh:
        for r, rec in enumerate(csv.reader(fh)):
            if not rec or not rec[0].strip():
                continue
            try:
                values.append(int(rec[0]))
            except ValueError:
                raise DatasetError(f"{path}: line {r} is not an integer: {rec[0]!r}") from None
    return np.array(values, dtype=np.int64)


def load_dataset(manifest_path: str) -> MultiviewDataset:
    """Load a dataset from a JSON manifest.

    The manifest holds ``views`` (list of CSV paths), ``labels`` (CSV path),
    optional ``mask`` and ``class_names``. Relative paths resolve against the
    manifest's directory. Without a mask every example is labeled.
    """
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{manifest_path}: invalid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise DatasetError(f"{manifest_path}: manifest must be a JSON object")
    unknown = set(manifest) - {"views", "labels", "mask", "class_names", "metadata"}
    if unknown:
        raise DatasetError(f"{manifest_path}: unknown manifest keys {sorted(unknown)}")
    if "views" not in manifest or "labels" not in manifest:
        raise DatasetError(f"{manifest_path}: manifest needs 'views' and 'labels'")
    base = os.path.dirname(os.path.abspath(manifest_path))

    def resolve(p: str) -> str:
        full = p if os.path.isabs(p) else os.path.join(base, p)
        if not os.path.isfile(full):
            raise FileNotFoundError(f"file referenced by manifest not found: {full}")
        return full

    view_paths = [resolve(p) for p in manifest["views"]]
    labels_path = resolve(manifest["labels"])
    mask_path = resolve(manifest["mask"]) if manifest.get("mask") else None

    views = [_read_matrix_csv(p, k) for k, p in enumerate(view_paths)]
    counts = [X.shape[0] for X in views]
    labels = _read_int_column(labels_path)
    mask = _read_int_column(mask_path) if mask_path else np.ones(len(labels), dtype=np.int64)
    if len(set(counts + [len(labels), len(mask)])) != 1:
        raise RowCountMismatchError(
            f"row counts disagree: views={counts}, labels={len(labels)}, mask={len(mask)}"
        )
    return MultiviewDataset(
        views=tuple(views),
        labels=labels,
        labeled_mask=mask,
        class_names=manifest.get("class_names"),
        metadata=dict(manifest.get("metadata", {})),
    )


def _format_float(x: float) -> str:
    return repr(float(x))


def save_dataset(dataset: MultiviewDataset, out_dir: str, prefix: str = "") -> str:
    """Write views, labels, mask and a manifest into ``out_dir``; return the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    view_files = []
    for k, X in enumerate(dataset.views):
        name = f"{prefix}view{k}.csv"
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in X:
                writer.writerow([_format_float(v) for v in row])
        view_files.append(name)
    labels_name, mask_name = f"{prefix}labels.csv", f"{prefix}mask.csv"
    with open(os.path.join(out_dir, labels_name), "w") as fh:
        fh.writelines(f"{int(y)}\n" for y in dataset.labels)
    with open(os.path.join(out_dir, mask_name), "w") as fh:
        fh.writelines(f"{int(m)}\n" for m in dataset.labeled_mask)
    manifest: dict[str, Any] = {"views": view_files, "labels": labels_name, "mask": mask_name}
    if dataset.class_names is not None:
        manifest["class_names"] = list(dataset.class_names)
    path = os.path.join(out_dir, f"{prefix}manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Label masking
# ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def mask_labeled_fraction(
    dataset: MultiviewDataset, fraction: float, seed: int
) -> MultiviewDataset:
    """Return a copy with ``round(fraction * n)`` examples labeled.

    Labeled examples are drawn per class with quotas proportional to class
    size (largest remainder), and every class keeps at least one labeled
    example. The original mask is ignored; all ground-truth labels are used
    for stratification.
    """
    if not 0.0 < fraction <= 1.0:
        raise LabelMaskError(f"fraction must be in (0, 1], got {fraction}")
    n = dataset.n
    total = _round_half_up(fraction * n)
    classes, counts = np.unique(dataset.labels, return_counts=True)
    if total < len(classes):
        raise LabelMaskError(
            f"fraction {fraction} labels {total} of {n} examples, fewer than the "
            f"{len(classes)} classes; some class would have no labeled example"
        )
    if total >= n:
        return dataset.with_mask(np.ones(n, dtype=bool))

    exact = fraction * counts
    quota = np.maximum(np.floor(exact).astype(np.int64), 1)
    quota = np.minimum(quota, counts)
    remainder = exact - np.floor(exact)
    # adjust to hit the exact total, largest remainder first (ties: class order)
    while quota.sum() < total:
        room = quota < counts
        order = np.lexsort((np.arange(len(classes)), -remainder))
        k = next(i for i in order if room[i])
        quota[k] += 1
        remainder[k] = -np.inf
    while quota.sum() > total:
        shrink = quota > 1
        if not shrink.any():
            raise LabelMaskError("cannot keep one labeled example per class")
        order = np.lexsort((np.arange(len(classes)), remainder))
        k = next(i for i in order if shrink[i])
        quota[k] -= 1
        remainder[k] = np.inf

    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    for c, q in zip(classes, quota):
        members = np.flatnonzero(dataset.labels == c)
        mask[rng.choice(members, size=int(q), replace=False)] = True
    return dataset.with_mask(mask)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def _moons(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    half = n // 2
    t_outer = rng.uniform(0.0, np.pi, size=half)
    t_inner = rng.uniform(0.0, np.pi, size=half)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    X = np.vstack([outer, inner])
    y = np.repeat([0, 1], half)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def quadratic_lift(X: np.ndarray) -> np.ndarray:
    """All degree-2 monomials x_a * x_b, a <= b, of the rows of ``X``."""
    a, b = np.triu_indices(X.shape[1])
    return X[:, a] * X[:, b]


def generate_two_moons_multiview(n: int, noise: float, seed: int) -> MultiviewDataset:
    """Two interleaved half circles seen through two views.

    View 0 holds the 2-D moon coordinates plus isotropic Gaussian noise.
    View 1 holds the degree-2 monomials of the noise-free coordinates plus
    independent Gaussian noise of the same scale. Classes are balanced and
    all examples are labeled.
    """
    if n < 4 or n % 2:
        raise DatasetError(f"two-moons needs an even n >= 4, got {n}")
    if noise < 0:
        raise DatasetError(f"noise must be nonnegative, got {noise}")
    rng = np.random.default_rng(seed)
    clean, y = _moons(n, rng)
    view0 = clean + noise * rng.standard_normal(clean.shape)
    lifted = quadratic_lift(clean)
    view1 = lifted + noise * rng.standard_normal(lifted.shape)
    return MultiviewDataset(
        views=(view0, view1),
        labels=y,
        labeled_mask=np.ones(n, dtype=bool),
        class_names=("upper", "lower"),
    )


def generate_planar_embedding(n: int, ambient_dim: int, seed: int) -> MultiviewDataset:
    """Points drawn uniformly from a square patch of a random 2-D affine plane.

    ``metadata`` carries ``latent`` (n x 2 plane coordinates in [-1, 1]),
    ``origin`` and ``basis`` (ambient_dim x 2, orthonormal columns) so that
    ``X = origin + latent @ basis.T``. Labels are the sign of the first
    latent coordinate; every example is labeled.
    """
    if ambient_dim < 3:
        raise DatasetError(f"ambient_dim must be >= 3, got {ambient_dim}")
    if n < 1:
        raise DatasetError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((ambient_dim, 2)))
    origin = rng.standard_normal(ambient_dim)
    latent = rng.uniform(-1.0, 1.0, size=(n, 2))
    X = origin + latent @ basis.T
    return MultiviewDataset(
        views=(X,),
        labels=(latent[:, 0] > 0).astype(np.int64),
        labeled_mask=np.ones(n, dtype=bool),
        metadata={"latent": latent, "origin": origin, "basis": basis},
    )
