"""Average precision, mAP and the labeled-fraction sweep."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import MultiviewDataset, mask_labeled_fraction
from .model import (
    MethodSpec,
    MulticlassModel,
    build_matrices,
    predict_proba_ovr,
    train_one_vs_rest,
)

DEFAULT_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 1.0)
CSV_COLUMNS = ("method", "fraction", "seed", "class", "ap", "map", "accuracy")
SUMMARY_CLASS = "ALL"


class EvaluationError(ValueError):
    pass


def ranking(scores) -> np.ndarray:
    """Indices by descending score; ties keep ascending original index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores must be finite")
    return np.lexsort((np.arange(scores.size), -scores))


def average_precision(scores, relevance) -> float:
    """Non-interpolated AP: mean over relevant items of the precision at
    their rank. Accumulated in exact rationals, so the returned float is the
    correctly rounded value."""
    rel = np.asarray(relevance, dtype=bool).reshape(-1)
    if rel.size != np.size(scores):
        raise EvaluationError("scores and relevance differ in length")
    n_rel = int(rel.sum())
    if n_rel == 0:
        raise EvaluationError("average precision needs at least one relevant item")
    hits = 0
    total = Fraction(0)
    for rank, idx in enumerate(ranking(scores), start=1):
        if rel[idx]:
            hits += 1
            total += Fraction(hits, rank)
    return float(total / n_rel)


def mean_average_precision(aps: Mapping[object, float] | Iterable[float]) -> float:
    values = list(aps.values()) if isinstance(aps, Mapping) else list(aps)
    if not values:
        raise EvaluationError("mAP needs at least one class")
    return float(np.mean(values))


@dataclass
class EvalReport:
    method: str
    fraction: float
    seed: int
    per_class_ap: dict[int, float]
    map: float
    accuracy: float


def evaluate(
    model: MulticlassModel,
    test: MultiviewDataset,
    method: str = "",
    fraction: float | None = None,
    seed: int = 0,
) -> EvalReport:
    """Score ``test`` with every one-vs-rest binary; AP per class from the
    binary's probabilities, accuracy from the arg-max class. Classes absent
    from the test labels get no AP entry."""
    scores = predict_proba_ovr(model, test.views)
    per_class = {}
    for j, c in enumerate(model.classes):
        rel = test.labels == c
        if rel.any():
            per_class[c] = average_precision(scores[:, j], rel)
    if not per_class:
        raise EvaluationError("no test example belongs to a trained class")
    pred = np.asarray(model.classes)[np.argmax(scores, axis=1)]
    return EvalReport(
        method=method or model.method.label,
        fraction=model.labeled_fraction if fraction is None else fraction,
        seed=seed,
        per_class_ap=per_class,
        map=mean_average_precision(per_class),
        accuracy=float(np.mean(pred == test.labels)),
    )


def fraction_sweep(
    dataset: MultiviewDataset,
    test_set: MultiviewDataset,
    methods: Mapping[str, MethodSpec] | Sequence[MethodSpec],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seeds: Sequence[int] = (0,),
) -> list[EvalReport]:
    """Train and score every (method, fraction, seed) cell.

    The labeled mask depends only on (fraction, seed), so methods are
    compared on identical labels. Reports come back sorted by method name,
    fraction, seed.
    """
    if not isinstance(methods, Mapping):
        methods = {m.label: m for m in methods}
    if not methods or not seeds or not fractions:
        raise EvaluationError("methods, fractions and seeds must be nonempty")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise EvaluationError(f"fraction {f} outside (0, 1]")
    reports = []
    for f in sorted(fractions):
        for seed in sorted(seeds):
            masked = mask_labeled_fraction(dataset, f, seed)
            for name, spec in methods.items():
                model = train_one_vs_rest(masked, spec)
                reports.append(evaluate(model, test_set, name, f, seed))
    reports.sort(key=lambda r: (r.method, r.fraction, r.seed))
    return reports


def _fmt(x: float) -> str:
    return repr(float(x))


def report_rows(reports: Sequence[EvalReport]) -> list[list[str]]:
    """One row per class, then a summary row (class ``ALL``, ap = mAP) per report."""
    rows = []
    for r in reports:
        common = [r.method, _fmt(r.fraction), str(r.seed)]
        for c in sorted(r.per_class_ap):
            rows.append(common + [str(c), _fmt(r.per_class_ap[c]), _fmt(r.map), _fmt(r.accuracy)])
        rows.append(common + [SUMMARY_CLASS, _fmt(r.map), _fmt(r.map), _fmt(r.accuracy)])
    return rows


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(report_rows(reports))
    return buf.getvalue()


def write_reports_csv(reports: Sequence[EvalReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_to_csv(reports))


CANDIDATE_GRID = tuple(10.0**e for e in range(-8, 3))


@dataclass
class GridResult:
    spec: MethodSpec
    gamma_K: float
    gamma_I: float
    map: float
    accuracy: float
    scores: dict[tuple[float, float], tuple[float, float]]


def grid_search(
    train: MultiviewDataset,
    validation: MultiviewDataset,
    spec: MethodSpec,
    gamma_K_grid: Sequence[float] = CANDIDATE_GRID,
    gamma_I_grid: Sequence[float] = CANDIDATE_GRID,
) -> GridResult:
    """Pick (gamma_K, gamma_I) by validation mAP, then accuracy; remaining
    ties go to the earliest grid point. Methods without a manifold term
    only search gamma_K. Training matrices are built once."""
    if not gamma_K_grid or not gamma_I_grid:
        raise EvaluationError("grids must be nonempty")
    if spec.regularizer == "none":
        gamma_I_grid = (0.0,)
    # gamma_I > 0 so the regularizer matrices get built
    matrices = build_matrices(train, replace(spec, hyper=replace(spec.hyper, gamma_I=1.0)))
    scores = {}
    best = None
    for gK in gamma_K_grid:
        for gI in gamma_I_grid:
            candidate = replace(spec, hyper=replace(spec.hyper, gamma_K=gK, gamma_I=gI))
            model = train_one_vs_rest(train, candidate, matrices=matrices)
            r = evaluate(model, validation)
            scores[(gK, gI)] = (r.map, r.accuracy)
            if best is None or (r.map, r.accuracy) > best[0]:
                best = ((r.map, r.accuracy), candidate, gK, gI)
    (m, acc), chosen, gK, gI = best
    return GridResult(chosen, gK, gI, m, acc, scores)
