"""Binary and one-vs-rest models over the method family

    VisF / TagF    single view, no manifold term
    LapVF / LapTag single view, graph Laplacian
    HesVF / HesTag single view, Hessian energy
    mCLR           views concatenated, no manifold term
    mLLR           multiview kernels + per-view Laplacians
    mHLR           multiview kernels + per-view Hessian energies

plus prediction and a checksummed, versioned file format.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import kernels, manifold
from .dataset import MultiviewDataset
from .kernels import KernelSpec
from .optimize import Hyperparams, ProblemInstance, alternate, sigmoid

logger = logging.getLogger(__name__)

REGULARIZERS = ("none", "laplacian", "hessian")
VIEW_MODES = ("multiview", "concatenated", "single")

FORMAT_MAGIC = "mhlr-model"
FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


class CorruptModelError(ModelError):
    pass


class VersionMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One member of the method family.

    ``kernels`` lists one spec per view; if shorter than the number of views
    its last entry is reused. ``single`` mode uses view ``view_index`` with
    that view's kernel; ``concatenated`` mode joins all views column-wise
    and uses ``kernels[0]``.
    """

    regularizer: str = "hessian"
    view_mode: str = "multiview"
    view_index: int = 0
    kernels: tuple[KernelSpec, ...] = (KernelSpec("rbf"),)
    k_hessian: int = 15
    k_laplacian: int = 10
    intrinsic_dim: int = 2
    laplacian_weighting: str = "heat"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    name: str = ""

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ModelError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.view_mode not in VIEW_MODES:
            raise ModelError(f"view_mode must be one of {VIEW_MODES}, got {self.view_mode!r}")
        if self.view_index < 0:
            raise ModelError("view_index must be nonnegative")
        if not self.kernels:
            raise ModelError("at least one kernel spec is required")
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if self.laplacian_weighting not in ("binary", "heat"):
            raise ModelError(f"unknown laplacian weighting {self.laplacian_weighting!r}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        mode = f"single{self.view_index}" if self.view_mode == "single" else self.view_mode
        return f"{self.regularizer}-{mode}"

    def kernel_for_view(self, k: int) -> KernelSpec:
        return self.kernels[min(k, len(self.kernels) - 1)]

    def effective_hyper(self) -> Hyperparams:
        if self.regularizer == "none" and self.hyper.gamma_I != 0:
            return replace(self.hyper, gamma_I=0.0)
        return self.hyper

    def to_dict(self) -> dict:
        return {
            "regularizer": self.regularizer,
            "view_mode": self.view_mode,
            "view_index": self.view_index,
            "kernels": [k.to_dict() for k in self.kernels],
            "k_hessian": self.k_hessian,
            "k_laplacian": self.k_laplacian,
            "intrinsic_dim": self.intrinsic_dim,
            "laplacian_weighting": self.laplacian_weighting,
            "hyper": self.hyper.to_dict(),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        d = dict(d)
        d["kernels"] = tuple(KernelSpec.from_dict(k) for k in d["kernels"])
        d["hyper"] = Hyperparams(**d["hyper"])
        return cls(**d)


def method_family(
    kernels: Sequence[KernelSpec] = (KernelSpec("rbf"),),
    hyper: Hyperparams | None = None,
    **manifold_params: Any,
) -> dict[str, MethodSpec]:
    """The nine compared methods for a two-view dataset (view 0 visual, view 1 tags)."""
    hyper = hyper or Hyperparams()
    common = dict(kernels=tuple(kernels), hyper=hyper, **manifold_params)
    table = {
        "VisF": ("none", "single", 0),
        "LapVF": ("laplacian", "single", 0),
        "HesVF": ("hessian", "single", 0),
        "TagF": ("none", "single", 1),
        "LapTag": ("laplacian", "single", 1),
        "HesTag": ("hessian", "single", 1),
        "mCLR": ("none", "concatenated", 0),
        "mLLR": ("laplacian", "multiview", 0),
        "mHLR": ("hessian", "multiview", 0),
    }
    return {
        name: MethodSpec(regularizer=r, view_mode=m, view_index=v, name=name, **common)
        for name, (r, m, v) in table.items()
    }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainingMatrices:
    """Features after the view-mode transform, resolved kernels, Gram and
    regularizer matrices; shared by all binary problems of one dataset."""

    views: tuple[np.ndarray, ...]
    kernel_specs: tuple[KernelSpec, ...]
    grams: list[np.ndarray]
    regularizers: list[np.ndarray]


def select_views(views: Sequence[np.ndarray], method: MethodSpec) -> tuple[np.ndarray, ...]:
    views = tuple(np.asarray(X, dtype=np.float64) for X in views)
    if method.view_mode == "single":
        if method.view_index >= len(views):
            raise ModelError(f"view index {method.view_index} out of range for {len(views)} views")
        return (views[method.view_index],)
    if method.view_mode == "concatenated":
        return (np.hstack(views),)
    return views


def _view_kernels(method: MethodSpec, n_views: int) -> list[KernelSpec]:
    if method.view_mode == "single":
        return [method.kernel_for_view(method.view_index)]
    if method.view_mode == "concatenated":
        return [method.kernels[0]]
    return [method.kernel_for_view(k) for k in range(n_views)]


def build_matrices(dataset: MultiviewDataset, method: MethodSpec) -> TrainingMatrices:
    views = select_views(dataset.views, method)
    specs = tuple(s.resolve(X) for s, X in zip(_view_kernels(method, dataset.n_views), views))
    grams = [kernels.gram_matrix(X, s) for X, s in zip(views, specs)]
    n = dataset.n
    if method.regularizer == "none" or method.effective_hyper().gamma_I == 0:
        regs = [np.zeros((n, n)) for _ in views]
    elif method.regularizer == "laplacian":
        regs = [
            manifold.graph_laplacian(X, method.k_laplacian, method.laplacian_weighting)
            for X in views
        ]
    else:
        regs = [
            manifold.hessian_energy_matrix(X, method.k_hessian, method.intrinsic_dim)
            for X in views
        ]
    return TrainingMatrices(views, specs, grams, regs)


@dataclass
class BinaryModel:
    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    method: MethodSpec
    kernel_specs: tuple[KernelSpec, ...]
    train_views: tuple[np.ndarray, ...]
    positive_class: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False


@dataclass
class MulticlassModel:
    classes: list[int]
    binaries: list[BinaryModel]
    labeled_fraction: float = float("nan")

    @property
    def method(self) -> MethodSpec:
        return self.binaries[0].method


def train_binary(
    dataset: MultiviewDataset,
    positive_class: int,
    method: MethodSpec,
    matrices: TrainingMatrices | None = None,
) -> BinaryModel:
    """Fit one positive-vs-rest scorer on the labeled part of ``dataset``."""
    L = dataset.labeled_indices
    y = (dataset.labels[L] == positive_class).astype(np.float64)
    if y.all() or not y.any():
        raise ModelError(
            f"labeled examples must include class {positive_class} and at least one other class"
        )
    if matrices is None:
        matrices = build_matrices(dataset, method)
    problem = ProblemInstance(
        grams=matrices.grams,
        regularizers=matrices.regularizers,
        labeled_idx=L,
        y=y,
        hyper=method.effective_hyper(),
    )
    state = alternate(problem)
    if not state.converged:
        logger.warning(
            "class %s: alternating optimization stopped after %d iterations without converging",
            positive_class, state.iterations,
        )
    return BinaryModel(
        alpha=state.alpha,
        theta=state.theta,
        beta=state.beta,
        method=method,
        kernel_specs=matrices.kernel_specs,
        train_views=matrices.views,
        positive_class=int(positive_class),
        objective_trace=list(state.objective_trace),
        converged=state.converged,
    )


def train_one_vs_rest(
    dataset: MultiviewDataset, method: MethodSpec, matrices: TrainingMatrices | None = None
) -> MulticlassModel:
    """One binary model per class present in ``dataset.labels``; matrices are
    built once (unless given) and shared."""
    classes = [int(c) for c in np.unique(dataset.labels)]
    labeled = set(int(c) for c in np.unique(dataset.labels[dataset.labeled_mask]))
    if len(labeled) < 2:
        raise ModelError(f"need labeled examples from at least 2 classes, got {sorted(labeled)}")
    missing = [c for c in classes if c not in labeled]
    if missing:
        names = [
            dataset.class_names[c] if dataset.class_names and c < len(dataset.class_names) else str(c)
            for c in missing
        ]
        raise ModelError(f"class(es) {missing} ({', '.join(names)}) have no labeled example")
    if matrices is None:
        matrices = build_matrices(dataset, method)
    binaries = [train_binary(dataset, c, method, matrices) for c in classes]
    return MulticlassModel(classes, binaries, dataset.n_labeled / dataset.n)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def decision_values(model: BinaryModel, query_views: Sequence[np.ndarray]) -> np.ndarray:
    """``f(x) = sum_i alpha_i sum_k theta_k K^k(x_i, x)`` for each query row."""
    views = select_views(query_views, model.method)
    if len(views) != len(model.train_views):
        raise ModelError(f"expected {len(model.train_views)} views, got {len(views)}")
    for k, (Q, T) in enumerate(zip(views, model.train_views)):
        if Q.ndim != 2 or Q.shape[1] != T.shape[1]:
            raise ModelError(
                f"view {k}: query has shape {Q.shape}, training features have {T.shape[1]} columns"
            )
    crosses = [
        kernels.cross_kernel(T, Q, s) for T, Q, s in zip(model.train_views, views, model.kernel_specs)
    ]
    return kernels.combine_matrices(crosses, model.theta) @ model.alpha


def predict_proba(model: BinaryModel, query_views: Sequence[np.ndarray]) -> np.ndarray:
    p = sigmoid(decision_values(model, query_views))
    # keep strictly inside (0, 1) even where the sigmoid saturates
    tiny = np.finfo(np.float64).tiny
    return np.clip(p, tiny, np.nextafter(1.0, 0.0))


def predict_proba_ovr(model: MulticlassModel, query_views: Sequence[np.ndarray]) -> np.ndarray:
    """Per-class scores, shape (m, n_classes), columns in ``model.classes`` order."""
    return np.column_stack([predict_proba(b, query_views) for b in model.binaries])


def predict(model: MulticlassModel, query_views: Sequence[np.ndarray]) -> np.ndarray:
    scores = predict_proba_ovr(model, query_views)
    return np.asarray(model.classes)[np.argmax(scores, axis=1)]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _binary_to_dict(b: BinaryModel) -> dict:
    return {
        "positive_class": b.positive_class,
        "method": b.method.to_dict(),
        "kernel_specs": [s.to_dict() for s in b.kernel_specs],
        "alpha": _encode_array(b.alpha),
        "theta": _encode_array(b.theta),
        "beta": _encode_array(b.beta),
        "train_views": [_encode_array(X) for X in b.train_views],
        "objective_trace": [float(v) for v in b.objective_trace],
        "converged": bool(b.converged),
    }


def _binary_from_dict(d: dict) -> BinaryModel:
    return BinaryModel(
        alpha=_decode_array(d["alpha"]),
        theta=_decode_array(d["theta"]),
        beta=_decode_array(d["beta"]),
        method=MethodSpec.from_dict(d["method"]),
        kernel_specs=tuple(KernelSpec.from_dict(s) for s in d["kernel_specs"]),
        train_views=tuple(_decode_array(X) for X in d["train_views"]),
        positive_class=int(d["positive_class"]),
        objective_trace=list(d["objective_trace"]),
        converged=bool(d["converged"]),
    )


def save_model(model: BinaryModel | MulticlassModel, path: str) -> None:
    """Write a two-line text file: a JSON header (magic, version, payload
    length and SHA-256) followed by the JSON payload. Arrays are stored as
    base64 little-endian float64, so predictions survive bit for bit."""
    if isinstance(model, MulticlassModel):
        body = {"kind": "multiclass", "classes": list(model.classes),
                "labeled_fraction": float(model.labeled_fraction),
                "binaries": [_binary_to_dict(b) for b in model.binaries]}
    else:
        body = {"kind": "binary", "model": _binary_to_dict(model)}
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = {
        "magic": FORMAT_MAGIC,
        "format_version": FORMAT_VERSION,
        "length": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_model(path: str) -> BinaryModel | MulticlassModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise CorruptModelError(f"{path}: missing header")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CorruptModelError(f"{path}: unreadable header") from None
    if not isinstance(header, dict) or header.get("magic") != FORMAT_MAGIC:
        raise CorruptModelError(f"{path}: not a model file")
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    if len(payload) != header.get("length") or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptModelError(f"{path}: checksum mismatch (truncated or modified file)")
    body = json.loads(payload)
    if body["kind"] == "multiclass":
        return MulticlassModel(
            classes=[int(c) for c in body["classes"]],
            binaries=[_binary_from_dict(b) for b in body["binaries"]],
            labeled_fraction=float(body["labeled_fraction"]),
        )
    return _binary_from_dict(body["model"])
