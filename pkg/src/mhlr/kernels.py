"""Per-view Gram matrices and simplex-weighted combinations of them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

KERNEL_KINDS = ("linear", "rbf")

# rows per block when building kernel matrices; keeps the broadcast
# temporaries small and gives every entry the same reduction order
_BLOCK_ROWS = 256


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """``kind`` is ``"linear"`` or ``"rbf"``.

    An rbf spec with ``bandwidth=None`` is resolved with the median pairwise
    distance of the features it is first applied to (see :meth:`resolve`).
    """

    kind: str = "rbf"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.bandwidth is not None:
            if self.kind != "rbf":
                raise KernelError("bandwidth only applies to rbf kernels")
            if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
                raise KernelError(f"rbf bandwidth must be positive, got {self.bandwidth}")

    def resolve(self, features: np.ndarray) -> "KernelSpec":
        if self.kind != "rbf" or self.bandwidth is not None:
            return self
        return KernelSpec("rbf", median_bandwidth(features))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], d.get("bandwidth"))


def median_bandwidth(features: np.ndarray) -> float:
    """Median pairwise Euclidean distance between distinct rows."""
    X = _as_features(features)
    if X.shape[0] < 2:
        raise KernelError("median heuristic needs at least two points")
    med = float(np.median(pdist(X)))
    if med <= 0:
        raise KernelError("median pairwise distance is zero; set an explicit bandwidth")
    return med


def _as_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise KernelError(f"features must be a 2-D matrix, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise KernelError("features contain non-finite values")
    return X


def _kernel_block(Q: np.ndarray, T: np.ndarray, spec: KernelSpec) -> np.ndarray:
    if spec.kind == "linear":
        # explicit elementwise products: entry (q, i) and (i, q) see the same
        # operands in the same order, so square outputs are exactly symmetric
        return (Q[:, None, :] * T[None, :, :]).sum(axis=2)
    sq = cdist(Q, T, "sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth**2))


def cross_kernel(train_features, query_features, spec: KernelSpec) -> np.ndarray:
    """Kernel values between query rows and training rows, shape (m, n).

    With ``query_features`` equal to ``train_features`` this returns exactly
    ``gram_matrix(train_features, spec)``.
    """
    T = _as_features(train_features)
    Q = _as_features(query_features)
    if Q.shape[1] != T.shape[1]:
        raise KernelError(
            f"query has {Q.shape[1]} columns but training features have {T.shape[1]}"
        )
    if spec.kind == "rbf" and spec.bandwidth is None:
        spec = spec.resolve(T)
    out = np.empty((Q.shape[0], T.shape[0]))
    for start in range(0, Q.shape[0], _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, Q.shape[0])
        out[start:stop] = _kernel_block(Q[start:stop], T, spec)
    return out


def gram_matrix(features, spec: KernelSpec) -> np.ndarray:
    """Symmetric n x n Gram matrix of ``features`` under ``spec``."""
    X = _as_features(features)
    return cross_kernel(X, X, spec)


def check_simplex(weights, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size < 1:
        raise KernelError("simplex weights must be nonempty")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise KernelError(f"weights {w.tolist()} are not on the probability simplex")
    return w


def combine_matrices(parts: Sequence[np.ndarray], weights) -> np.ndarray:
    """Convex combination ``sum_k weights[k] * parts[k]``."""
    w = check_simplex(weights)
    if len(parts) != w.size:
        raise KernelError(f"{len(parts)} matrices but {w.size} weights")
    shape = np.shape(parts[0])
    out = np.zeros(shape)
    for P, wk in zip(parts, w):
        if np.shape(P) != shape:
            raise KernelError(f"matrix shapes differ: {np.shape(P)} vs {shape}")
        if wk == 1.0:
            # exact copy for one-hot weights
            out = out + np.asarray(P, dtype=np.float64)
        elif wk != 0.0:
            out += wk * np.asarray(P, dtype=np.float64)
    return out


def min_eigenvalue(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((M + M.T) / 2.0)[0])


def is_symmetric_psd(M: np.ndarray, psd_tol: float = 1e-8, sym_tol: float = 1e-10) -> bool:
    M = np.asarray(M, dtype=np.float64)
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > sym_tol * scale:
        return False
    return min_eigenvalue(M) >= -psd_tol


def dump_matrix_csv(M: np.ndarray, path: str) -> None:
    np.savetxt(path, np.asarray(M), delimiter=",", fmt="%.17g")
