"""Manifold regularizers built from a k-nearest-neighbour graph.

Two builders return dense symmetric PSD matrices ``R`` whose quadratic form
``f @ R @ f`` measures roughness of a function sampled at the data points:

* :func:`graph_laplacian` - ``L = D - W``; ``f @ L @ f = 1/2 sum w_ij (f_i - f_j)^2``.
* :func:`hessian_energy_matrix` - local Hessian estimates in a PCA tangent
  frame, accumulated over neighbourhoods (Donoho & Grimes, 2003). Its
  nullspace contains every function that is affine in the manifold
  coordinates, not only constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


class ManifoldError(ValueError):
    pass


class DegenerateNeighborhoodError(ManifoldError):
    pass


class DegenerateGeometryError(ManifoldError):
    pass


@dataclass(frozen=True)
class NeighborGraph:
    """``indices[i]`` lists the k nearest neighbours of point i (self
    excluded), ordered by distance then by index; ``distances`` matches."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def _features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ManifoldError("features must be a finite 2-D matrix")
    return X


def knn_graph(features, k: int, metric: str = "euclidean") -> NeighborGraph:
    """Exact k-nearest-neighbour lists by brute force."""
    if metric != "euclidean":
        raise ManifoldError(f"unsupported metric {metric!r}")
    X = _features(features)
    n = X.shape[0]
    if not 1 <= k <= n - 1:
        raise ManifoldError(f"k must be in [1, n-1] = [1, {n - 1}], got {k}")
    sq = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(sq, np.inf)
    # a stable sort keeps ascending index order among equal distances
    order = np.argsort(sq, axis=1, kind="stable")[:, :k]
    dist = np.sqrt(np.take_along_axis(sq, order, axis=1))
    return NeighborGraph(indices=order, distances=dist)


def adjacency(graph: NeighborGraph, features=None, weighting: str = "binary") -> np.ndarray:
    """Symmetric weight matrix; i ~ j when either lists the other."""
    n, k = graph.n, graph.k
    rows = np.repeat(np.arange(n), k)
    cols = graph.indices.reshape(-1)
    E = np.zeros((n, n), dtype=bool)
    E[rows, cols] = True
    E |= E.T
    if weighting == "binary":
        return E.astype(np.float64)
    if weighting == "heat":
        sigma = float(graph.distances.mean())
        if sigma <= 0:
            raise DegenerateGeometryError("all neighbour distances are zero; heat weights undefined")
        X = _features(features)
        sq = cdist(X, X, "sqeuclidean")
        return np.where(E, np.exp(-sq / (2.0 * sigma**2)), 0.0)
    raise ManifoldError(f"unknown weighting {weighting!r}")


def graph_laplacian(features, k: int, weighting: str = "heat") -> np.ndarray:
    """Unnormalized Laplacian ``D - W`` of the OR-symmetrized kNN graph.

    Heat weights use ``exp(-d^2 / (2 sigma^2))`` with sigma the mean kNN
    distance over the graph.
    """
    graph = knn_graph(features, k)
    W = adjacency(graph, features, weighting)
    return np.diag(W.sum(axis=1)) - W


def local_tangent_coordinates(neighborhood, intrinsic_dim: int) -> np.ndarray:
    """Coordinates of the centered neighbourhood on its top principal directions."""
    N = _features(neighborhood)
    m, D = N.shape
    d = intrinsic_dim
    if not 1 <= d <= min(m, D):
        raise ManifoldError(f"intrinsic_dim must be in [1, {min(m, D)}], got {d}")
    C = N - N.mean(axis=0)
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    if s[0] == 0 or s[d - 1] <= 1e-10 * s[0]:
        raise DegenerateNeighborhoodError(
            f"neighbourhood spans fewer than {d} dimensions (singular values {s[:d]})"
        )
    return U[:, :d] * s[:d]


def _quadratic_columns(T: np.ndarray) -> np.ndarray:
    a, b = np.triu_indices(T.shape[1])
    return T[:, a] * T[:, b]


def _gram_schmidt(A: np.ndarray) -> np.ndarray:
    """Orthonormalize columns left to right, with one re-orthogonalization pass."""
    Q = np.zeros_like(A)
    for j in range(A.shape[1]):
        v = A[:, j].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            v -= Q[:, :j] @ (Q[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm0 == 0 or norm < 1e-10 * norm0:
            raise DegenerateNeighborhoodError(
                f"design column {j} is linearly dependent on the previous ones"
            )
        Q[:, j] = v / norm
    return Q


def local_hessian_estimator(tangent: np.ndarray) -> np.ndarray:
    """Rows map function values on a neighbourhood to its (orthonormalized)
    second-order coefficients in the tangent frame; shape (d(d+1)/2, m)."""
    m, d = tangent.shape
    design = np.column_stack([np.ones(m), tangent, _quadratic_columns(tangent)])
    Q = _gram_schmidt(design)
    return Q[:, 1 + d :].T


def min_hessian_neighbors(intrinsic_dim: int) -> int:
    d = intrinsic_dim
    return 1 + d + d * (d + 1) // 2


def hessian_energy_matrix(features, k: int, intrinsic_dim: int = 2) -> np.ndarray:
    """Hessian energy matrix ``B`` with ``B[N_i, N_i] += H_i.T @ H_i`` summed
    over neighbourhoods ``N_i`` = point i plus its k nearest neighbours."""
    X = _features(features)
    d = intrinsic_dim
    if k < min_hessian_neighbors(d):
        raise ManifoldError(
            f"k={k} too small for a quadratic fit in {d} dimensions; "
            f"need k >= {min_hessian_neighbors(d)}"
        )
    if d > X.shape[1]:
        raise ManifoldError(f"intrinsic_dim {d} exceeds the feature dimension {X.shape[1]}")
    graph = knn_graph(X, k)
    n = X.shape[0]
    B = np.zeros((n, n))
    for i in range(n):
        nbhd = np.concatenate(([i], graph.indices[i]))
        try:
            T = local_tangent_coordinates(X[nbhd], d)
            H = local_hessian_estimator(T)
        except DegenerateNeighborhoodError as exc:
            raise DegenerateNeighborhoodError(f"point {i}: {exc}") from None
        B[np.ix_(nbhd, nbhd)] += H.T @ H
    # accumulated blocks are symmetric up to rounding in H.T @ H
    return (B + B.T) / 2.0


def quadratic_energy(R: np.ndarray, f) -> float:
    f = np.asarray(f, dtype=np.float64)
    return float(f @ R @ f)


def dump_coo(M: np.ndarray, path: str) -> None:
    """Write the nonzero entries of ``M`` as ``row col value`` lines."""
    rows, cols = np.nonzero(M)
    with open(path, "w") as fh:
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {float(M[r, c])!r}\n")
