"""Alternating minimization of the multiview Hessian-regularized logistic
regression objective

    J(alpha, theta, beta) = -(1/l) sum_{i labeled} [y_i log s(z_i) + (1 - y_i) log(1 - s(z_i))]
                            + gamma_K alpha' K alpha + gamma_I alpha' K H K alpha
                            + gamma_theta |theta|^2 + gamma_beta |beta|^2

with ``K = sum_k theta_k K^k``, ``H = sum_j beta_j H^j``, ``z = K alpha``
restricted to labeled rows and ``s`` the logistic sigmoid. ``theta`` and
``beta`` live on the probability simplex; labels are 0/1.

Blocks are updated in the order alpha (nonlinear conjugate gradient),
theta (projected gradient), beta (closed form).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .kernels import combine_matrices

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 60


class OptimizationError(ValueError):
    pass


class SolverStallError(RuntimeError):
    """A line search found no decrease; ``last_iterate`` holds the best point so far."""

    def __init__(self, message: str, last_iterate: np.ndarray, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


@dataclass(frozen=True)
class Hyperparams:
    gamma_K: float = 1e-3
    gamma_I: float = 1e-4
    gamma_theta: float = 0.1
    gamma_beta: float = 0.1
    cg_tol: float = 1e-7
    cg_max_iter: int = 500
    outer_tol: float = 1e-5
    outer_max_iter: int = 100

    def __post_init__(self):
        if not self.gamma_K > 0:
            raise OptimizationError(f"gamma_K must be positive, got {self.gamma_K}")
        if not self.gamma_I >= 0:
            raise OptimizationError(f"gamma_I must be nonnegative, got {self.gamma_I}")
        if not self.gamma_theta > 0:
            raise OptimizationError(f"gamma_theta must be positive, got {self.gamma_theta}")
        if not self.gamma_beta > 0:
            raise OptimizationError(f"gamma_beta must be positive, got {self.gamma_beta}")
        for name in ("cg_tol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise OptimizationError(f"{name} must be positive")
        for name in ("cg_max_iter", "outer_max_iter"):
            if int(getattr(self, name)) < 1:
                raise OptimizationError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ProblemInstance:
    """Per-view Gram matrices, per-view regularizers and the labeled subset."""

    grams: Sequence[np.ndarray]
    regularizers: Sequence[np.ndarray]
    labeled_idx: np.ndarray
    y: np.ndarray
    hyper: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        self.grams = [np.asarray(G, dtype=np.float64) for G in self.grams]
        self.regularizers = [np.asarray(R, dtype=np.float64) for R in self.regularizers]
        if not self.grams or not self.regularizers:
            raise OptimizationError("need at least one Gram matrix and one regularizer")
        n = self.grams[0].shape[0]
        for M in [*self.grams, *self.regularizers]:
            if M.shape != (n, n):
                raise OptimizationError(f"matrix of shape {M.shape}, expected {(n, n)}")
        self.labeled_idx = np.asarray(self.labeled_idx, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.labeled_idx.size < 1:
            raise OptimizationError("need at least one labeled example")
        if self.y.shape != self.labeled_idx.shape:
            raise OptimizationError("labels and labeled indices differ in length")
        if np.unique(self.labeled_idx).size != self.labeled_idx.size:
            raise OptimizationError("labeled indices must be distinct")
        if self.labeled_idx.min() < 0 or self.labeled_idx.max() >= n:
            raise OptimizationError("labeled index out of range")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise OptimizationError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.grams[0].shape[0]

    @property
    def l(self) -> int:
        return self.labeled_idx.size

    @property
    def n_kernels(self) -> int:
        return len(self.grams)

    @property
    def n_regularizers(self) -> int:
        return len(self.regularizers)


@dataclass
class SolverState:
    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass
class BlockResult:
    x: np.ndarray
    objective_trace: list
    iterations: int


# ---------------------------------------------------------------------------
# objective and gradients
# ---------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_loss(z: np.ndarray, y: np.ndarray) -> float:
    # -[y log s(z) + (1-y) log(1-s(z))] = log(1 + e^z) - y z
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


class _Combined:
    """K, H and the symmetrized K H K for fixed (theta, beta)."""

    def __init__(self, problem: ProblemInstance, theta, beta):
        self.theta = _check_weights(theta, problem.n_kernels, "theta")
        self.beta = _check_weights(beta, problem.n_regularizers, "beta")
        self.K = combine_matrices(problem.grams, self.theta)
        self.H = combine_matrices(problem.regularizers, self.beta)
        if problem.hyper.gamma_I == 0:
            self.KHK = None
        else:
            KHK = self.K @ self.H @ self.K
            self.KHK = (KHK + KHK.T) / 2.0


def _check_weights(w, size: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != size:
        raise OptimizationError(f"{name} has {w.size} entries, expected {size}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9 or not np.all(np.isfinite(w)):
        raise OptimizationError(f"{name} = {w.tolist()} is not on the simplex")
    return w


def _objective(alpha, problem: ProblemInstance, c: _Combined) -> float:
    h = problem.hyper
    Ka = c.K @ alpha
    val = _logistic_loss(Ka[problem.labeled_idx], problem.y)
    val += h.gamma_K * float(alpha @ Ka)
    if c.KHK is not None:
        val += h.gamma_I * float(alpha @ (c.KHK @ alpha))
    val += h.gamma_theta * float(c.theta @ c.theta) + h.gamma_beta * float(c.beta @ c.beta)
    return val


def _gradient_alpha(alpha, problem: ProblemInstance, c: _Combined) -> np.ndarray:
    h = problem.hyper
    L = problem.labeled_idx
    Ka = c.K @ alpha
    resid = sigmoid(Ka[L]) - problem.y
    g = c.K[:, L] @ resid / problem.l
    g += 2.0 * h.gamma_K * Ka
    if c.KHK is not None:
        g += 2.0 * h.gamma_I * (c.KHK @ alpha)
    return g


def objective(alpha, theta, beta, problem: ProblemInstance) -> float:
    alpha = _check_alpha(alpha, problem)
    return _objective(alpha, problem, _Combined(problem, theta, beta))


def gradient_alpha(alpha, theta, beta, problem: ProblemInstance) -> np.ndarray:
    alpha = _check_alpha(alpha, problem)
    return _gradient_alpha(alpha, problem, _Combined(problem, theta, beta))


def gradient_theta(alpha, theta, beta, problem: ProblemInstance) -> np.ndarray:
    """Partial derivatives of J with respect to each kernel weight."""
    alpha = _check_alpha(alpha, problem)
    c = _Combined(problem, theta, beta)
    return _gradient_theta(alpha, problem, c)


def _gradient_theta(alpha, problem: ProblemInstance, c: _Combined) -> np.ndarray:
    h = problem.hyper
    L = problem.labeled_idx
    Ka = c.K @ alpha
    resid = sigmoid(Ka[L]) - problem.y
    HKa = c.H @ Ka if h.gamma_I != 0 else None
    g = np.empty(problem.n_kernels)
    for k, Gk in enumerate(problem.grams):
        Gka = Gk @ alpha
        gk = float(resid @ Gka[L]) / problem.l + h.gamma_K * float(alpha @ Gka)
        if HKa is not None:
            gk += 2.0 * h.gamma_I * float(HKa @ Gka)
        g[k] = gk + 2.0 * h.gamma_theta * c.theta[k]
    return g


def _check_alpha(alpha, problem: ProblemInstance) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.size != problem.n:
        raise OptimizationError(f"alpha has {alpha.size} entries, expected {problem.n}")
    return alpha


# ---------------------------------------------------------------------------
# block solvers
# ---------------------------------------------------------------------------


def _kernel_residual(alpha, problem: ProblemInstance, c: _Combined) -> np.ndarray:
    """``r`` with ``gradient_alpha = K @ r``: the gradient taken in function space."""
    h = problem.hyper
    r = 2.0 * h.gamma_K * alpha
    r[problem.labeled_idx] += (sigmoid(c.K[problem.labeled_idx] @ alpha) - problem.y) / problem.l
    if c.KHK is not None:
        r += 2.0 * h.gamma_I * (c.H @ (c.K @ alpha))
    return r


def solve_alpha(
    problem: ProblemInstance, theta, beta, alpha_init=None, preconditioned: bool = True
) -> BlockResult:
    """Nonlinear conjugate gradient on alpha with Fletcher-Reeves updates.

    With ``preconditioned=True`` (default) the search directions are built
    from the function-space residual ``r`` (``grad = K r``), i.e. CG
    preconditioned by the inverse kernel matrix, and the Fletcher-Reeves
    ratio uses ``grad @ r``. The plain variant works with the raw gradient
    and is badly conditioned for smooth kernels.

    Each step runs an Armijo backtracking search (halving) that starts from
    the minimizer of the local quadratic model along the direction. When the
    conjugate direction is not a descent direction the method restarts from
    the (preconditioned) steepest descent direction. Stops when the
    objective changes by less than ``cg_tol`` or after ``cg_max_iter``
    iterations.
    """
    h = problem.hyper
    c = _Combined(problem, theta, beta)
    alpha = np.zeros(problem.n) if alpha_init is None else _check_alpha(alpha_init, problem).copy()
    fun = lambda a: _objective(a, problem, c)  # noqa: E731

    def newton_step(a, d, slope):
        # minimizer of the second-order model of J along d
        Kd = c.K @ d
        sl = sigmoid(c.K[problem.labeled_idx] @ a)
        curv = float(sl * (1.0 - sl) @ Kd[problem.labeled_idx] ** 2) / problem.l
        curv += 2.0 * h.gamma_K * float(d @ Kd)
        if c.KHK is not None:
            curv += 2.0 * h.gamma_I * float(d @ (c.KHK @ d))
        t = -slope / curv if curv > 0 else 1.0
        return t if np.isfinite(t) and t > 0 else 1.0

    def descent(a):
        g = _gradient_alpha(a, problem, c)
        r = _kernel_residual(a, problem, c) if preconditioned else g
        return g, r

    J = fun(alpha)
    g, r = descent(alpha)
    trace = [J]
    if np.linalg.norm(g) < h.cg_tol:
        return BlockResult(alpha, trace, 0)
    d = -r
    gr = float(g @ r)
    it = 0
    while it < h.cg_max_iter:
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -r, -gr
        alpha_new, J_new = _armijo(fun, alpha, J, d, slope, newton_step(alpha, d, slope))
        if alpha_new is None and not np.array_equal(d, -r):
            d, slope = -r, -gr
            alpha_new, J_new = _armijo(fun, alpha, J, d, slope, newton_step(alpha, d, slope))
        if alpha_new is None:
            raise SolverStallError(
                f"alpha line search found no decrease after {MAX_BACKTRACKS} backtracks",
                alpha, it,
            )
        it += 1
        alpha = alpha_new
        dJ = J - J_new
        J = J_new
        trace.append(J)
        g, r = descent(alpha)
        gr_new = float(g @ r)
        if dJ < h.cg_tol or np.linalg.norm(g) < h.cg_tol:
            break
        d = -r + (gr_new / gr) * d
        gr = gr_new
        if it % problem.n == 0:
            d = -r
    return BlockResult(alpha, trace, it)


def _armijo(fun, x, fx, d, slope, step=1.0):
    for _ in range(MAX_BACKTRACKS):
        x_new = x + step * d
        f_new = fun(x_new)
        if f_new <= fx + ARMIJO_C * step * slope:
            return x_new, f_new
        step *= SHRINK
    return None, fx


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum(w) = 1} by the sort-and-threshold rule."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size < 1:
        raise OptimizationError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise OptimizationError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u + (1.0 - css) / ks > 0)[0][-1]
    tau = (1.0 - css[rho]) / (rho + 1)
    w = np.maximum(v + tau, 0.0)
    return w / w.sum()


def solve_theta(problem: ProblemInstance, alpha, beta, theta_init=None) -> BlockResult:
    """Projected gradient descent on the kernel weights with Armijo backtracking
    along the projection arc."""
    h = problem.hyper
    V = problem.n_kernels
    alpha = _check_alpha(alpha, problem)
    theta = np.full(V, 1.0 / V) if theta_init is None else project_simplex(theta_init)
    c = _Combined(problem, theta, beta)
    J = _objective(alpha, problem, c)
    trace = [J]
    if V == 1:
        return BlockResult(np.ones(1), trace, 0)
    it = 0
    while it < h.cg_max_iter:
        g = _gradient_theta(alpha, problem, c)
        step = 1.0
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            cand = project_simplex(theta - step * g)
            move = cand - theta
            if not np.any(move):
                break
            c_new = _Combined(problem, cand, beta)
            J_new = _objective(alpha, problem, c_new)
            if J_new <= J + ARMIJO_C * float(g @ move):
                accepted = (cand, c_new, J_new)
                break
            step *= SHRINK
        if accepted is None:
            # projected gradient is zero or no decrease at any step: stationary
            break
        it += 1
        theta, c, J_new = accepted
        dJ = J - J_new
        J = J_new
        trace.append(J)
        if dJ < h.cg_tol:
            break
    return BlockResult(theta, trace, it)


def beta_costs(problem: ProblemInstance, alpha, theta) -> np.ndarray:
    """Per-regularizer manifold energies ``(K alpha)' H^j (K alpha)``."""
    alpha = _check_alpha(alpha, problem)
    theta = _check_weights(theta, problem.n_kernels, "theta")
    Ka = combine_matrices(problem.grams, theta) @ alpha
    return np.array([float(Ka @ (R @ Ka)) for R in problem.regularizers])


def solve_beta_from_costs(costs, gamma_I: float, gamma_beta: float) -> np.ndarray:
    """Minimizer of ``gamma_I * beta @ costs + gamma_beta * |beta|^2`` on the simplex."""
    costs = np.asarray(costs, dtype=np.float64)
    return project_simplex(-gamma_I * costs / (2.0 * gamma_beta))


def solve_beta(problem: ProblemInstance, alpha, theta) -> np.ndarray:
    h = problem.hyper
    if problem.n_regularizers == 1:
        return np.ones(1)
    return solve_beta_from_costs(beta_costs(problem, alpha, theta), h.gamma_I, h.gamma_beta)


def alternate(problem: ProblemInstance, init: SolverState | None = None) -> SolverState:
    """Cycle alpha -> theta -> beta updates until the relative change of J
    drops below ``outer_tol``.

    The first entry of ``objective_trace`` is J at the starting point; one
    entry follows per outer iteration. A stalled line search ends the run
    with ``converged=False`` and the last accepted iterate.
    """
    h = problem.hyper
    if init is None:
        state = SolverState(
            alpha=np.zeros(problem.n),
            theta=np.full(problem.n_kernels, 1.0 / problem.n_kernels),
            beta=np.full(problem.n_regularizers, 1.0 / problem.n_regularizers),
        )
    else:
        state = SolverState(
            alpha=_check_alpha(init.alpha, problem).copy(),
            theta=project_simplex(init.theta),
            beta=project_simplex(init.beta),
        )
    J = objective(state.alpha, state.theta, state.beta, problem)
    state.objective_trace.append(J)
    for it in range(1, h.outer_max_iter + 1):
        try:
            state.alpha = solve_alpha(problem, state.theta, state.beta, state.alpha).x
            state.theta = solve_theta(problem, state.alpha, state.beta, state.theta).x
        except SolverStallError as exc:
            logger.warning("outer iteration %d: %s", it, exc)
            state.iterations = it
            state.converged = False
            return state
        beta = solve_beta(problem, state.alpha, state.theta)
        # the closed form is exact; guard against rounding making J tick up
        if objective(state.alpha, state.theta, beta, problem) <= objective(
            state.alpha, state.theta, state.beta, problem
        ):
            state.beta = beta
        J_new = objective(state.alpha, state.theta, state.beta, problem)
        state.objective_trace.append(J_new)
        state.iterations = it
        rel = abs(J - J_new) / max(abs(J), 1e-300)
        J = J_new
        if rel < h.outer_tol:
            state.converged = True
            break
    return state
