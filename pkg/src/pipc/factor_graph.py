"""Factor graph over support states with block-tridiagonal Gauss-Newton /
Levenberg-Marquardt least squares.

All factors connect a single support state or an adjacent pair, so the normal
equations are block-tridiagonal and every solve, and the marginal-covariance
recovery, runs in time linear in the number of states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import SignedDistanceField, hinge_cost
from .errors import ConfigError, NumericalError
from .gp_model import GpInterval

_TINY = 1e-300


class Factor:
    """Residual factor with cost 0.5 r^T W r; subclasses fill kind/vars/weight."""

    kind: str = "generic"

    def __init__(self, variables: tuple[int, ...], weight: np.ndarray):
        weight = np.asarray(weight, dtype=float)
        if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
            raise ConfigError("factor weight must be a square matrix")
        if not np.allclose(weight, weight.T):
            raise ConfigError("factor weight must be symmetric")
        self.variables = tuple(int(v) for v in variables)
        self.weight = weight

    def residual_at(self, estimate: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linearize_at(self, estimate: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        raise NotImplementedError

    def cost_at(self, estimate: np.ndarray) -> float:
        r = self.residual_at(estimate)
        return 0.5 * float(r @ self.weight @ r)


class PriorFactor(Factor):
    """Anchors one state to a mean with a full information matrix."""

    kind = "prior"

    def __init__(self, var: int, mean: np.ndarray, weight: np.ndarray):
        super().__init__((var,), weight)
        self.mean = np.asarray(mean, dtype=float)
        self._jac = (np.eye(self.mean.shape[0]),)

    def residual_at(self, estimate):
        return estimate[self.variables[0]] - self.mean

    def linearize_at(self, estimate):
        return self.residual_at(estimate), self._jac


class GoalFactor(Factor):
    """Pulls one support state toward the goal state (position, zero velocity/action)."""

    kind = "goal"

    def __init__(self, var: int, goal: np.ndarray, weight: np.ndarray):
        super().__init__((var,), weight)
        self.goal = np.asarray(goal, dtype=float)
        self._jac = (np.eye(self.goal.shape[0]),)

    def residual_at(self, estimate):
        return estimate[self.variables[0]] - self.goal

    def linearize_at(self, estimate):
        return self.residual_at(estimate), self._jac


class GpPriorFactor(Factor):
    """Pairwise trajectory-prior factor between adjacent support states."""

    kind = "gp"

    def __init__(self, var_i: int, var_j: int, interval: GpInterval):
        super().__init__((var_i, var_j), interval.Q_gp_inv)
        self.interval = interval
        self._jac = (interval.Phi, -np.eye(interval.Phi.shape[0]))

    def residual_at(self, estimate):
        i, j = self.variables
        return self.interval.Phi @ estimate[i] - estimate[j]

    def linearize_at(self, estimate):
        return self.residual_at(estimate), self._jac


class ObstacleFactor(Factor):
    """Hinge collision cost on the position block of one support state.

    Queries beyond the field extent are guaranteed free by construction of the
    sensed field (see build_sdf) and score zero cost.
    """

    kind = "obstacle"

    def __init__(self, var: int, sdf: SignedDistanceField, robot_radius: float,
                 eps: float, sigma_obs: float, d: int):
        super().__init__((var,), np.array([[1.0 / sigma_obs**2]]))
        self.sdf = sdf
        self.robot_radius = robot_radius
        self.eps = eps
        self.d = d

    def _hinge(self, position):
        if not self.sdf.contains(position):
            return 0.0, np.zeros(2)
        return hinge_cost(self.sdf, position, self.robot_radius, self.eps)

    def residual_at(self, estimate):
        c, _ = self._hinge(estimate[self.variables[0]][: self.d])
        return np.array([c])

    def linearize_at(self, estimate):
        xi = estimate[self.variables[0]]
        c, grad = self._hinge(xi[: self.d])
        J = np.zeros((1, xi.shape[0]))
        J[0, : self.d] = grad
        return np.array([c]), (J,)


class InterpolatedObstacleFactor(Factor):
    """Hinge collision cost at an interpolated time between two support states.

    The interpolated position is pos_rows(Lambda) xi_i + pos_rows(Psi) xi_j, and
    jacobians chain through those fixed maps.
    """

    kind = "obstacle-interpolated"

    def __init__(self, var_i: int, var_j: int, lam_pos: np.ndarray, psi_pos: np.ndarray,
                 sdf: SignedDistanceField, robot_radius: float, eps: float,
                 sigma_obs: float):
        super().__init__((var_i, var_j), np.array([[1.0 / sigma_obs**2]]))
        self.lam_pos = lam_pos
        self.psi_pos = psi_pos
        self.sdf = sdf
        self.robot_radius = robot_radius
        self.eps = eps

    def _position(self, estimate):
        i, j = self.variables
        return self.lam_pos @ estimate[i] + self.psi_pos @ estimate[j]

    def _hinge(self, position):
        if not self.sdf.contains(position):
            return 0.0, np.zeros(2)
        return hinge_cost(self.sdf, position, self.robot_radius, self.eps)

    def residual_at(self, estimate):
        c, _ = self._hinge(self._position(estimate))
        return np.array([c])

    def linearize_at(self, estimate):
        c, grad = self._hinge(self._position(estimate))
        return np.array([c]), ((grad @ self.lam_pos)[None, :], (grad @ self.psi_pos)[None, :])


@dataclass
class FactorGraph:
    """Bipartite graph of support-state variables and residual factors."""

    num_vars: int
    var_dim: int
    factors: list[Factor] = field(default_factory=list)

    def add(self, factor: Factor) -> None:
        v = factor.variables
        if any(i < 0 or i >= self.num_vars for i in v):
            raise ConfigError(f"factor references variable {v} outside 0..{self.num_vars - 1}")
        if len(v) == 2 and v[1] != v[0] + 1:
            raise ConfigError("binary factors must connect adjacent variables")
        if len(v) > 2:
            raise ConfigError("factors connect at most two variables")
        self.factors.append(factor)


@dataclass
class OptimizerConfig:
    max_iters: int = 100
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e8
    cost_abs_tol: float = 1e-12
    cost_rel_tol: float = 1e-6
    min_step_norm: float = 1e-9

    def __post_init__(self):
        for name in ("max_iters", "lambda0", "lambda_up", "lambda_down", "lambda_max",
                     "cost_abs_tol", "cost_rel_tol", "min_step_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"optimizer config field {name} must be positive")


@dataclass
class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix: diagonal blocks and upper off-diagonals."""

    diag: np.ndarray   # (N, D, D)
    upper: np.ndarray  # (N - 1, D, D)

    @property
    def num_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block_dim(self) -> int:
        return self.diag.shape[1]

    def damped(self, lam: float) -> "BlockTridiagonal":
        eye = lam * np.eye(self.block_dim)
        return BlockTridiagonal(self.diag + eye, self.upper)

    def to_dense(self) -> np.ndarray:
        n, d = self.num_blocks, self.block_dim
        out = np.zeros((n * d, n * d))
        for i in range(n):
            out[i * d : (i + 1) * d, i * d : (i + 1) * d] = self.diag[i]
        for i in range(n - 1):
            out[i * d : (i + 1) * d, (i + 1) * d : (i + 2) * d] = self.upper[i]
            out[(i + 1) * d : (i + 2) * d, i * d : (i + 1) * d] = self.upper[i].T
        return out


def linearize(graph: FactorGraph, estimate: np.ndarray):
    """Assemble the Gauss-Newton normal equations at the given estimate.

    Returns (info, grad, cost) with info = J^T W J block-tridiagonal,
    grad = J^T W r stacked, and cost = 0.5 sum r^T W r.
    """
    n, d = graph.num_vars, graph.var_dim
    est = np.asarray(estimate, dtype=float).reshape(n, d)
    diag = np.zeros((n, d, d))
    upper = np.zeros((max(n - 1, 0), d, d))
    grad = np.zeros((n, d))
    cost = 0.0
    for f in graph.factors:
        r, jacs = f.linearize_at(est)
        w = f.weight
        wr = w @ r
        cost += 0.5 * float(r @ wr)
        v = f.variables
        if len(v) == 1:
            i = v[0]
            J = jacs[0]
            jw = J.T @ w
            diag[i] += jw @ J
            grad[i] += J.T @ wr
        else:
            i, j = v
            Ji, Jj = jacs
            jiw = Ji.T @ w
            diag[i] += jiw @ Ji
            diag[j] += Jj.T @ w @ Jj
            upper[i] += jiw @ Jj
            grad[i] += Ji.T @ wr
            grad[j] += Jj.T @ wr
    if not (np.isfinite(cost) and np.all(np.isfinite(diag)) and np.all(np.isfinite(grad))
            and np.all(np.isfinite(upper))):
        raise NumericalError("non-finite residual or jacobian entries at the current estimate")
    return BlockTridiagonal(diag, upper), grad.reshape(-1), cost


def graph_cost(graph: FactorGraph, estimate: np.ndarray) -> float:
    """Total cost 0.5 sum_f r_f^T W_f r_f at the given estimate."""
    est = np.asarray(estimate, dtype=float).reshape(graph.num_vars, graph.var_dim)
    total = 0.0
    for f in graph.factors:
        r = f.residual_at(est)
        total += 0.5 * float(r @ f.weight @ r)
    return total


def factor_banded(info: BlockTridiagonal):
    """Block Cholesky factorization A = L L^T of a block-tridiagonal matrix.

    Returns (diag_inverses, sub_blocks): the inverses of the lower-triangular
    diagonal blocks L_i and the sub-diagonal blocks C_i of L.  Raises
    NumericalError when a pivot block is not positive definite.
    """
    n, d = info.num_blocks, info.block_dim
    l_inv = np.empty((n, d, d))
    sub = np.empty((max(n - 1, 0), d, d))
    carry = None
    for i in range(n):
        block = info.diag[i] if carry is None else info.diag[i] - carry
        try:
            L = np.linalg.cholesky(block)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"pivot block {i} is not positive definite") from exc
        l_inv[i] = np.linalg.inv(L)
        if i < n - 1:
            ct = l_inv[i] @ info.upper[i]
            sub[i] = ct.T
            carry = ct.T @ ct
    return l_inv, sub


def solve_with_factor(l_inv: np.ndarray, sub: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n, d = l_inv.shape[0], l_inv.shape[1]
    b = rhs.reshape(n, d)
    y = np.empty((n, d))
    y[0] = l_inv[0] @ b[0]
    for i in range(1, n):
        y[i] = l_inv[i] @ (b[i] - sub[i - 1] @ y[i - 1])
    x = np.empty((n, d))
    x[n - 1] = l_inv[n - 1].T @ y[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = l_inv[i].T @ (y[i] - sub[i].T @ x[i + 1])
    return x.reshape(-1)


def solve_banded(info: BlockTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Solve info @ x = rhs by a block-Cholesky forward/backward sweep (O(N))."""
    l_inv, sub = factor_banded(info)
    return solve_with_factor(l_inv, sub, rhs)


def marginals_from_factor(l_inv: np.ndarray, sub: np.ndarray):
    """Diagonal and first off-diagonal blocks of the inverse of A = L L^T.

    Backward recurrence: S_NN = Linv^T Linv; S_{i,i+1} = -B_i^T S_{i+1,i+1};
    S_ii = Linv_i^T Linv_i + B_i^T S_{i+1,i+1} B_i with B_i = C_i Linv_i.
    """
    n, d = l_inv.shape[0], l_inv.shape[1]
    diag = np.empty((n, d, d))
    off = np.empty((max(n - 1, 0), d, d))
    diag[n - 1] = l_inv[n - 1].T @ l_inv[n - 1]
    for i in range(n - 2, -1, -1):
        B = sub[i] @ l_inv[i]
        off[i] = -B.T @ diag[i + 1]
        s = l_inv[i].T @ l_inv[i] + B.T @ diag[i + 1] @ B
        diag[i] = 0.5 * (s + s.T)
    return diag, off


@dataclass
class GraphPosterior:
    """MAP estimate with adjacent-pair marginal covariances (the Laplace fit)."""

    mean: np.ndarray                 # (N, D)
    marginals: np.ndarray            # (N, D, D)
    cross: np.ndarray                # (N - 1, D, D), cov(xi_i, xi_{i+1})
    cost: float
    converged: bool
    iterations: int
    accepted_steps: int

    @property
    def num_vars(self) -> int:
        return self.mean.shape[0]

    def pair_covariance(self, i: int) -> np.ndarray:
        """Joint covariance of (xi_i, xi_{i+1}); adjacent pairs share diagonal blocks."""
        d = self.mean.shape[1]
        out = np.empty((2 * d, 2 * d))
        out[:d, :d] = self.marginals[i]
        out[:d, d:] = self.cross[i]
        out[d:, :d] = self.cross[i].T
        out[d:, d:] = self.marginals[i + 1]
        return out


def optimize(graph: FactorGraph, init: np.ndarray, cfg: OptimizerConfig) -> GraphPosterior:
    """Levenberg-Marquardt MAP optimization with monotone accepted-step costs.

    Returns the posterior mean plus adjacent-pair covariances extracted from the
    banded Cholesky factor of the final (undamped) Gauss-Newton information.
    """
    n, d = graph.num_vars, graph.var_dim
    est = np.array(init, dtype=float).reshape(n, d)
    if not np.all(np.isfinite(est)):
        raise NumericalError("initial estimate contains non-finite entries")
    info, grad, cost = linearize(graph, est)
    if not np.isfinite(cost):
        raise NumericalError("cost at the initial estimate is not finite")
    lam = cfg.lambda0
    converged = False
    accepted = 0
    iters = 0
    while iters < cfg.max_iters:
        iters += 1
        try:
            delta = solve_banded(info.damped(lam), -grad)
        except NumericalError:
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                break
            continue
        if float(np.linalg.norm(delta)) <= cfg.min_step_norm:
            converged = True
            break
        cand = est + delta.reshape(n, d)
        cand_cost = graph_cost(graph, cand)
        if np.isfinite(cand_cost) and cand_cost < cost:
            improvement = cost - cand_cost
            est, cost = cand, cand_cost
            accepted += 1
            info, grad, _ = linearize(graph, est)
            lam = max(lam * cfg.lambda_down, 1e-12)
            if improvement <= max(cfg.cost_abs_tol, cfg.cost_rel_tol * max(cost, _TINY)):
                converged = True
                break
        else:
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                # No descent direction even at maximal damping: local optimum.
                converged = True
                break
    l_inv, sub = factor_banded(info)
    marg, cross = marginals_from_factor(l_inv, sub)
    return GraphPosterior(
        mean=est,
        marginals=marg,
        cross=cross,
        cost=cost,
        converged=converged,
        iterations=iters,
        accepted_steps=accepted,
    )
