"""Gaussian-process trajectory prior induced by a linear SDE on augmented states.

The augmented state xi = (position, velocity, control) stacks the double-integrator
system state with the control treated as an extra Brownian-motion coordinate.  The
resulting prior over trajectories is Markov, and everything needed downstream
(transition matrices, process-noise covariances, pairwise prior residuals, and
posterior-mean interpolation between support states) has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .errors import NumericalError

# Condition-number limit for inverting the process-noise covariance; beyond this
# the hyperparameters are considered degenerate.
COND_LIMIT = 1e12

_QUAD_NODES = 64


@dataclass(frozen=True, eq=False)
class LinearSdeModel:
    """Linear SDE defining the system dynamics, control prior and observation model.

    State block: dx = (A x + B u + b) dt + F dw  with F F^T given by ``F_sq``.
    Control block (hidden control state y identified with u):
    du = (H u + eta) dt + G dw with G G^T given by ``G_sq``.
    Observations: z = C x + v, v ~ N(0, Q_v).

    ``d`` is the workspace dimension; x is R^{2d} (position, velocity), u is R^d.
    """

    d: int
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    F_sq: np.ndarray
    H: np.ndarray
    D: np.ndarray
    eta: np.ndarray
    G_sq: np.ndarray
    C: np.ndarray
    Q_v: np.ndarray

    def __post_init__(self):
        d = self.d
        if d < 1:
            raise ValueError("workspace dimension must be >= 1")
        checks = [
            ("A", self.A, (2 * d, 2 * d)),
            ("B", self.B, (2 * d, d)),
            ("b", self.b, (2 * d,)),
            ("F_sq", self.F_sq, (2 * d, 2 * d)),
            ("H", self.H, (d, d)),
            ("D", self.D, (d, d)),
            ("eta", self.eta, (d,)),
            ("G_sq", self.G_sq, (d, d)),
            ("C", self.C, (2 * d, 2 * d)),
            ("Q_v", self.Q_v, (2 * d, 2 * d)),
        ]
        for name, arr, shape in checks:
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        for name, arr in (("F_sq", self.F_sq), ("G_sq", self.G_sq), ("Q_v", self.Q_v)):
            if not np.allclose(arr, arr.T):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(arr)) < -1e-12:
                raise ValueError(f"{name} must be positive semi-definite")
        if np.min(np.linalg.eigvalsh(self.Q_v)) <= 0:
            raise ValueError("Q_v must be positive definite")
        object.__setattr__(self, "_di_params", _double_integrator_params(self))

    @property
    def state_dim(self) -> int:
        return 2 * self.d

    @property
    def aug_dim(self) -> int:
        return 3 * self.d

    @property
    def drift(self) -> np.ndarray:
        """Augmented drift [[A, B], [0, H]] acting on xi = (x, u)."""
        d = self.d
        M = np.zeros((3 * d, 3 * d))
        M[: 2 * d, : 2 * d] = self.A
        M[: 2 * d, 2 * d :] = self.B
        M[2 * d :, 2 * d :] = self.H
        return M

    @property
    def diffusion(self) -> np.ndarray:
        """Augmented instantaneous noise covariance diag(F F^T, G G^T)."""
        d = self.d
        V = np.zeros((3 * d, 3 * d))
        V[: 2 * d, : 2 * d] = self.F_sq
        V[2 * d :, 2 * d :] = self.G_sq
        return V

    @property
    def is_double_integrator(self) -> bool:
        return self._di_params is not None

    @property
    def q_x(self) -> float:
        if self._di_params is None:
            raise ValueError("model is not in double-integrator form")
        return self._di_params[0]

    @property
    def q_u(self) -> float:
        if self._di_params is None:
            raise ValueError("model is not in double-integrator form")
        return self._di_params[1]

    @property
    def sigma_m(self) -> float:
        return float(np.sqrt(self.Q_v[0, 0]))

    @classmethod
    def double_integrator(cls, d: int, q_x: float, q_u: float, sigma_m: float) -> "LinearSdeModel":
        """Benchmark model: double integrator driven by a Brownian-motion control.

        q_x scales the white-noise acceleration disturbance on the velocity block,
        q_u the diffusion of the control coordinate, and sigma_m the observation
        noise standard deviation (Q_v = sigma_m^2 I).
        """
        if q_x < 0 or q_u < 0:
            raise ValueError("diffusion scales must be non-negative")
        if sigma_m <= 0:
            raise ValueError("sigma_m must be positive")
        I = np.eye(d)
        Z = np.zeros((d, d))
        A = np.block([[Z, I], [Z, Z]])
        B = np.vstack([Z, I])
        F_sq = np.block([[Z, Z], [Z, q_x * I]])
        return cls(
            d=d,
            A=A,
            B=B,
            b=np.zeros(2 * d),
            F_sq=F_sq,
            H=Z.copy(),
            D=Z.copy(),
            eta=np.zeros(d),
            G_sq=q_u * I,
            C=np.eye(2 * d),
            Q_v=sigma_m**2 * np.eye(2 * d),
        )


def _double_integrator_params(model: LinearSdeModel) -> tuple[float, float] | None:
    """Return (q_x, q_u) when the model has the exact benchmark structure, else None."""
    d = model.d
    I = np.eye(d)
    Z = np.zeros((d, d))
    q_x = float(model.F_sq[d, d]) if d > 0 else 0.0
    q_u = float(model.G_sq[0, 0])
    expected_A = np.block([[Z, I], [Z, Z]])
    ok = (
        np.array_equal(model.A, expected_A)
        and np.array_equal(model.B, np.vstack([Z, I]))
        and not model.b.any()
        and not model.H.any()
        and not model.eta.any()
        and np.array_equal(model.F_sq[:d], np.zeros((d, 2 * d)))
        and np.array_equal(model.F_sq[d:, :d], Z)
        and np.array_equal(model.F_sq[d:, d:], q_x * I)
        and np.array_equal(model.G_sq, q_u * I)
    )
    return (q_x, q_u) if ok else None


@dataclass(frozen=True)
class AugmentedState:
    """One instant of the augmented trajectory; ordering (p, v, u) is fixed."""

    position: np.ndarray
    velocity: np.ndarray
    control: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        v = np.asarray(self.velocity, dtype=float)
        u = np.asarray(self.control, dtype=float)
        if not (p.shape == v.shape == u.shape) or p.ndim != 1:
            raise ValueError("position, velocity and control must be vectors of equal length")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "control", u)

    @property
    def d(self) -> int:
        return self.position.shape[0]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.control])

    @classmethod
    def from_vector(cls, xi: np.ndarray, time: float = 0.0) -> "AugmentedState":
        xi = np.asarray(xi, dtype=float)
        if xi.ndim != 1 or xi.shape[0] % 3:
            raise ValueError("augmented state vector length must be a multiple of 3")
        d = xi.shape[0] // 3
        return cls(xi[:d], xi[d : 2 * d], xi[2 * d :], time)

    @classmethod
    def at_rest(cls, position, time: float = 0.0) -> "AugmentedState":
        p = np.asarray(position, dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p), time)


# Per-axis (d = 1) building blocks.  For the benchmark model every 3d x 3d matrix
# below is a Kronecker product (3x3 block) x I_d, so the heavy lifting happens on
# 3x3 matrices and is cached on the (q_x, q_u, dt) scalars.


@lru_cache(maxsize=None)
def _phi_axis(dt: float) -> np.ndarray:
    m = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _qgp_axis(q_x: float, q_u: float, dt: float) -> np.ndarray:
    dt2 = dt * dt
    dt3 = dt2 * dt
    dt4 = dt3 * dt
    dt5 = dt4 * dt
    q11 = q_x * dt3 / 3.0 + q_u * dt5 / 20.0
    q12 = q_x * dt2 / 2.0 + q_u * dt4 / 8.0
    q13 = q_u * dt3 / 6.0
    q22 = q_x * dt + q_u * dt3 / 3.0
    q23 = q_u * dt2 / 2.0
    q33 = q_u * dt
    m = np.array([[q11, q12, q13], [q12, q22, q23], [q13, q23, q33]])
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _interp_axis(q_x: float, q_u: float, dt: float, tau: float):
    """Per-axis interpolation gains and conditional covariance on [0, dt].

    Returns (Lambda, Psi, cond_cov), each 3x3, for the posterior-mean map
    xi(tau) = Lambda xi_0 + Psi xi_dt with residual covariance cond_cov.
    """
    if tau <= 0.0:
        out = (np.eye(3), np.zeros((3, 3)), np.zeros((3, 3)))
    elif tau >= dt:
        out = (np.zeros((3, 3)), np.eye(3), np.zeros((3, 3)))
    else:
        q_tau = _qgp_axis(q_x, q_u, tau)
        phi_rest = _phi_axis(dt - tau)
        q_dt = _qgp_axis(q_x, q_u, dt)
        psi = np.linalg.solve(q_dt, (q_tau @ phi_rest.T).T).T
        lam = _phi_axis(tau) - psi @ _phi_axis(dt)
        cond = q_tau - psi @ phi_rest @ q_tau
        out = (lam, psi, 0.5 * (cond + cond.T))
    for m in out:
        m.setflags(write=False)
    return out


def _kron_eye(block: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return np.array(block)
    return np.kron(block, np.eye(d))


def transition_matrix(model: LinearSdeModel, dt: float) -> np.ndarray:
    """State transition matrix exp(M dt) of the augmented drift M = [[A, B], [0, H]].

    For the benchmark the drift is nilpotent and the exponential truncates to an
    exact polynomial; general drifts fall back to a matrix exponential.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if model.is_double_integrator:
        return _kron_eye(_phi_axis(dt), model.d)
    M = model.drift
    M2 = M @ M
    if not (M2 @ M).any():
        return np.eye(model.aug_dim) + M * dt + M2 * (0.5 * dt * dt)
    phi = expm(M * dt)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("matrix exponential of the drift did not converge")
    return phi


def process_noise_cov(model: LinearSdeModel, dt: float) -> np.ndarray:
    """Covariance of the integrated process noise accumulated over one interval.

    Closed form for the benchmark drift/diffusion; Gauss-Legendre quadrature of
    Phi(dt - s) V Phi(dt - s)^T otherwise.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if model.is_double_integrator:
        return _kron_eye(_qgp_axis(model.q_x, model.q_u, dt), model.d)
    nodes, weights = np.polynomial.legendre.leggauss(_QUAD_NODES)
    s = 0.5 * dt * (nodes + 1.0)
    w = 0.5 * dt * weights
    V = model.diffusion
    Q = np.zeros((model.aug_dim, model.aug_dim))
    for sk, wk in zip(s, w):
        phi = transition_matrix(model, dt - sk)
        Q += wk * (phi @ V @ phi.T)
    return 0.5 * (Q + Q.T)


@dataclass(frozen=True, eq=False)
class GpInterval:
    """Precomputed transition/noise matrices for one support spacing."""

    model: LinearSdeModel
    dt: float
    Phi: np.ndarray
    Q_gp: np.ndarray
    Q_gp_inv: np.ndarray

    @classmethod
    def for_model(cls, model: LinearSdeModel, dt: float) -> "GpInterval":
        Phi = transition_matrix(model, dt)
        Q = process_noise_cov(model, dt)
        cond = np.linalg.cond(Q)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise NumericalError(
                f"process-noise covariance is singular to working precision "
                f"(condition estimate {cond:.3g}); degenerate hyperparameters"
            )
        L = np.linalg.cholesky(Q)
        Q_inv = np.linalg.inv(L).T @ np.linalg.inv(L)
        return cls(model=model, dt=dt, Phi=Phi, Q_gp=Q, Q_gp_inv=0.5 * (Q_inv + Q_inv.T))


def gp_prior_residual(
    interval: GpInterval, xi_i: np.ndarray, xi_j: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise prior residual r = Phi xi_i - xi_j and its weight Q_gp^{-1}.

    The factor cost is 0.5 r^T Q_gp^{-1} r; jacobians are (Phi, -I).
    """
    xi_i = np.asarray(xi_i, dtype=float)
    xi_j = np.asarray(xi_j, dtype=float)
    n = interval.Phi.shape[0]
    if xi_i.shape != (n,) or xi_j.shape != (n,):
        raise ValueError(f"expected state vectors of length {n}")
    return interval.Phi @ xi_i - xi_j, interval.Q_gp_inv


def interpolation_matrices(
    model: LinearSdeModel, dt: float, tau: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Lambda, Psi, conditional covariance) for xi(tau) given the interval endpoints."""
    if tau < -1e-12 or tau > dt + 1e-12:
        raise ValueError(f"tau={tau} outside interval [0, {dt}]")
    if model.is_double_integrator:
        lam, psi, cond = _interp_axis(model.q_x, model.q_u, dt, float(tau))
        d = model.d
        return _kron_eye(lam, d), _kron_eye(psi, d), _kron_eye(cond, d)
    n = model.aug_dim
    if tau <= 0:
        return np.eye(n), np.zeros((n, n)), np.zeros((n, n))
    if tau >= dt:
        return np.zeros((n, n)), np.eye(n), np.zeros((n, n))
    q_tau = process_noise_cov(model, tau)
    phi_rest = transition_matrix(model, dt - tau)
    q_dt = process_noise_cov(model, dt)
    psi = np.linalg.solve(q_dt, (q_tau @ phi_rest.T).T).T
    lam = transition_matrix(model, tau) - psi @ transition_matrix(model, dt)
    cond = q_tau - psi @ phi_rest @ q_tau
    return lam, psi, 0.5 * (cond + cond.T)


def gp_interpolate(
    interval: GpInterval, xi_i: np.ndarray, xi_j: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior-mean state at time tau in [0, dt] between two support states.

    Returns (xi_tau, Lambda, Psi); Lambda and Psi are the jacobians with respect
    to xi_i and xi_j.
    """
    if tau < -1e-12 or tau > interval.dt + 1e-12:
        raise ValueError(f"tau={tau} outside interval [0, {interval.dt}]")
    lam, psi, _ = interpolation_matrices(interval.model, interval.dt, tau)
    xi_i = np.asarray(xi_i, dtype=float)
    xi_j = np.asarray(xi_j, dtype=float)
    return lam @ xi_i + psi @ xi_j, lam, psi
