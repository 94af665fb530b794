"""Receding-horizon planner: per-horizon factor graph construction, Laplace
approximation, recursive policy inference and state estimation.

Each replan builds a graph over support states spaced dt_support apart (anchor
prior, pairwise trajectory-prior factors, hinge obstacle factors at support and
interpolated times, goal factors), optimizes it, and then two Kalman-style
filters run at the fine resolution delta = dt_support / n_ip: one propagating
the policy belief against the horizon posterior, one estimating the augmented
state from observations and executed controls to seed the next anchor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .environment import ROBOT_RADIUS, SignedDistanceField
from .errors import ConfigError, NumericalError
from .factor_graph import (
    FactorGraph,
    GoalFactor,
    GpPriorFactor,
    GraphPosterior,
    InterpolatedObstacleFactor,
    ObstacleFactor,
    OptimizerConfig,
    PriorFactor,
    optimize,
)
from .gp_model import (
    AugmentedState,
    GpInterval,
    LinearSdeModel,
    interpolation_matrices,
    process_noise_cov,
    transition_matrix,
)

MDP_CL = "mdp-cl"
MDP_OL = "mdp-ol"
POMDP_CL = "pomdp-cl"
POMDP_OL = "pomdp-ol"
MODES = (MDP_CL, MDP_OL, POMDP_CL, POMDP_OL)

# Q_goal covariances are floored at (GOAL_COV_FLOOR * sigma_g)^2 so the factor
# stays non-singular when a support state reaches the goal.
GOAL_COV_FLOOR = 1e-3


def is_pomdp(mode: str) -> bool:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode.startswith("pomdp")


def is_closed_loop(mode: str) -> bool:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode.endswith("cl")


@dataclass(frozen=True)
class FactorParams:
    """Factor weights and noise scales for the benchmark graph."""

    sigma_g: float = 1.0
    sigma_fix: float = 1e-4
    sigma_obs: float = 0.02
    sigma_m: float = 0.01
    eps: float = 1.0
    q_u: float = 10.0
    q_x: float = 0.01

    def __post_init__(self):
        for name in ("sigma_g", "sigma_fix", "sigma_obs", "sigma_m", "eps", "q_u"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"factor parameter {name} must be strictly positive")
        if self.q_x < 0:
            raise ConfigError("q_x must be non-negative")


@dataclass(frozen=True)
class HorizonConfig:
    """Receding-horizon timing: preview length, support spacing and fine resolution."""

    t_h: float = 2.0
    dt_support: float = 0.2
    n_ip: int = 20
    t_max: float = 20.0
    gdist: float = 0.2

    def __post_init__(self):
        if self.dt_support <= 0 or self.t_h < self.dt_support:
            raise ConfigError("need t_h >= dt_support > 0")
        if self.n_ip < 1:
            raise ConfigError("n_ip must be >= 1")
        if self.t_max <= 0 or self.gdist <= 0:
            raise ConfigError("t_max and gdist must be positive")
        ratio = self.t_h / self.dt_support
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("t_h must be an integer multiple of dt_support")

    @property
    def delta(self) -> float:
        """Control/observation resolution delta = dt_support / n_ip."""
        return self.dt_support / self.n_ip

    @property
    def num_support(self) -> int:
        return int(round(self.t_h / self.dt_support)) + 1


@dataclass
class Belief:
    """Gaussian belief over one augmented state."""

    mean: np.ndarray
    cov: np.ndarray
    time: float


@dataclass
class HorizonPosterior:
    """Laplace approximation over one horizon window of support states."""

    t0: float
    dt_support: float
    graph_posterior: GraphPosterior
    goal: np.ndarray
    sdf: SignedDistanceField | None

    @property
    def means(self) -> np.ndarray:
        return self.graph_posterior.mean

    @property
    def num_support(self) -> int:
        return self.graph_posterior.num_vars

    @property
    def cost(self) -> float:
        return self.graph_posterior.cost

    @property
    def converged(self) -> bool:
        return self.graph_posterior.converged

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_support * np.arange(self.num_support)

    def interval_index(self, t: float) -> int:
        idx = int(np.floor((t - self.t0) / self.dt_support + 1e-9))
        return min(max(idx, 0), self.num_support - 2)

    def pair_covariance(self, i: int) -> np.ndarray:
        return self.graph_posterior.pair_covariance(i)


def _as_vector(state) -> np.ndarray:
    if isinstance(state, AugmentedState):
        return state.vector
    return np.asarray(state, dtype=float)


def model_for(params: FactorParams, d: int = 2) -> LinearSdeModel:
    return LinearSdeModel.double_integrator(d, params.q_x, params.q_u, params.sigma_m)


@lru_cache(maxsize=64)
def _interval_cached(model: LinearSdeModel, dt: float) -> GpInterval:
    return GpInterval.for_model(model, dt)


def anchor_covariance(params: FactorParams, hcfg: HorizonConfig, model: LinearSdeModel) -> np.ndarray:
    """First-state prior covariance: sigma_fix^2 on the system state, trajectory-prior
    weight (the control block of the interval process noise, q_u * dt) on the control."""
    d = model.d
    diag = np.concatenate(
        [np.full(2 * d, params.sigma_fix**2), np.full(d, params.q_u * hcfg.dt_support)]
    )
    return np.diag(diag)


def initial_belief(start, params: FactorParams, hcfg: HorizonConfig,
                   model: LinearSdeModel, time: float = 0.0) -> Belief:
    return Belief(mean=_as_vector(start), cov=anchor_covariance(params, hcfg, model), time=time)


@lru_cache(maxsize=64)
def _interp_position_maps(model: LinearSdeModel, dt: float, n_ip: int):
    """Position-row interpolation maps for the n_ip interpolated times per interval."""
    d = model.d
    delta = dt / n_ip
    maps = []
    for k in range(1, n_ip + 1):
        lam, psi, _ = interpolation_matrices(model, dt, k * delta)
        maps.append((np.ascontiguousarray(lam[:d]), np.ascontiguousarray(psi[:d])))
    return tuple(maps)


def goal_weight(xi: np.ndarray, goal: np.ndarray, start: np.ndarray, params: FactorParams) -> np.ndarray:
    """Inverse of Q_goal = sigma_g^2 * (|xi - goal|^2 / |start - goal|^2) * I, floored."""
    denom = float(np.dot(start - goal, start - goal))
    if denom == 0.0:
        raise ConfigError("goal coincides with start; the goal weighting is undefined")
    ratio = float(np.dot(xi - goal, xi - goal)) / denom
    var = params.sigma_g**2 * max(ratio, GOAL_COV_FLOOR**2)
    return (1.0 / var) * np.eye(xi.shape[0])


def build_graph(
    belief: Belief,
    sdf: SignedDistanceField,
    goal,
    start,
    params: FactorParams,
    hcfg: HorizonConfig,
    model: LinearSdeModel,
    linearization: np.ndarray,
    robot_radius: float = ROBOT_RADIUS,
) -> FactorGraph:
    """Assemble the per-horizon factor graph.

    ``linearization`` is the warm-start estimate; goal-factor covariances are
    evaluated there once and held fixed during the optimization.
    """
    goal_v = _as_vector(goal)
    start_v = _as_vector(start)
    d = model.d
    n = hcfg.num_support
    interval = _interval_cached(model, hcfg.dt_support)
    lin = np.asarray(linearization, dtype=float).reshape(n, model.aug_dim)

    graph = FactorGraph(num_vars=n, var_dim=model.aug_dim)
    graph.add(PriorFactor(0, belief.mean, np.linalg.inv(anchor_covariance(params, hcfg, model))))
    for i in range(n - 1):
        graph.add(GpPriorFactor(i, i + 1, interval))
    for i in range(n):
        graph.add(ObstacleFactor(i, sdf, robot_radius, params.eps, params.sigma_obs, d))
    maps = _interp_position_maps(model, hcfg.dt_support, hcfg.n_ip)
    for i in range(n - 1):
        for lam_pos, psi_pos in maps:
            graph.add(
                InterpolatedObstacleFactor(
                    i, i + 1, lam_pos, psi_pos, sdf, robot_radius, params.eps, params.sigma_obs
                )
            )
    for i in range(1, n):
        graph.add(GoalFactor(i, goal_v, goal_weight(lin[i], goal_v, start_v, params)))
    return graph


def prior_rollout(belief: Belief, hcfg: HorizonConfig, model: LinearSdeModel) -> np.ndarray:
    """Trajectory-prior mean propagation of the belief mean over the horizon."""
    interval = _interval_cached(model, hcfg.dt_support)
    n = hcfg.num_support
    est = np.empty((n, model.aug_dim))
    est[0] = belief.mean
    for i in range(1, n):
        est[i] = interval.Phi @ est[i - 1]
    return est


def shift_warm_start(prev: HorizonPosterior, model: LinearSdeModel) -> np.ndarray:
    """Warm start for the next replan: previous means shifted one support step,
    tail extrapolated at constant velocity."""
    d = model.d
    means = prev.means
    est = np.empty_like(means)
    est[:-1] = means[1:]
    tail = means[-1].copy()
    tail[:d] += prev.dt_support * tail[d : 2 * d]
    est[-1] = tail
    return est


def get_laplace_approx(
    belief: Belief,
    sdf: SignedDistanceField,
    goal,
    start,
    params: FactorParams,
    hcfg: HorizonConfig,
    optimizer_cfg: OptimizerConfig,
    model: LinearSdeModel,
    warm_start: np.ndarray | None = None,
    robot_radius: float = ROBOT_RADIUS,
) -> HorizonPosterior:
    """One replan: build the horizon graph at the warm start and optimize it."""
    init = prior_rollout(belief, hcfg, model) if warm_start is None else np.asarray(warm_start, float)
    graph = build_graph(belief, sdf, goal, start, params, hcfg, model, init, robot_radius)
    gp = optimize(graph, init, optimizer_cfg)
    return HorizonPosterior(
        t0=belief.time,
        dt_support=hcfg.dt_support,
        graph_posterior=gp,
        goal=_as_vector(goal),
        sdf=sdf,
    )


@dataclass(frozen=True)
class TransitionStatics:
    """Posterior-independent pieces of the fine-step transition within one interval."""

    M1: np.ndarray      # map (xi_i, xi_j) -> mean of xi at tau1
    M2: np.ndarray      # same at tau2
    cov1: np.ndarray    # bridge covariance at tau1 given the pair
    cov2: np.ndarray
    cross: np.ndarray   # bridge cross-covariance cov(xi_tau1, xi_tau2 | pair)


def transition_statics(model: LinearSdeModel, dt: float, tau1: float, tau2: float) -> TransitionStatics:
    lam1, psi1, cov1 = interpolation_matrices(model, dt, tau1)
    lam2, psi2, cov2 = interpolation_matrices(model, dt, tau2)
    if tau2 > 0:
        _, psi12, _ = interpolation_matrices(model, tau2, tau1)
    else:
        psi12 = np.eye(model.aug_dim)
    return TransitionStatics(
        M1=np.hstack([lam1, psi1]),
        M2=np.hstack([lam2, psi2]),
        cov1=cov1,
        cov2=cov2,
        cross=psi12 @ cov2,
    )


class TransitionTable:
    """Per-trial cache of transition statics for each fine step of one interval."""

    def __init__(self, model: LinearSdeModel, hcfg: HorizonConfig):
        delta = hcfg.delta
        dt = hcfg.dt_support
        self.statics = [
            transition_statics(model, dt, k * delta, (k + 1) * delta) for k in range(hcfg.n_ip)
        ]

    def __getitem__(self, k: int) -> TransitionStatics:
        return self.statics[k]


def policy_transition(
    posterior: HorizonPosterior,
    t: float,
    dt_step: float,
    model: LinearSdeModel,
    statics: TransitionStatics | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Conditional Gaussian of xi_{t+dt_step} given xi_t under the horizon posterior.

    Both instants are joint-Gaussian with the bracketing support pair: mean via
    the interpolation maps, covariance via the posterior pair marginal plus the
    bridge (conditional-on-pair) covariances.  Conditioning that joint yields
    (A, c, Sigma) with xi_{t+dt} | xi_t ~ N(A xi_t + c, Sigma).
    """
    if dt_step < 0:
        raise ValueError("dt_step must be non-negative")
    idx = posterior.interval_index(t)
    dt = posterior.dt_support
    tau1 = min(max(t - posterior.t0 - idx * dt, 0.0), dt)
    tau2 = tau1 + dt_step
    if tau2 > dt + 1e-9:
        raise ValueError("the step must stay within one support interval")
    tau2 = min(tau2, dt)
    if statics is None:
        statics = transition_statics(model, dt, tau1, tau2)
    m_pair = np.concatenate([posterior.means[idx], posterior.means[idx + 1]])
    P = posterior.pair_covariance(idx)
    m1 = statics.M1 @ m_pair
    m2 = statics.M2 @ m_pair
    PM2 = P @ statics.M2.T
    C11 = statics.M1 @ P @ statics.M1.T + statics.cov1
    C12 = statics.M1 @ PM2 + statics.cross
    C22 = statics.M2 @ PM2 + statics.cov2
    try:
        A = np.linalg.solve(C11, C12).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("policy-transition conditioning is singular") from exc
    c = m2 - A @ m1
    Sigma = C22 - A @ C12
    return A, c, 0.5 * (Sigma + Sigma.T)


def policy_prior(posterior: HorizonPosterior) -> Belief:
    """Posterior marginal of the first support state; seeds the policy filter."""
    gp = posterior.graph_posterior
    return Belief(mean=gp.mean[0].copy(), cov=gp.marginals[0].copy(), time=posterior.t0)


def _measurement_noise(params: FactorParams, mode: str, state_dim: int) -> np.ndarray:
    if is_pomdp(mode):
        return params.sigma_m**2 * np.eye(state_dim)
    # Exact observations run through the same filter with a near-delta noise.
    return params.sigma_fix**2 * np.eye(state_dim)


def _correct_state_block(mean, cov, z, noise):
    """Kalman correction with observation of the leading state block."""
    k = z.shape[0]
    S = cov[:k, :k] + noise
    try:
        gain = np.linalg.solve(S, cov[:k, :]).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not invertible") from exc
    mean = mean + gain @ (z - mean[:k])
    ikh = np.eye(mean.shape[0])
    ikh[:, :k] -= gain
    cov = ikh @ cov @ ikh.T + gain @ noise @ gain.T
    return mean, 0.5 * (cov + cov.T)


def _condition_on_control(cov: np.ndarray, d: int) -> np.ndarray:
    """Covariance after conditioning on the control block taking its mean value."""
    u = slice(cov.shape[0] - d, cov.shape[0])
    puu = cov[u, u]
    gain = cov[:, u] @ np.linalg.pinv(puu, hermitian=True)
    out = cov - gain @ cov[u, :]
    out[u, :] = 0.0
    out[:, u] = 0.0
    return 0.5 * (out + out.T)


def filter_policy(
    z: np.ndarray,
    prev: Belief,
    posterior: HorizonPosterior,
    model: LinearSdeModel,
    params: FactorParams,
    mode: str,
    dt_step: float,
    statics: TransitionStatics | None = None,
) -> tuple[Belief, np.ndarray]:
    """Advance the policy belief by one fine step and return the action to execute.

    Prediction uses the posterior-conditioned transition; correction uses the
    observation of the system state.  The control block of the corrected mean is
    the executed action, and the stored belief is conditioned on it.
    """
    d = model.d
    mean, cov = prev.mean, prev.cov
    if dt_step > 0:
        A, c, S = policy_transition(posterior, prev.time, dt_step, model, statics)
        mean = A @ mean + c
        cov = A @ cov @ A.T + S
    noise = _measurement_noise(params, mode, model.state_dim)
    mean, cov = _correct_state_block(mean, cov, np.asarray(z, float), noise)
    u = mean[2 * d :].copy()
    cov = _condition_on_control(cov, d)
    return Belief(mean=mean, cov=cov, time=prev.time + dt_step), u


def open_loop_policy(posterior: HorizonPosterior, t: float, model: LinearSdeModel) -> np.ndarray:
    """Control block of the posterior mean interpolated at time t (no feedback)."""
    if t < posterior.t0 - 1e-9 or t > posterior.times[-1] + 1e-9:
        raise ValueError(f"t={t} outside the posterior horizon")
    idx = posterior.interval_index(t)
    dt = posterior.dt_support
    tau = min(max(t - posterior.t0 - idx * dt, 0.0), dt)
    lam, psi, _ = interpolation_matrices(model, dt, tau)
    xi = lam @ posterior.means[idx] + psi @ posterior.means[idx + 1]
    return xi[2 * model.d :]


def predict_belief(belief: Belief, model: LinearSdeModel, dt: float) -> Belief:
    """Propagate a belief through the trajectory-prior dynamics (no correction)."""
    phi = transition_matrix(model, dt)
    q = process_noise_cov(model, dt)
    cov = phi @ belief.cov @ phi.T + q
    return Belief(mean=phi @ belief.mean, cov=0.5 * (cov + cov.T), time=belief.time + dt)


def filter_state(
    z: np.ndarray,
    u: np.ndarray,
    prev: Belief,
    model: LinearSdeModel,
    params: FactorParams,
    mode: str,
    dt_step: float,
) -> Belief:
    """State-estimation filter on the augmented prior dynamics.

    Corrects the belief at the current time with the stacked observation
    (z of the system state, executed control u with near-delta noise), then
    predicts one fine step ahead to seed the next anchor prior.
    """
    d = model.d
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    obs = np.concatenate([z, u])
    noise = np.zeros((3 * d, 3 * d))
    noise[: 2 * d, : 2 * d] = _measurement_noise(params, mode, model.state_dim)
    noise[2 * d :, 2 * d :] = params.sigma_fix**2 * np.eye(d)
    mean, cov = _correct_state_block(prev.mean, prev.cov, obs, noise)
    corrected = Belief(mean=mean, cov=cov, time=prev.time)
    return predict_belief(corrected, model, dt_step)
