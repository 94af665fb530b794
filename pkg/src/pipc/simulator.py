"""Ground-truth system integration, observation generation, the receding-horizon
trial loop in all four modes, and the benchmark grid runner."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import pipc_planner as planner
from .environment import (
    ROBOT_RADIUS,
    Environment2D,
    box_signed_distance,
    build_sdf,
    check_collision,
    sample_environment,
    step_obstacles,
)
from .errors import ConfigError, PipcError
from .factor_graph import OptimizerConfig
from .gp_model import LinearSdeModel
from .pipc_planner import Belief, FactorParams, HorizonConfig, TransitionTable

log = logging.getLogger("pipc.simulator")

OUTCOME_SUCCESS = "success"
OUTCOME_COLLISION = "collision"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_ERROR = "error"

_DEFAULT_START = (2.0, 10.0)
_DEFAULT_GOAL = (28.0, 10.0)
_OBSTACLE_CLEARANCE = 2.0


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines one trial; the seed fixes all randomness."""

    mode: str = planner.MDP_CL
    seed: int = 0
    n_obs: int = 10
    start: tuple[float, float] = _DEFAULT_START
    goal: tuple[float, float] = _DEFAULT_GOAL
    params: FactorParams = field(default_factory=FactorParams)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sdf_cell_size: float = 0.05

    def __post_init__(self):
        if self.mode not in planner.MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {planner.MODES}")
        if self.n_obs < 0:
            raise ConfigError("n_obs must be non-negative")
        if self.sdf_cell_size <= 0:
            raise ConfigError("sdf_cell_size must be positive")

    @property
    def q_x(self) -> float:
        return self.params.q_x

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        kwargs = {}
        for key in ("mode", "seed", "n_obs", "sdf_cell_size"):
            if key in data:
                kwargs[key] = data.pop(key)
        for key in ("start", "goal"):
            if key in data:
                value = data.pop(key)
                if len(value) != 2:
                    raise ConfigError(f"{key} must be a 2D position")
                kwargs[key] = tuple(float(v) for v in value)
        if "q_x" in data:
            data.setdefault("params", {})["q_x"] = data.pop("q_x")
        try:
            if "params" in data:
                kwargs["params"] = FactorParams(**data.pop("params"))
            if "horizon" in data:
                kwargs["horizon"] = HorizonConfig(**data.pop("horizon"))
            if "optimizer" in data:
                kwargs["optimizer"] = OptimizerConfig(**data.pop("optimizer"))
        except TypeError as exc:
            raise ConfigError(f"bad configuration section: {exc}") from exc
        if data:
            raise ConfigError(f"unknown configuration keys: {sorted(data)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "n_obs": self.n_obs,
            "start": list(self.start),
            "goal": list(self.goal),
            "params": dict(vars(self.params)),
            "horizon": dict(vars(self.horizon)),
            "optimizer": dict(vars(self.optimizer)),
            "sdf_cell_size": self.sdf_cell_size,
        }


@dataclass
class SystemState:
    """Ground-truth augmented state (hidden from the planner in POMDP modes)."""

    xi: np.ndarray
    time: float


@dataclass
class TrialResult:
    outcome: str
    time_to_goal: float | None
    path_length: float
    path_cost: float
    samples: np.ndarray                # (n, 1 + 3d): time, position, velocity, control
    seed: int
    mode: str
    diagnostic: str | None = None
    replan_costs: list[float] = field(default_factory=list)
    horizons: list[np.ndarray] = field(default_factory=list)        # planned positions per replan
    obstacle_snapshots: list[np.ndarray] = field(default_factory=list)  # centers at support cadence


@lru_cache(maxsize=64)
def _state_noise_chol(q_x: float, dt: float, d: int) -> np.ndarray:
    """Cholesky factor of the exact zero-order-hold process-noise covariance."""
    if q_x == 0.0:
        return np.zeros((2 * d, 2 * d))
    I = np.eye(d)
    Q = q_x * np.block([[dt**3 / 3.0 * I, dt**2 / 2.0 * I], [dt**2 / 2.0 * I, dt * I]])
    return np.linalg.cholesky(Q)


def state_noise_cov(q_x: float, dt: float, d: int) -> np.ndarray:
    L = _state_noise_chol(q_x, dt, d)
    return L @ L.T


def integrate_system(state: SystemState, u: np.ndarray, model: LinearSdeModel,
                     dt: float, rng: np.random.Generator) -> SystemState:
    """Exact discretization of the double integrator under zero-order-hold control."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    d = model.d
    xi = state.xi
    p = xi[:d] + dt * xi[d : 2 * d] + 0.5 * dt * dt * u
    v = xi[d : 2 * d] + dt * u
    w = _state_noise_chol(model.q_x, dt, d) @ rng.standard_normal(2 * d)
    new_x = np.concatenate([p, v]) + w
    return SystemState(xi=np.concatenate([new_x, u]), time=state.time + dt)


def observe(state: SystemState, model: LinearSdeModel, mode: str,
            rng: np.random.Generator) -> np.ndarray:
    """System-state observation: exact in MDP modes, Gaussian-noisy in POMDP modes."""
    x = state.xi[: model.state_dim]
    if not planner.is_pomdp(mode):
        return x.copy()
    return x + model.sigma_m * rng.standard_normal(model.state_dim)


def _trial_streams(seed: int):
    """Independent per-concern RNG streams so obstacle trajectories and process
    noise are identical across the four modes for a shared trial seed."""
    env_ss, proc_ss, meas_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(env_ss),
        np.random.default_rng(proc_ss),
        np.random.default_rng(meas_ss),
    )


def executed_path_cost(
    samples: np.ndarray,
    obstacle_history: list[np.ndarray],
    goal: np.ndarray,
    start: np.ndarray,
    params: FactorParams,
    hcfg: HorizonConfig,
    model: LinearSdeModel,
    half_extent: float,
    robot_radius: float = ROBOT_RADIUS,
) -> float:
    """Negative-log-factor cost of the executed trajectory.

    Trajectory-prior factors act between executed states at support cadence;
    hinge obstacle costs are charged at every fine sample against the obstacle
    positions current at that sample (exact box distances, no grid); goal
    factors act on every completed support state except the first.
    """
    d = model.d
    xi = samples[:, 1:]
    n_fine = xi.shape[0]
    interval = planner._interval_cached(model, hcfg.dt_support)
    total = 0.0
    support = list(range(0, n_fine, hcfg.n_ip))
    for a, b in zip(support[:-1], support[1:]):
        r = interval.Phi @ xi[a] - xi[b]
        total += 0.5 * float(r @ interval.Q_gp_inv @ r)
    w_obs = 1.0 / params.sigma_obs**2
    for k in range(n_fine):
        centers = obstacle_history[k]
        if centers.shape[0] == 0:
            continue
        z = float(box_signed_distance(xi[k, :d], centers, half_extent)) - robot_radius
        if z < params.eps:
            total += 0.5 * w_obs * (params.eps - z) ** 2
    for idx in support[1:]:
        w = planner.goal_weight(xi[idx], goal, start, params)
        r = xi[idx] - goal
        total += 0.5 * float(r @ w @ r)
    return total


def run_trial(cfg: SimConfig, keep_trajectory: bool = True) -> TrialResult:
    """Run one receding-horizon trial.

    Replans every support step against the currently sensed environment; the
    inner loop at the fine resolution observes, selects the action (policy
    filter in CL modes, open-loop interpolation in OL modes), executes it,
    updates the state estimate and steps the obstacles.  Terminates on goal
    proximity, collision against the true obstacle set, or timeout.
    """
    params = cfg.params
    hcfg = cfg.horizon
    model = planner.model_for(params)
    d = model.d
    delta = hcfg.delta
    n_steps = int(round(hcfg.t_max / delta))
    mode = cfg.mode
    closed_loop = planner.is_closed_loop(mode)

    rng_env, rng_proc, rng_meas = _trial_streams(cfg.seed)
    start_p = np.asarray(cfg.start, dtype=float)
    goal_p = np.asarray(cfg.goal, dtype=float)
    start_v = np.concatenate([start_p, np.zeros(2 * d)])
    goal_v = np.concatenate([goal_p, np.zeros(2 * d)])

    env = sample_environment(cfg.n_obs, rng_env, exclude_center=start_p,
                             exclude_radius=_OBSTACLE_CLEARANCE)
    state = SystemState(xi=start_v.copy(), time=0.0)
    belief = planner.initial_belief(start_v, params, hcfg, model, time=0.0)
    table = TransitionTable(model, hcfg)
    sdf_pad = params.eps + ROBOT_RADIUS + 0.5

    rows = [np.concatenate([[0.0], state.xi])]
    obstacle_history = [env.obstacle_centers.copy()]
    replan_costs: list[float] = []
    horizons: list[np.ndarray] = []
    snapshots: list[np.ndarray] = [env.obstacle_centers.copy()]

    def finish(outcome, t_goal, diagnostic=None):
        samples = np.array(rows)
        path_length = float(np.sum(np.linalg.norm(np.diff(samples[:, 1 : 1 + d], axis=0), axis=1)))
        cost = executed_path_cost(samples, obstacle_history, goal_v, start_v, params,
                                  hcfg, model, env.half_extent)
        return TrialResult(
            outcome=outcome,
            time_to_goal=t_goal,
            path_length=path_length,
            path_cost=cost,
            samples=samples if keep_trajectory else samples[:0],
            seed=cfg.seed,
            mode=mode,
            diagnostic=diagnostic,
            replan_costs=replan_costs,
            horizons=horizons if keep_trajectory else [],
            obstacle_snapshots=snapshots if keep_trajectory else [],
        )

    if float(np.linalg.norm(start_p - goal_p)) <= hcfg.gdist:
        return finish(OUTCOME_SUCCESS, 0.0)

    posterior = None
    pol_belief: Belief | None = None
    warm = None
    for k in range(n_steps):
        t_k = k * delta
        k_fine = k % hcfg.n_ip
        if k_fine == 0:
            sdf = build_sdf(env, visible_only=True, robot_position=state.xi[:d],
                            cell_size=cfg.sdf_cell_size, pad=sdf_pad)
            try:
                posterior = planner.get_laplace_approx(
                    belief, sdf, goal_v, start_v, params, hcfg, cfg.optimizer, model,
                    warm_start=warm)
            except PipcError as exc:
                log.warning("replan failed at t=%.2f: %s", t_k, exc)
                return finish(OUTCOME_ERROR, None, diagnostic=str(exc))
            replan_costs.append(posterior.cost)
            if keep_trajectory:
                horizons.append(posterior.means[:, :d].copy())
            warm = planner.shift_warm_start(posterior, model)
            if closed_loop:
                pol_belief = planner.policy_prior(posterior)
        z = observe(state, model, mode, rng_meas)
        try:
            if closed_loop:
                dt_step = 0.0 if k_fine == 0 else delta
                statics = None if k_fine == 0 else table[k_fine - 1]
                pol_belief, u = planner.filter_policy(
                    z, pol_belief, posterior, model, params, mode, dt_step, statics)
            else:
                u = planner.open_loop_policy(posterior, t_k, model)
        except PipcError as exc:
            log.warning("policy update failed at t=%.2f: %s", t_k, exc)
            return finish(OUTCOME_ERROR, None, diagnostic=str(exc))
        rows[-1][1 + 2 * d :] = u  # control applied over [t_k, t_k + delta)
        state = integrate_system(state, u, model, delta, rng_proc)
        belief = planner.filter_state(z, u, belief, model, params, mode, delta)
        env = step_obstacles(env, delta, rng_env)
        obstacle_history.append(env.obstacle_centers.copy())
        rows.append(np.concatenate([[state.time], state.xi]))
        if (k + 1) % hcfg.n_ip == 0:
            snapshots.append(env.obstacle_centers.copy())
        if float(np.linalg.norm(state.xi[:d] - goal_p)) <= hcfg.gdist:
            return finish(OUTCOME_SUCCESS, state.time)
        if check_collision(env, state.xi[:d]):
            return finish(OUTCOME_COLLISION, None)
    return finish(OUTCOME_TIMEOUT, None)


def trial_seed(base_seed: int, q_x: float, n_obs: int, trial: int) -> int:
    """Per-trial seed shared across the four modes of one benchmark cell."""
    key = (int(round(q_x * 1e6)), int(n_obs), int(trial))
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class CellAggregate:
    mode: str
    q_x: float
    n_obs: int
    success_rate: float
    k_success: int
    k_total: int
    mean_time: float
    std_time: float
    mean_length: float
    std_length: float
    mean_cost: float
    std_cost: float


def aggregate_cell(mode: str, q_x: float, n_obs: int, results: list[TrialResult]) -> CellAggregate:
    """Success rate over all trials; time/length/cost moments over successes only."""
    succ = [r for r in results if r.outcome == OUTCOME_SUCCESS]
    k = len(results)

    def moments(values):
        if not values:
            return float("nan"), float("nan")
        arr = np.array(values)
        return float(arr.mean()), float(arr.std())

    mean_t, std_t = moments([r.time_to_goal for r in succ])
    mean_l, std_l = moments([r.path_length for r in succ])
    mean_c, std_c = moments([r.path_cost for r in succ])
    return CellAggregate(
        mode=mode, q_x=q_x, n_obs=n_obs,
        success_rate=len(succ) / k if k else float("nan"),
        k_success=len(succ), k_total=k,
        mean_time=mean_t, std_time=std_t,
        mean_length=mean_l, std_length=std_l,
        mean_cost=mean_c, std_cost=std_c,
    )


def _benchmark_task(args):
    cfg_dict, = args
    cfg = SimConfig.from_dict(cfg_dict)
    return run_trial(cfg, keep_trajectory=False)


def run_benchmark(
    modes: list[str],
    q_x_values: list[float],
    n_obs_values: list[int],
    trials: int,
    base_seed: int = 0,
    base_config: SimConfig | None = None,
    jobs: int = 1,
) -> tuple[list[tuple], list[CellAggregate]]:
    """Run the benchmark grid; trial seeds are shared across modes within a cell.

    Returns (trial_rows, aggregates) where each trial row is
    (mode, q_x, n_obs, trial_index, seed, TrialResult).
    """
    if trials < 1:
        raise ConfigError("need at least one trial per cell")
    base = base_config or SimConfig()
    tasks = []
    for mode in modes:
        for q_x in q_x_values:
            for n_obs in n_obs_values:
                for k in range(trials):
                    cfg = replace(
                        base,
                        mode=mode,
                        n_obs=n_obs,
                        seed=trial_seed(base_seed, q_x, n_obs, k),
                        params=replace(base.params, q_x=q_x),
                    )
                    tasks.append(((mode, q_x, n_obs, k), cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_benchmark_task, [(cfg.to_dict(),) for _, cfg in tasks],
                                    chunksize=4))
    else:
        results = []
        for (mode, q_x, n_obs, k), cfg in tasks:
            log.info("trial mode=%s q_x=%.3g n_obs=%d k=%d", mode, q_x, n_obs, k)
            results.append(run_trial(cfg, keep_trajectory=False))
    trial_rows = [
        (key[0], key[1], key[2], key[3], cfg.seed, res)
        for (key, cfg), res in zip(tasks, results)
    ]
    aggregates = []
    for mode in modes:
        for q_x in q_x_values:
            for n_obs in n_obs_values:
                cell = [res for (m, q, n, k, _, res) in trial_rows
                        if m == mode and q == q_x and n == n_obs]
                aggregates.append(aggregate_cell(mode, q_x, n_obs, cell))
    return trial_rows, aggregates
