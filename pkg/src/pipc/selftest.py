"""Built-in oracle checks exposed through the ``selftest`` CLI subcommand.

Each check pits a production code path against an independent dense/quadrature
reference implemented right here with plain numpy/scipy calls.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from . import pipc_planner as planner
from .environment import Environment2D, build_sdf
from .factor_graph import BlockTridiagonal, OptimizerConfig, solve_banded
from .gp_model import LinearSdeModel, process_noise_cov
from .pipc_planner import Belief, FactorParams, HorizonConfig


def check_banded_vs_dense(seed: int = 0) -> tuple[bool, str]:
    """solve_banded against a dense numpy solve on a random SPD banded system."""
    rng = np.random.default_rng(seed)
    n, d = 12, 4
    diag = np.empty((n, d, d))
    upper = rng.standard_normal((n - 1, d, d))
    for i in range(n):
        m = rng.standard_normal((d, d))
        diag[i] = m @ m.T + (2 * d) * np.eye(d)
    info = BlockTridiagonal(diag, upper)
    rhs = rng.standard_normal(n * d)
    x = solve_banded(info, rhs)
    x_dense = np.linalg.solve(info.to_dense(), rhs)
    err = float(np.linalg.norm(x - x_dense) / np.linalg.norm(x_dense))
    return err < 1e-10, f"relative error {err:.3e}"


def check_quadrature_vs_closed_form() -> tuple[bool, str]:
    """Closed-form process-noise covariance against Gauss-Legendre quadrature."""
    model = LinearSdeModel.double_integrator(2, q_x=0.04, q_u=10.0, sigma_m=0.01)
    dt = 0.2
    nodes, weights = np.polynomial.legendre.leggauss(40)
    s = 0.5 * dt * (nodes + 1.0)
    w = 0.5 * dt * weights
    V = model.diffusion
    M = model.drift
    ref = np.zeros_like(V)
    for sk, wk in zip(s, w):
        phi = expm(M * (dt - sk))
        ref += wk * (phi @ V @ phi.T)
    q = process_noise_cov(model, dt)
    err = float(np.max(np.abs(q - ref)) / np.max(np.abs(ref)))
    return err < 1e-8, f"relative error {err:.3e}"


def check_filter_vs_batch(seed: int = 0) -> tuple[bool, str]:
    """Policy filter against dense joint-Gaussian conditioning on a linear problem."""
    rng = np.random.default_rng(seed)
    params = FactorParams(sigma_m=0.05, q_x=0.3, q_u=1.0)
    hcfg = HorizonConfig(t_h=0.8, dt_support=0.2, n_ip=4, t_max=5.0, gdist=0.1)
    model = planner.model_for(params, d=1)
    sdf = build_sdf(Environment2D(), visible_only=False, cell_size=0.5, pad=1.0)
    start = np.array([0.0, 0.0, 0.0])
    goal = np.array([2.0, 0.0, 0.0])
    belief = planner.initial_belief(start, params, hcfg, model)
    post = planner.get_laplace_approx(
        belief, sdf, goal, start, params, hcfg, OptimizerConfig(), model)

    # Dense reference: joint Gaussian over the fine-time chain with the anchor
    # prior and the (frozen) goal factors folded in as Gaussian evidence.
    delta = hcfg.delta
    n_fine = (hcfg.num_support - 1) * hcfg.n_ip + 1
    dim = model.aug_dim
    phi = expm(model.drift * delta)
    q = process_noise_cov(model, delta)
    mean = np.zeros(n_fine * dim)
    cov = np.zeros((n_fine * dim, n_fine * dim))
    mean[:dim] = belief.mean
    cov[:dim, :dim] = planner.anchor_covariance(params, hcfg, model)
    for k in range(1, n_fine):
        a, b = (k - 1) * dim, k * dim
        mean[b : b + dim] = phi @ mean[a : a + dim]
        cov[b : b + dim, b : b + dim] = phi @ cov[a : a + dim, a : a + dim] @ phi.T + q
        for j in range(k):
            c = j * dim
            cov[b : b + dim, c : c + dim] = phi @ cov[a : a + dim, c : c + dim]
            cov[c : c + dim, b : b + dim] = cov[b : b + dim, c : c + dim].T

    def condition(mean, cov, H, value, noise):
        S = H @ cov @ H.T + noise
        gain = cov @ H.T @ np.linalg.inv(S)
        mean = mean + gain @ (value - H @ mean)
        cov = cov - gain @ H @ cov
        return mean, 0.5 * (cov + cov.T)

    warm = planner.prior_rollout(belief, hcfg, model)
    for i in range(1, hcfg.num_support):
        w = planner.goal_weight(warm[i], goal, start, params)
        H = np.zeros((dim, n_fine * dim))
        H[:, i * hcfg.n_ip * dim : (i * hcfg.n_ip + 1) * dim] = np.eye(dim)
        mean, cov = condition(mean, cov, H, goal, np.linalg.inv(w))

    pol = planner.policy_prior(post)
    worst = 0.0
    sd = model.state_dim
    r_noise = params.sigma_m**2 * np.eye(sd)
    for k in range(2 * hcfg.n_ip):
        z = rng.standard_normal(sd) * 0.3
        dt_step = 0.0 if k == 0 else delta
        pol, u = planner.filter_policy(z, pol, post, model, params, "pomdp-cl", dt_step)
        H = np.zeros((sd, n_fine * dim))
        H[:, k * dim : k * dim + sd] = np.eye(sd)
        mean, cov = condition(mean, cov, H, z, r_noise)
        u_ref = mean[k * dim + sd : (k + 1) * dim]
        worst = max(worst, float(np.max(np.abs(u - u_ref))))
        Hu = np.zeros((model.d, n_fine * dim))
        Hu[:, k * dim + sd : (k + 1) * dim] = np.eye(model.d)
        mean, cov = condition(mean, cov, Hu, u, np.zeros((model.d, model.d)))
    return worst < 1e-6, f"max action deviation {worst:.3e}"


CHECKS = [
    ("banded-solver-vs-dense", check_banded_vs_dense),
    ("quadrature-vs-closed-form", check_quadrature_vs_closed_form),
    ("filter-vs-batch", check_filter_vs_batch),
]


def run_selftest(printer=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        passed, detail = fn()
        printer(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and passed
    return ok
