"""Approximately optimal continuous-time planning and control via Gaussian-process
factor graphs, with a receding-horizon 2D dynamic-obstacle benchmark."""

from .environment import (
    Environment2D,
    Obstacle,
    SignedDistanceField,
    build_sdf,
    check_collision,
    hinge_cost,
    sample_environment,
    step_obstacles,
)
from .errors import ConfigError, NumericalError, PipcError, SdfQueryError
from .factor_graph import (
    BlockTridiagonal,
    Factor,
    FactorGraph,
    GraphPosterior,
    OptimizerConfig,
    graph_cost,
    linearize,
    optimize,
    solve_banded,
)
from .gp_model import (
    AugmentedState,
    GpInterval,
    LinearSdeModel,
    gp_interpolate,
    gp_prior_residual,
    process_noise_cov,
    transition_matrix,
)
from .pipc_planner import (
    MODES,
    Belief,
    FactorParams,
    HorizonConfig,
    HorizonPosterior,
    build_graph,
    filter_policy,
    filter_state,
    get_laplace_approx,
    open_loop_policy,
    policy_prior,
    policy_transition,
)
from .simulator import (
    SimConfig,
    SystemState,
    TrialResult,
    integrate_system,
    observe,
    run_benchmark,
    run_trial,
)

__version__ = "0.1.0"
