"""Safety-filtered double-integrator control with a learned residual.

A quadratic-program safety filter built on second-order control barrier
functions, whose dynamics model is a double integrator plus a neural
network residual trained online (or offline) from streamed state-control
data, with concurrent-learning adaptive and residual-free baselines and
a benchmarking simulation harness.
"""

from .backend import BACKEND
from .controllers import (
    AdaptiveEstimate,
    CbfGains,
    Obstacle,
    ReferencePoint,
    SafetyConstraint,
    assemble_constraint,
    cbf_value,
    hoacbf_control,
    hoacbf_update,
    hocbf_control,
    knowledge_matrix,
    nodehoacbf_control,
    pid_desired_control,
    reference_circle,
)
from .dynamics import (
    IntegrationError,
    ResidualField,
    make_state,
    nominal_derivative,
    rk4_step,
    true_residual,
    true_step,
)
from .harness import (
    ConfigError,
    HoAcbfConfig,
    InitConfig,
    PidConfig,
    ReferenceConfig,
    Scenario,
    benchmark,
    default_suite,
    hoacbf_grid_search,
    load_scenario,
    load_suite,
    run_scenario,
    scenario_hash,
    scenario_metrics,
)
from .qp import QpSolution, qp_solve
from .residual import (
    ResidualNet,
    flatten,
    load_model,
    net_forward,
    net_jacobian,
    net_param_gradient,
    save_model,
    unflatten,
)
from .simlog import MetricsReport, TrajectoryLog, compute_metrics
from .training import (
    ModelSnapshot,
    Sample,
    Trainer,
    TrainerConfig,
    TrainingQueue,
    knode_loss,
    knode_loss_gradient,
    offline_train,
    predict,
    train_round,
)

__version__ = "0.1.0"
