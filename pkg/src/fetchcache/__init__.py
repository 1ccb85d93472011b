"""Optimal fetch-or-cache decisions for a central node and M caching nodes."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Action,
    ConfigError,
    Exogenous,
    ExogenousBatch,
    InvalidInputError,
    ModelConfig,
    StorageState,
    is_feasible,
    step_cost,
    transition,
)
from .solver import SolverConfig, ValueTable, bellman_residual, inner_minimize, value_iteration  # noqa: E402
from .sampling import SampleSet, make_sample_set, sample_exogenous  # noqa: E402
from .policies import (  # noqa: E402
    baseline_policies,
    compute_per_node_values,
    dp_policy,
    myopic_policy,
    separable_policy,
)
from .sim import SimConfig, SimReport, compare, simulate  # noqa: E402
