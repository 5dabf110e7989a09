"""Replica mean-field simulation and Poisson Hypothesis verification for
fragmentation-interaction-aggregation processes (FIAPs)."""

__version__ = "0.1.0"

from .analytics import (  # noqa: E402
    CompoundPoissonLaw,
    Pmf,
    arrival_limit_law,
    solve_counting_rate,
)
from .network import NetworkState, StepOutcome, simulate_trajectory, step_network  # noqa: E402
from .replica import (  # noqa: E402
    Archive,
    ArrivalTensor,
    ReplicaSystemState,
    RunConfig,
    run_monte_carlo,
    step_replica_system,
)
from .spec import (  # noqa: E402
    ActivationTable,
    FiapSpec,
    IntMap,
    SpecError,
    builtin_instance,
    load_spec,
    validate_spec,
)
from .stats import StatReport  # noqa: E402
from .streams import derive_stream, sample_routing  # noqa: E402

__all__ = [
    "__version__",
    "ActivationTable",
    "Archive",
    "CompoundPoissonLaw",
    "Pmf",
    "StatReport",
    "arrival_limit_law",
    "solve_counting_rate",
    "ArrivalTensor",
    "FiapSpec",
    "IntMap",
    "NetworkState",
    "ReplicaSystemState",
    "RunConfig",
    "SpecError",
    "StepOutcome",
    "builtin_instance",
    "derive_stream",
    "load_spec",
    "run_monte_carlo",
    "sample_routing",
    "simulate_trajectory",
    "step_network",
    "step_replica_system",
    "validate_spec",
]
