"""Slotted-time simulator and policy bench for edge task offloading.

Mobile devices queue tasks for uplink to multi-core edge servers; each
device's transmission queue feeds a per-(device, server) computing queue,
forming a communication-computing tandem. The package provides the
deterministic seeded simulator, a family of per-slot policies
(transmission-first, computation-first, max-weight backpressure with an
energy penalty, random, local-offload threshold), exact value-iteration
solving of small truncated instances, inter-server migration over backhaul
links, KPI summaries, and a CLI for runs and arrival-rate sweeps.
"""

from .config import (
    BackhaulLink,
    LocalComputeSpec,
    ScenarioConfig,
    ValidatedConfig,
    load_scenario,
    mean_gain,
    place_nodes,
    scenario_from_dict,
    validate_config,
)
from .dynamics import (
    ArrivalRealization,
    RateRealization,
    SlotRecord,
    Streams,
    computing_rate,
    draw_arrivals,
    evolve_channels,
    run_trajectory,
    step,
    transmission_rate,
)
from .errors import (
    ActionInvalid,
    EdgebenchError,
    IncompatibleRuns,
    InconsistentDimensions,
    LocalComputeDisabled,
    MalformedConfig,
    NonConvergence,
    OracleTooLarge,
    SpecMismatch,
    StateSpaceTooLarge,
)
from .metrics import ComparisonRow, RunSummary, compare_runs, summarize
from .multihop import advance_in_transit, plan_migrations
from .policies import (
    BackpressurePolicy,
    ComputationBasedPolicy,
    LocalOffloadThresholdPolicy,
    RandomFeasiblePolicy,
    TransmissionBasedPolicy,
    make_policy,
)
from .state import Action, Migration, SystemState, TaskEntry, TaskLocation, initial_state

__all__ = [
    "Action",
    "ActionInvalid",
    "ArrivalRealization",
    "BackhaulLink",
    "BackpressurePolicy",
    "ComparisonRow",
    "ComputationBasedPolicy",
    "EdgebenchError",
    "IncompatibleRuns",
    "InconsistentDimensions",
    "LocalComputeDisabled",
    "LocalComputeSpec",
    "LocalOffloadThresholdPolicy",
    "MalformedConfig",
    "Migration",
    "NonConvergence",
    "OracleTooLarge",
    "RandomFeasiblePolicy",
    "RateRealization",
    "RunSummary",
    "ScenarioConfig",
    "SlotRecord",
    "SpecMismatch",
    "StateSpaceTooLarge",
    "Streams",
    "SystemState",
    "TaskEntry",
    "TaskLocation",
    "TransmissionBasedPolicy",
    "ValidatedConfig",
    "advance_in_transit",
    "compare_runs",
    "computing_rate",
    "draw_arrivals",
    "evolve_channels",
    "initial_state",
    "load_scenario",
    "make_policy",
    "mean_gain",
    "place_nodes",
    "plan_migrations",
    "run_trajectory",
    "scenario_from_dict",
    "step",
    "summarize",
    "transmission_rate",
    "validate_config",
]
