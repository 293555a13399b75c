"""Bundled experiment presets.

The "case-study" preset sweeps arrival rate over a 4-ES / 40-MD system on a
100 x 100 m square for the three heuristic policies, and additionally runs
a 2-ES / 2-MD variant small enough for the exact solver, comparing the
solved policy against the heuristics at a saturating arrival rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass
class SweepPlan:
    """One sweep grid: a base scenario x multipliers x policies x seeds."""

    base_scenario: dict[str, Any]
    lambda_multipliers: list[float]
    policies: list[dict[str, Any]]  # {"id": str, "params": {...}}
    seeds: list[int]
    solver: Optional[dict[str, Any]] = None  # settings for on-the-fly "mdp" solves


_CASE_STUDY_BASE: dict[str, Any] = {
    "scenario_id": "case-study",
    "num_mds": 40,
    "num_ess": 4,
    "horizon": 1500,
    "slot_duration": 0.1,
    "area_side": 100.0,
    "task_size_bits": 5.0e4,
    "task_cycles": 5.0e7,
    "arrival_rates": 0.05,
    "arrival_kind": "bernoulli",
    "power_levels": [0.0, 0.05, 0.1],
    "bandwidth_hz": 1.0e6,
    "noise_psd": 1.0e-15,
    "pathloss_exponent": 3.0,
    "reference_gain": 1.0e-3,
    "reference_distance": 1.0,
    "channel_states": [0.5, 1.5],
    "channel_transition": [[0.8, 0.2], [0.2, 0.8]],
    "cores_per_es": 2,
    "core_speed_hz": 1.0e9,
    "es_placement": "grid",
    "md_placement": "uniform",
    "rng_seed": 0,
}

_CASE_STUDY_SMALL_BASE: dict[str, Any] = {
    "scenario_id": "case-study-small",
    "num_mds": 2,
    "num_ess": 2,
    "horizon": 3000,
    "slot_duration": 0.1,
    "area_side": 100.0,
    "task_size_bits": 1.0e5,
    "task_cycles": 5.0e7,
    "arrival_rates": 0.25,
    "arrival_kind": "bernoulli",
    "power_levels": [0.0, 0.1],
    "bandwidth_hz": 1.0e6,
    "noise_psd": 1.0e-15,
    "pathloss_exponent": 3.0,
    "reference_gain": 1.0e-3,
    "reference_distance": 1.0,
    "channel_states": [0.5, 1.5],
    "channel_transition": [[0.9, 0.1], [0.1, 0.9]],
    "cores_per_es": 1,
    "core_speed_hz": 5.0e8,
    "es_placement": "explicit",
    "md_placement": "explicit",
    "es_positions": [[25.0, 50.0], [75.0, 50.0]],
    "md_positions": [[20.0, 50.0], [30.0, 50.0]],
    "rng_seed": 0,
}

_SEEDS_20 = list(range(20))


def case_study_plans() -> list[SweepPlan]:
    """The bundled case-study sweep: main grid plus the solver-sized variant."""
    main = SweepPlan(
        base_scenario=dict(_CASE_STUDY_BASE),
        lambda_multipliers=[1.0, 2.0, 4.0, 6.0, 8.0],
        policies=[
            {"id": "backpressure", "params": {"V": 0.0}},
            {"id": "transmission", "params": {}},
            {"id": "computation", "params": {}},
        ],
        seeds=list(_SEEDS_20),
    )
    small = SweepPlan(
        base_scenario=dict(_CASE_STUDY_SMALL_BASE),
        lambda_multipliers=[4.0],
        policies=[
            {"id": "mdp", "params": {}},
            {"id": "backpressure", "params": {"V": 0.0}},
            {"id": "transmission", "params": {}},
            {"id": "computation", "params": {}},
        ],
        seeds=list(_SEEDS_20),
        solver={"q_max": 2, "k_max": 1, "gamma": 0.95, "epsilon": 1e-6},
    )
    return [main, small]


PRESETS = {
    "case-study": {
        "description": (
            "4 ESs / 40 MDs on a 100x100 m square, arrival-rate sweep over "
            "backpressure vs transmission-only vs computation-only (20 seeds), "
            "plus a 2x2 solver-sized variant adding the exact policy"
        ),
        "plans": case_study_plans,
    },
}
