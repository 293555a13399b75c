from __future__ import annotations

from collections import deque

import pytest

from edgebench.config import ValidatedConfig, scenario_from_dict, validate_config
from edgebench.state import SystemState, TaskEntry, TaskLocation, initial_state


def base_scenario(**overrides) -> dict:
    """A small valid scenario; tests override what they care about."""
    data = {
        "scenario_id": "test",
        "num_mds": 2,
        "num_ess": 2,
        "horizon": 100,
        "slot_duration": 0.1,
        "area_side": 100.0,
        "task_size_bits": 5.0e4,
        "task_cycles": 5.0e7,
        "arrival_rates": 0.3,
        "arrival_kind": "bernoulli",
        "power_levels": [0.0, 0.1],
        "bandwidth_hz": 1.0e6,
        "noise_psd": 1.0e-15,
        "pathloss_exponent": 3.0,
        "reference_gain": 1.0e-3,
        "reference_distance": 1.0,
        "cores_per_es": 2,
        "core_speed_hz": 1.0e9,
        "rng_seed": 1,
    }
    data.update(overrides)
    return data


def make_vcfg(**overrides) -> ValidatedConfig:
    return validate_config(scenario_from_dict(base_scenario(**overrides)))


def seed_state(
    vcfg: ValidatedConfig,
    tx=None,
    compute=None,
    local=None,
    channel=None,
    born_slot: int = 0,
) -> SystemState:
    """Build a coherent state with the given backlogs (ledger included)."""
    state = initial_state(vcfg)
    next_id = 0

    def mint(i: int, location: TaskLocation, es: int = -1) -> int:
        nonlocal next_id
        tid = next_id
        next_id += 1
        state.tasks[tid] = TaskEntry(tid, i, born_slot, location, es=es)
        return tid

    if tx:
        for i, n in enumerate(tx):
            for _ in range(n):
                state.tx_fifo[i].append(mint(i, TaskLocation.MD_QUEUE))
            state.tx_backlog[i] = n
    if compute:
        for i, row in enumerate(compute):
            for j, n in enumerate(row):
                for _ in range(n):
                    state.compute_fifo[i][j].append(
                        mint(i, TaskLocation.ES_QUEUE, es=j)
                    )
                state.compute_backlog[i][j] = n
    if local:
        for i, n in enumerate(local):
            for _ in range(n):
                state.local_fifo[i].append(mint(i, TaskLocation.LOCAL_QUEUE))
            state.local_backlog[i] = n
    if channel:
        state.channel_idx = [list(row) for row in channel]
    state.next_task_id = next_id
    state.total_arrivals = next_id
    return state
