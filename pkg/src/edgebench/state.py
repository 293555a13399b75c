"""Dynamic per-slot state: queues, the per-task ledger, and control actions.

The simulator keeps two coupled views of every queue: an integer backlog
(fast path for policies and rate laws) and a FIFO of task ids (the ledger,
which is what latency, energy attribution, and conservation checks read).
Every mutation updates both; ``check_coherence`` verifies they agree.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Optional

from .config import ValidatedConfig
from .errors import ActionInvalid, LocalComputeDisabled


class TaskLocation(Enum):
    MD_QUEUE = "md_queue"
    ES_QUEUE = "es_queue"
    LOCAL_QUEUE = "local_queue"
    IN_TRANSIT = "in_transit"
    COMPLETED = "completed"
    DROPPED = "dropped"


DROP_DEADLINE = "deadline"
DROP_OVERFLOW = "overflow"


@dataclass(slots=True)
class TaskEntry:
    """Ledger entry for one task, from arrival to completion or drop.

    Location moves monotonically forward (a task never re-enters the MD
    transmission queue); `es` is the computing ES while in an ES queue,
    and the slot fields are -1 until the corresponding event happens.
    """

    task_id: int
    owner_md: int
    born_slot: int
    location: TaskLocation
    es: int = -1
    completed_slot: int = -1
    dropped_slot: int = -1
    drop_reason: str = ""
    energy_spent: float = 0.0


@dataclass(slots=True)
class TransitBatch:
    """Tasks moving between ESs over one backhaul link, in flight."""

    dst_es: int
    owner_md: int
    arrive_slot: int
    task_ids: list[int]


@dataclass(slots=True)
class Migration:
    """Move `count` tasks of `md` from ES `src_es` to ES `dst_es`."""

    src_es: int
    dst_es: int
    md: int
    count: int


@dataclass
class Action:
    """One slot's control decision.

    power[i] is MD i's transmit power (a configured level; 0 = idle) and
    assoc[i] the ES it uploads to (-1 = none). cores[i][j] is the number of
    ES-j cores serving MD i's computing queue this slot. local_admit[i]
    caps how many of this slot's arrivals at MD i go to the local queue
    (the rest join the transmission queue).
    """

    power: list[float]
    assoc: list[int]
    cores: list[list[int]]
    local_admit: list[int]
    migrate: list[Migration] = field(default_factory=list)

    @classmethod
    def idle(cls, vcfg: ValidatedConfig) -> "Action":
        u, j = vcfg.num_mds, vcfg.num_ess
        return cls(
            power=[0.0] * u,
            assoc=[-1] * u,
            cores=[[0] * j for _ in range(u)],
            local_admit=[0] * u,
        )


@dataclass
class SystemState:
    """All mutable per-slot state of one trajectory.

    tx_backlog / compute_backlog / local_backlog are the scalar queue
    lengths; the *_fifo structures hold the matching task ids oldest-first.
    channel_idx[i][j] indexes into the configured fading states.
    """

    slot: int
    tx_backlog: list[int]
    compute_backlog: list[list[int]]
    local_backlog: list[int]
    channel_idx: list[list[int]]
    tx_fifo: list[Deque[int]]
    compute_fifo: list[list[Deque[int]]]
    local_fifo: list[Deque[int]]
    in_transit: list[TransitBatch]
    tasks: dict[int, TaskEntry]
    next_task_id: int = 0
    total_arrivals: int = 0
    total_completed: int = 0
    total_dropped_deadline: int = 0
    total_dropped_overflow: int = 0
    total_energy: float = 0.0

    def transit_count(self) -> int:
        return sum(len(b.task_ids) for b in self.in_transit)

    def queued_count(self) -> int:
        return (
            sum(self.tx_backlog)
            + sum(sum(row) for row in self.compute_backlog)
            + sum(self.local_backlog)
            + self.transit_count()
        )

    def es_backlog(self, es: int) -> int:
        """Total computing backlog waiting at one ES."""
        return sum(row[es] for row in self.compute_backlog)


def initial_state(vcfg: ValidatedConfig) -> SystemState:
    """Empty queues, all fading chains in state 0, slot 0."""
    u, j = vcfg.num_mds, vcfg.num_ess
    return SystemState(
        slot=0,
        tx_backlog=[0] * u,
        compute_backlog=[[0] * j for _ in range(u)],
        local_backlog=[0] * u,
        channel_idx=[[0] * j for _ in range(u)],
        tx_fifo=[deque() for _ in range(u)],
        compute_fifo=[[deque() for _ in range(j)] for _ in range(u)],
        local_fifo=[deque() for _ in range(u)],
        in_transit=[],
        tasks={},
    )


def find_link(vcfg: ValidatedConfig, es_a: int, es_b: int) -> Optional[int]:
    """Index of the backhaul link joining two ESs (either orientation)."""
    for li, link in enumerate(vcfg.backhaul_links):
        if {link.es_a, link.es_b} == {es_a, es_b}:
            return li
    return None


def validate_action(state: SystemState, vcfg: ValidatedConfig, action: Action) -> None:
    """Raise ActionInvalid unless the action is feasible in `state`."""
    u, j = vcfg.num_mds, vcfg.num_ess
    if (
        len(action.power) != u
        or len(action.assoc) != u
        or len(action.cores) != u
        or len(action.local_admit) != u
    ):
        raise ActionInvalid("action vectors must have one entry per MD")

    levels = vcfg.power_level_set
    local_enabled = vcfg.local_compute is not None
    for i in range(u):
        p = action.power[i]
        if p not in levels:
            raise ActionInvalid(f"md {i}: power {p} not a configured level")
        a = action.assoc[i]
        if not (-1 <= a < j):
            raise ActionInvalid(f"md {i}: association {a} out of range")
        if p > 0 and a == -1:
            raise ActionInvalid(f"md {i}: positive power requires an association")
        admit = action.local_admit[i]
        if admit < 0:
            raise ActionInvalid(f"md {i}: local_admit must be >= 0")
        if admit > 0 and not local_enabled:
            raise LocalComputeDisabled(f"md {i}: scenario has no local compute")

    cores_cap = vcfg.cores_per_es
    for es in range(j):
        used = 0
        for i in range(u):
            c = action.cores[i][es]
            if c < 0:
                raise ActionInvalid(f"cores[{i}][{es}] must be >= 0")
            used += c
        if used > cores_cap[es]:
            raise ActionInvalid(
                f"es {es}: {used} cores allocated, only {cores_cap[es]} exist"
            )

    if not action.migrate:
        return
    link_direction: dict[int, tuple[int, int]] = {}
    link_load: dict[int, int] = {}
    pair_load: dict[tuple[int, int], int] = {}
    for m in action.migrate:
        if m.count < 1:
            raise ActionInvalid("migration count must be >= 1")
        if not (0 <= m.md < u):
            raise ActionInvalid(f"migration names unknown md {m.md}")
        li = find_link(vcfg, m.src_es, m.dst_es)
        if li is None:
            raise ActionInvalid(f"no backhaul link between es {m.src_es} and {m.dst_es}")
        direction = (m.src_es, m.dst_es)
        if link_direction.setdefault(li, direction) != direction:
            raise ActionInvalid(f"link {li} used in both directions in one slot")
        link_load[li] = link_load.get(li, 0) + m.count
        if link_load[li] > vcfg.backhaul_links[li].capacity_tasks_per_slot:
            raise ActionInvalid(f"link {li} over capacity")
        key = (m.md, m.src_es)
        pair_load[key] = pair_load.get(key, 0) + m.count
        if pair_load[key] > state.compute_backlog[m.md][m.src_es]:
            raise ActionInvalid(
                f"migration of {pair_load[key]} tasks exceeds backlog of "
                f"md {m.md} at es {m.src_es}"
            )


def check_coherence(state: SystemState) -> None:
    """Assert the scalar queue lengths agree with the ledger FIFOs.

    Used by tests and the trajectory loop's self-check; raises AssertionError
    with a description on any mismatch, including task conservation.
    """
    for i, q in enumerate(state.tx_backlog):
        assert q == len(state.tx_fifo[i]), f"tx queue {i}: scalar {q} != ledger"
        assert q >= 0, f"tx queue {i} negative"
    for i, row in enumerate(state.compute_backlog):
        for j, k in enumerate(row):
            assert k == len(state.compute_fifo[i][j]), f"compute queue ({i},{j}) mismatch"
            assert k >= 0, f"compute queue ({i},{j}) negative"
    for i, q in enumerate(state.local_backlog):
        assert q == len(state.local_fifo[i]), f"local queue {i}: scalar {q} != ledger"
        assert q >= 0, f"local queue {i} negative"
    balance = (
        state.total_completed
        + state.total_dropped_deadline
        + state.total_dropped_overflow
        + state.queued_count()
    )
    assert balance == state.total_arrivals, (
        f"conservation broken: arrivals {state.total_arrivals}, accounted {balance}"
    )
