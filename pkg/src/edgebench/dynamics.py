"""Slot-stepped evolution: arrivals, fading, rate laws, and the tandem step.

Within one slot the order is fixed: fading chains advance, rates are
computed, ES queues are served, uplinked tasks move from transmission
queues into computing queues, migrations and backhaul deliveries happen,
local queues are served, new arrivals are enqueued, overdue tasks expire,
and energy is accounted. Serving before transferring means a task can never
be uplinked and computed in the same slot, which is exactly the one-slot
pipeline of the tandem recursion

    tx(t+1)      = max(tx(t) - uplink_rate, 0) + arrivals
    compute(t+1) = max(compute(t) - service_rate, 0) + transferred

with one amendment: the amount transferred is min(tx(t), uplink_rate), not
the raw rate, so tasks are conserved when the transmission queue runs dry.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .config import (
    STREAM_ARRIVALS,
    STREAM_CHANNELS,
    STREAM_POLICY,
    ValidatedConfig,
)
from .errors import ActionInvalid, EdgebenchError
from .metrics import RunSummary, TrajectoryData, summarize
from .multihop import advance_in_transit, execute_migrations
from .state import (
    DROP_DEADLINE,
    Action,
    SystemState,
    TaskEntry,
    TaskLocation,
    initial_state,
    validate_action,
)

_CHUNK = 1024


class Streams:
    """Counter-based random streams for one trajectory.

    Each purpose (arrivals, channel transitions, policy randomness) gets its
    own Philox stream keyed by (seed, purpose), and draws are laid out in
    fixed-size chunks of slots. The value consumed for a given (slot, MD) or
    (slot, MD, ES) therefore sits at a fixed stream position independent of
    anything the policy does, so identical seeds give bit-identical
    randomness across runs.
    """

    def __init__(self, vcfg: ValidatedConfig):
        self._u = vcfg.num_mds
        self._j = vcfg.num_ess
        self._kind = vcfg.arrival_kind
        self._rates = np.asarray(vcfg.rates, dtype=float)
        self._seed = vcfg.rng_seed
        self._gens: dict[int, np.random.Generator] = {}
        self._chunks: dict[int, list[np.ndarray]] = {
            STREAM_ARRIVALS: [],
            STREAM_CHANNELS: [],
            STREAM_POLICY: [],
        }

    def _generator(self, purpose: int) -> np.random.Generator:
        gen = self._gens.get(purpose)
        if gen is None:
            seq = np.random.SeedSequence(entropy=self._seed, spawn_key=(purpose,))
            gen = np.random.Generator(np.random.Philox(seq))
            self._gens[purpose] = gen
        return gen

    def _block(
        self, purpose: int, slot: int, draw: Callable[[np.random.Generator], np.ndarray]
    ) -> tuple[np.ndarray, int]:
        chunk_idx, offset = divmod(slot, _CHUNK)
        chunks = self._chunks[purpose]
        while len(chunks) <= chunk_idx:
            chunks.append(draw(self._generator(purpose)))
        return chunks[chunk_idx], offset

    def arrival_counts(self, slot: int) -> np.ndarray:
        if self._kind == "bernoulli":
            draw = lambda g: (
                g.random((_CHUNK, self._u)) < self._rates
            ).astype(np.int64)
        else:
            draw = lambda g: g.poisson(self._rates, size=(_CHUNK, self._u))
        block, offset = self._block(STREAM_ARRIVALS, slot, draw)
        return block[offset]

    def channel_uniforms(self, slot: int) -> np.ndarray:
        draw = lambda g: g.random((_CHUNK, self._u * self._j))
        block, offset = self._block(STREAM_CHANNELS, slot, draw)
        return block[offset]

    def policy_uniforms(self, slot: int) -> np.ndarray:
        draw = lambda g: g.random((_CHUNK, self._u))
        block, offset = self._block(STREAM_POLICY, slot, draw)
        return block[offset]


@dataclass(slots=True)
class ArrivalRealization:
    """One slot's arrivals: per-MD counts, plus ledger ids once enqueued."""

    counts: list[int]
    task_ids: list[list[int]]


@dataclass(slots=True)
class RateRealization:
    """Rates offered this slot and the amounts actually moved.

    actual_uplink is clamped by the pre-step transmission backlog and
    actual_served by the pre-step computing backlog, so neither can spend
    service on tasks that are not there.
    """

    uplink: list[int]
    service: list[list[int]]
    actual_uplink: list[int]
    actual_served: list[list[int]]


def draw_arrivals(
    vcfg: ValidatedConfig, slot: int, streams: Streams
) -> ArrivalRealization:
    """Per-MD arrival counts for one slot (bernoulli or poisson).

    Deterministic given (seed, slot, MD index): the draw sits at a fixed
    position of the arrival stream.
    """
    counts = streams.arrival_counts(slot).tolist()
    return ArrivalRealization(counts=counts, task_ids=[[] for _ in counts])


def evolve_channels(
    state: SystemState, vcfg: ValidatedConfig, streams: Streams, slot: int
) -> None:
    """Advance every (MD, ES) fading chain one step, in place."""
    n_states = len(vcfg.channel_states)
    if n_states == 1:
        return
    uniforms = streams.channel_uniforms(slot).tolist()
    cumrows = vcfg.channel_cumrows
    jj = vcfg.num_ess
    idx = state.channel_idx
    for i in range(vcfg.num_mds):
        row = idx[i]
        base = i * jj
        for j in range(jj):
            row[j] = bisect_right(cumrows[row[j]], uniforms[base + j])


def uplink_rates(
    channel_idx: list[list[int]],
    power: list[float],
    assoc: list[int],
    vcfg: ValidatedConfig,
) -> list[int]:
    """Whole tasks each MD can push uplink this slot.

    Each ES's bandwidth is split evenly among the MDs associated to it;
    the rate is the Shannon capacity of the allocated band at the MD's
    transmit power and current fading, floored to whole tasks. Idle or
    unassociated MDs get 0.
    """
    counts = [0] * vcfg.num_ess
    for a in assoc:
        if a >= 0:
            counts[a] += 1
    tau = vcfg.slot_duration
    bw = vcfg.bandwidth_hz
    n0 = vcfg.noise_psd
    bits_per_task = vcfg.task_size_bits
    fading = vcfg.channel_states
    gains = vcfg.gains
    out = [0] * vcfg.num_mds
    for i, a in enumerate(assoc):
        p = power[i]
        if a < 0 or p <= 0:
            continue
        share = bw / counts[a]
        gain = gains[i][a] * fading[channel_idx[i][a]]
        snr = p * gain / (n0 * share)
        bits = tau * share * math.log2(1.0 + snr)
        out[i] = int(bits // bits_per_task)
    return out


def transmission_rate(
    state: SystemState, action: Action, vcfg: ValidatedConfig
) -> list[int]:
    return uplink_rates(state.channel_idx, action.power, action.assoc, vcfg)


def computing_rate(action: Action, vcfg: ValidatedConfig) -> list[list[int]]:
    """Whole tasks each (MD, ES) computing queue can finish this slot.

    Floor of the allocated cores' cycle budget over the per-task cycle
    count; the floor is applied after multiplying by the core count.
    """
    budget = vcfg.raw.core_speed_hz * vcfg.slot_duration
    w = vcfg.task_cycles
    return [[int(c * budget // w) for c in row] for row in action.cores]


def realize_rates(
    state: SystemState, action: Action, vcfg: ValidatedConfig
) -> RateRealization:
    """Offered rates plus the actually movable amounts for this slot."""
    r = transmission_rate(state, action, vcfg)
    c = computing_rate(action, vcfg)
    actual_uplink = [min(r[i], state.tx_backlog[i]) for i in range(vcfg.num_mds)]
    actual_served = [
        [min(c[i][j], state.compute_backlog[i][j]) for j in range(vcfg.num_ess)]
        for i in range(vcfg.num_mds)
    ]
    return RateRealization(r, c, actual_uplink, actual_served)


@dataclass(slots=True)
class SlotDetail:
    """Per-entity snapshot for trace emission (end of slot)."""

    power: tuple
    assoc: tuple
    cores: tuple
    channel: tuple
    tx_backlog: tuple
    compute_backlog: tuple
    local_backlog: tuple
    uplinked: tuple
    served: tuple


@dataclass(slots=True)
class SlotRecord:
    """One slot's measurements: counts, energy, end-of-slot backlogs."""

    slot: int
    arrivals: int
    completions: int
    drops_deadline: int
    drops_overflow: int
    energy: float
    tx_total: int
    compute_total: int
    local_total: int
    transit_total: int
    detail: Optional[SlotDetail] = None


def step(
    state: SystemState,
    action: Action,
    vcfg: ValidatedConfig,
    streams: Streams,
    detail: bool = False,
) -> tuple[SystemState, SlotRecord]:
    """Advance the system one slot under `action`, in place.

    Returns the same state object (mutated, slot incremented) plus the
    slot's record. Transmit energy is power * slot_duration whenever the
    chosen power is positive, whether or not the queue had tasks to move;
    local compute charges its cubic dynamic power for any slot in which the
    local core serves at least one task. Energy attributed to individual
    tasks splits the slot's energy evenly over the tasks it moved.
    """
    validate_action(state, vcfg, action)
    t = state.slot  # stream index for this transition
    state.slot += 1
    now = state.slot
    tau = vcfg.slot_duration
    u, jj = vcfg.num_mds, vcfg.num_ess
    tasks = state.tasks

    evolve_channels(state, vcfg, streams, t)
    uplink = uplink_rates(state.channel_idx, action.power, action.assoc, vcfg)

    # Serve ES computing queues, oldest first.
    budget = vcfg.raw.core_speed_hz * tau
    cycles = vcfg.task_cycles
    completions = 0
    served_flat: list[int] = [0] * (u * jj) if detail else []
    uplinked: list[int] = [0] * u if detail else []
    for i in range(u):
        cores_row = action.cores[i]
        backlog_row = state.compute_backlog[i]
        fifo_row = state.compute_fifo[i]
        for j in range(jj):
            cores = cores_row[j]
            if cores <= 0:
                continue
            have = backlog_row[j]
            if have <= 0:
                continue
            n = int(cores * budget // cycles)
            if n > have:
                n = have
            if n <= 0:
                continue
            fifo = fifo_row[j]
            for _ in range(n):
                entry = tasks[fifo.popleft()]
                entry.location = TaskLocation.COMPLETED
                entry.completed_slot = now
            backlog_row[j] = have - n
            completions += n
            if detail:
                served_flat[i * jj + j] = n
    state.total_completed += completions

    # Uplink: move tasks from transmission queues into computing queues.
    energy_delta = 0.0
    for i in range(u):
        p = action.power[i]
        moved = uplink[i]
        have = state.tx_backlog[i]
        if moved > have:
            moved = have
        share = 0.0
        if p > 0:
            spent = p * tau
            energy_delta += spent
            if moved > 0:
                share = spent / moved
        if moved <= 0:
            continue
        if detail:
            uplinked[i] = moved
        dst = action.assoc[i]
        fifo = state.tx_fifo[i]
        dst_fifo = state.compute_fifo[i][dst]
        for _ in range(moved):
            tid = fifo.popleft()
            entry = tasks[tid]
            entry.location = TaskLocation.ES_QUEUE
            entry.es = dst
            entry.energy_spent += share
            dst_fifo.append(tid)
        state.tx_backlog[i] = have - moved
        state.compute_backlog[i][dst] += moved

    # Backhaul: launch planned migrations, then deliver anything due now
    # (a zero-delay migration is delivered within this same slot).
    if action.migrate:
        execute_migrations(state, vcfg, action.migrate)
    if state.in_transit:
        advance_in_transit(state)

    # Local computing service.
    lc = vcfg.local_compute
    if lc is not None and vcfg.local_tasks > 0:
        local_power = lc.local_energy_coeff * lc.local_core_speed_hz**3
        for i in range(u):
            have = state.local_backlog[i]
            if have <= 0:
                continue
            n = min(vcfg.local_tasks, have)
            fifo = state.local_fifo[i]
            spent = local_power * tau
            share = spent / n
            for _ in range(n):
                entry = tasks[fifo.popleft()]
                entry.location = TaskLocation.COMPLETED
                entry.completed_slot = now
                entry.energy_spent += share
            state.local_backlog[i] = have - n
            state.total_completed += n
            completions += n
            energy_delta += spent

    # Arrivals.
    arrivals = draw_arrivals(vcfg, t, streams)
    next_id = state.next_task_id
    total_new = 0
    for i, count in enumerate(arrivals.counts):
        if count <= 0:
            continue
        total_new += count
        admit_local = min(count, action.local_admit[i]) if lc is not None else 0
        ids = arrivals.task_ids[i]
        for k in range(count):
            tid = next_id
            next_id += 1
            ids.append(tid)
            if k < admit_local:
                tasks[tid] = TaskEntry(tid, i, now, TaskLocation.LOCAL_QUEUE)
                state.local_fifo[i].append(tid)
                state.local_backlog[i] += 1
            else:
                tasks[tid] = TaskEntry(tid, i, now, TaskLocation.MD_QUEUE)
                state.tx_fifo[i].append(tid)
                state.tx_backlog[i] += 1
    state.next_task_id = next_id
    state.total_arrivals += total_new

    # Deadline expiry: drop anything whose end-to-end age exceeds the limit.
    drops = 0
    deadline = vcfg.deadline_slots
    if deadline > 0:
        cutoff = now - deadline  # born before this => age > deadline
        drops = _expire(state, vcfg, cutoff, now)
        state.total_dropped_deadline += drops

    state.total_energy += energy_delta

    rec_detail = None
    if detail:
        rec_detail = SlotDetail(
            power=tuple(action.power),
            assoc=tuple(action.assoc),
            cores=tuple(c for row in action.cores for c in row),
            channel=tuple(c for row in state.channel_idx for c in row),
            tx_backlog=tuple(state.tx_backlog),
            compute_backlog=tuple(k for row in state.compute_backlog for k in row),
            local_backlog=tuple(state.local_backlog),
            uplinked=tuple(rates.actual_uplink),
            served=tuple(served_flat),
        )
    record = SlotRecord(
        slot=now,
        arrivals=total_new,
        completions=completions,
        drops_deadline=drops,
        drops_overflow=0,
        energy=energy_delta,
        tx_total=sum(state.tx_backlog),
        compute_total=sum(sum(row) for row in state.compute_backlog),
        local_total=sum(state.local_backlog),
        transit_total=state.transit_count(),
        detail=rec_detail,
    )
    return state, record


def _expire(state: SystemState, vcfg: ValidatedConfig, cutoff: int, now: int) -> int:
    """Drop every queued or in-flight task born before `cutoff`."""
    tasks = state.tasks
    drops = 0

    def _drop(tid: int) -> None:
        nonlocal drops
        entry = tasks[tid]
        entry.location = TaskLocation.DROPPED
        entry.dropped_slot = now
        entry.drop_reason = DROP_DEADLINE
        drops += 1

    for i in range(vcfg.num_mds):
        fifo = state.tx_fifo[i]
        while fifo and tasks[fifo[0]].born_slot < cutoff:
            _drop(fifo.popleft())
            state.tx_backlog[i] -= 1
        fifo = state.local_fifo[i]
        while fifo and tasks[fifo[0]].born_slot < cutoff:
            _drop(fifo.popleft())
            state.local_backlog[i] -= 1

    # After a migration an ES queue is no longer born-ordered, so scan it
    # whole; without backhaul links the cheap front-pop suffices.
    scan_all = bool(vcfg.backhaul_links)
    for i in range(vcfg.num_mds):
        for j in range(vcfg.num_ess):
            fifo = state.compute_fifo[i][j]
            if not fifo:
                continue
            if scan_all:
                keep = [tid for tid in fifo if tasks[tid].born_slot >= cutoff]
                expired = len(fifo) - len(keep)
                if expired:
                    for tid in fifo:
                        if tasks[tid].born_slot < cutoff:
                            _drop(tid)
                    fifo.clear()
                    fifo.extend(keep)
                    state.compute_backlog[i][j] -= expired
            else:
                while fifo and tasks[fifo[0]].born_slot < cutoff:
                    _drop(fifo.popleft())
                    state.compute_backlog[i][j] -= 1

    if state.in_transit:
        for batch in state.in_transit:
            keep = [tid for tid in batch.task_ids if tasks[tid].born_slot >= cutoff]
            if len(keep) != len(batch.task_ids):
                for tid in batch.task_ids:
                    if tasks[tid].born_slot < cutoff:
                        _drop(tid)
                batch.task_ids = keep
        state.in_transit = [b for b in state.in_transit if b.task_ids]
    return drops


class Policy(Protocol):
    """Per-slot decision maker.

    `draw` is this slot's per-MD uniform randomness from the policy stream;
    deterministic policies ignore it.
    """

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action: ...


def run_trajectory(
    vcfg: ValidatedConfig, policy: Policy, trace: bool = False
) -> tuple[RunSummary, Optional[list[SlotRecord]]]:
    """Run one full horizon under `policy` and summarize it.

    Identical (config, seed, policy) reproduce bit-identical records and
    summaries. Task conservation (arrivals = completions + drops +
    still-queued) is checked after every slot, not just at the end.
    """
    t_slots = vcfg.horizon
    state = initial_state(vcfg)
    streams = Streams(vcfg)
    u, jj = vcfg.num_mds, vcfg.num_ess

    arrivals = np.zeros(t_slots, dtype=np.int64)
    completions = np.zeros(t_slots, dtype=np.int64)
    drops_deadline = np.zeros(t_slots, dtype=np.int64)
    drops_overflow = np.zeros(t_slots, dtype=np.int64)
    energy = np.zeros(t_slots, dtype=float)
    tx_total = np.zeros(t_slots, dtype=np.int64)
    compute_total = np.zeros(t_slots, dtype=np.int64)
    local_total = np.zeros(t_slots, dtype=np.int64)
    transit_total = np.zeros(t_slots, dtype=np.int64)
    q_sum = [0.0] * u
    k_sum = [[0.0] * jj for _ in range(u)]
    es_backlog_sum = [0.0] * jj
    local_sum = [0.0] * u

    records: Optional[list[SlotRecord]] = [] if trace else None
    for t in range(t_slots):
        action = policy.decide(state, vcfg, streams.policy_uniforms(t))
        try:
            _, rec = step(state, action, vcfg, streams, detail=trace)
        except ActionInvalid as exc:
            raise ActionInvalid(f"slot {t}: {exc}") from exc
        arrivals[t] = rec.arrivals
        completions[t] = rec.completions
        drops_deadline[t] = rec.drops_deadline
        drops_overflow[t] = rec.drops_overflow
        energy[t] = rec.energy
        tx_total[t] = rec.tx_total
        compute_total[t] = rec.compute_total
        local_total[t] = rec.local_total
        transit_total[t] = rec.transit_total
        for i in range(u):
            q_sum[i] += state.tx_backlog[i]
            local_sum[i] += state.local_backlog[i]
            row = state.compute_backlog[i]
            krow = k_sum[i]
            for j in range(jj):
                krow[j] += row[j]
                es_backlog_sum[j] += row[j]
        if records is not None:
            records.append(rec)
        balance = (
            state.total_completed
            + state.total_dropped_deadline
            + state.total_dropped_overflow
            + state.queued_count()
        )
        if balance != state.total_arrivals:
            raise EdgebenchError(
                f"slot {t}: task conservation broken "
                f"({state.total_arrivals} arrivals, {balance} accounted)"
            )

    data = TrajectoryData(
        vcfg=vcfg,
        final_state=state,
        slots=t_slots,
        arrivals=arrivals,
        completions=completions,
        drops_deadline=drops_deadline,
        drops_overflow=drops_overflow,
        energy=energy,
        tx_total=tx_total,
        compute_total=compute_total,
        local_total=local_total,
        transit_total=transit_total,
        q_sum=q_sum,
        k_sum=k_sum,
        es_backlog_sum=es_backlog_sum,
        local_sum=local_sum,
    )
    return summarize(data), records
