"""Inter-ES task migration over backhaul links.

Links are delay/capacity pipes: a wired interconnect is a delay of 0 or 1
slots, a store-carry-forward transport is a longer one. The planning rule
moves half the backlog difference (capped by link capacity) whenever one
endpoint is sufficiently more congested than the other, discounting by how
much the destination could drain on its own while the tasks are in flight.
"""

from __future__ import annotations

from .config import ValidatedConfig
from .state import Migration, SystemState, TaskLocation, TransitBatch


def plan_migrations(
    state: SystemState, vcfg: ValidatedConfig, threshold: float = 0.0
) -> list[Migration]:
    """Plan this slot's backlog-balancing moves over every backhaul link.

    For each link, compares total computing backlogs at the endpoints and,
    if the gap exceeds ``threshold`` plus twice the in-flight drain
    (delay_slots times the destination's per-slot service capacity), moves
    ``min(capacity, gap // 2)`` tasks from the more congested side. Tasks
    are drawn from the largest per-MD queue first (ties to the lowest MD
    index). A link carries at most one direction per slot, and links are
    processed in declaration order against a running view of the backlogs,
    so no task is promised twice.
    """
    if not vcfg.backhaul_links:
        return []

    u = vcfg.num_mds
    # Working copies so multiple links sharing an ES see planned moves.
    work = [row[:] for row in state.compute_backlog]
    totals = [state.es_backlog(es) for es in range(vcfg.num_ess)]

    plans: list[Migration] = []
    for link in vcfg.backhaul_links:
        a, b = link.es_a, link.es_b
        drain_a = link.delay_slots * vcfg.es_capacity_tasks(a)
        drain_b = link.delay_slots * vcfg.es_capacity_tasks(b)
        if totals[a] - totals[b] > threshold + 2 * drain_b:
            src, dst = a, b
        elif totals[b] - totals[a] > threshold + 2 * drain_a:
            src, dst = b, a
        else:
            continue
        gap = totals[src] - totals[dst]
        count = min(link.capacity_tasks_per_slot, gap // 2)
        if count <= 0:
            continue
        per_md: dict[int, int] = {}
        for _ in range(count):
            donor = max(range(u), key=lambda i: (work[i][src], -i))
            if work[donor][src] <= 0:
                break
            work[donor][src] -= 1
            totals[src] -= 1
            totals[dst] += 1
            per_md[donor] = per_md.get(donor, 0) + 1
        for md in sorted(per_md):
            plans.append(Migration(src_es=src, dst_es=dst, md=md, count=per_md[md]))
    return plans


def execute_migrations(
    state: SystemState, vcfg: ValidatedConfig, migrations: list[Migration]
) -> None:
    """Pull planned tasks out of their ES queues and put them in flight.

    Counts are clamped to what is still present: in-slot service runs
    before migration, so a queue may have shrunk since the plan was made.
    Tasks leave oldest-first and a batch arriving over a zero-delay link is
    delivered by the same slot's advance_in_transit pass.
    """
    for m in migrations:
        link_idx = None
        for li, link in enumerate(vcfg.backhaul_links):
            if {link.es_a, link.es_b} == {m.src_es, m.dst_es}:
                link_idx = li
                break
        if link_idx is None:
            continue
        delay = vcfg.backhaul_links[link_idx].delay_slots
        avail = state.compute_backlog[m.md][m.src_es]
        count = min(m.count, avail)
        if count <= 0:
            continue
        fifo = state.compute_fifo[m.md][m.src_es]
        ids = [fifo.popleft() for _ in range(count)]
        state.compute_backlog[m.md][m.src_es] -= count
        for tid in ids:
            entry = state.tasks[tid]
            entry.location = TaskLocation.IN_TRANSIT
            entry.es = -1
        state.in_transit.append(
            TransitBatch(
                dst_es=m.dst_es,
                owner_md=m.md,
                arrive_slot=state.slot + delay,
                task_ids=ids,
            )
        )


def advance_in_transit(state: SystemState) -> list[TransitBatch]:
    """Deliver every batch whose scheduled arrival slot is the current slot.

    Delivered tasks are appended to the destination (MD, ES) computing
    queue in batch order, preserving intra-batch FIFO order. Batches still
    in flight are kept; expiry against the deadline happens in the step's
    expiry pass, not here.
    """
    delivered: list[TransitBatch] = []
    remaining: list[TransitBatch] = []
    for batch in state.in_transit:
        if batch.arrive_slot <= state.slot:
            fifo = state.compute_fifo[batch.owner_md][batch.dst_es]
            for tid in batch.task_ids:
                fifo.append(tid)
                entry = state.tasks[tid]
                entry.location = TaskLocation.ES_QUEUE
                entry.es = batch.dst_es
            state.compute_backlog[batch.owner_md][batch.dst_es] += len(batch.task_ids)
            delivered.append(batch)
        else:
            remaining.append(batch)
    state.in_transit = remaining
    return delivered
