"""Run-level KPIs: throughput, completion ratio, latency, energy, balance.

Latency counts the slots from a task's arrival at its MD to the slot its
computation finishes; returning the (small) result downstream is not
modeled, so no transmission time is added for it. Dropped tasks never enter
the latency statistics but are counted in the drop totals, and the
conservation identity arrivals = completions + drops + residual is checked
on every summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .config import ValidatedConfig, structural_digest
from .errors import EdgebenchError, IncompatibleRuns
from .state import SystemState, TaskLocation


@dataclass
class TrajectoryData:
    """Everything a finished trajectory hands to the summarizer.

    The per-slot arrays are end-of-slot snapshots (length = slots run); the
    *_sum fields are running sums of per-entity backlogs used for
    time-averages without retaining full per-entity series.
    """

    vcfg: ValidatedConfig
    final_state: SystemState
    slots: int
    arrivals: np.ndarray
    completions: np.ndarray
    drops_deadline: np.ndarray
    drops_overflow: np.ndarray
    energy: np.ndarray
    tx_total: np.ndarray
    compute_total: np.ndarray
    local_total: np.ndarray
    transit_total: np.ndarray
    q_sum: list[float]
    k_sum: list[list[float]]
    es_backlog_sum: list[float]
    local_sum: list[float]


@dataclass
class RunSummary:
    """End-of-run aggregates for one trajectory."""

    scenario_id: str
    policy_id: str
    v_param: Optional[float]
    lambda_multiplier: float
    seed: int
    structural: str
    slots: int
    total_arrivals: int
    total_completions: int
    drops_deadline: int
    drops_overflow: int
    residual: int
    throughput: float
    completion_ratio: float
    mean_latency_slots: float
    p95_latency_slots: float
    energy_total: float
    energy_per_md: float
    energy_per_completion: float
    mean_q_total: float
    mean_k_total: float
    mean_local_total: float
    q_time_avg: tuple[float, ...]
    k_time_avg: tuple[tuple[float, ...], ...]
    load_imbalance: float


def summarize(data: TrajectoryData) -> RunSummary:
    """Reduce a trajectory to its KPI summary.

    Conventions: completion_ratio is 1.0 when there were no arrivals
    (vacuously everything was served); energy per completion is inf when
    nothing completed; latency fields are nan with no completions.
    """
    vcfg = data.vcfg
    st = data.final_state
    t_slots = data.slots

    total_arrivals = st.total_arrivals
    total_completions = st.total_completed
    drops_deadline = st.total_dropped_deadline
    drops_overflow = st.total_dropped_overflow
    residual = st.queued_count()
    if total_completions + drops_deadline + drops_overflow + residual != total_arrivals:
        raise EdgebenchError(
            "task conservation violated in summary: "
            f"{total_arrivals} arrivals vs "
            f"{total_completions}+{drops_deadline}+{drops_overflow}+{residual}"
        )

    latencies = [
        entry.completed_slot - entry.born_slot
        for entry in st.tasks.values()
        if entry.location is TaskLocation.COMPLETED
    ]
    if latencies:
        arr = np.asarray(latencies, dtype=float)
        mean_latency = float(arr.mean())
        p95_latency = float(np.percentile(arr, 95))
    else:
        mean_latency = math.nan
        p95_latency = math.nan

    throughput = total_completions / t_slots if t_slots > 0 else 0.0
    completion_ratio = (
        total_completions / total_arrivals if total_arrivals > 0 else 1.0
    )
    energy_total = st.total_energy
    energy_per_completion = (
        energy_total / total_completions if total_completions > 0 else math.inf
    )

    denom = max(t_slots, 1)
    q_avg = tuple(s / denom for s in data.q_sum)
    k_avg = tuple(tuple(s / denom for s in row) for row in data.k_sum)
    es_avgs = [s / denom for s in data.es_backlog_sum]
    mean_es = float(np.mean(es_avgs))
    if mean_es > 0:
        load_imbalance = float(np.std(es_avgs) / mean_es)
    else:
        load_imbalance = 0.0

    return RunSummary(
        scenario_id=vcfg.scenario_id,
        policy_id=vcfg.policy_id,
        v_param=_v_param(vcfg),
        lambda_multiplier=vcfg.lambda_multiplier,
        seed=vcfg.rng_seed,
        structural=structural_digest(vcfg.raw),
        slots=t_slots,
        total_arrivals=total_arrivals,
        total_completions=total_completions,
        drops_deadline=drops_deadline,
        drops_overflow=drops_overflow,
        residual=residual,
        throughput=throughput,
        completion_ratio=completion_ratio,
        mean_latency_slots=mean_latency,
        p95_latency_slots=p95_latency,
        energy_total=energy_total,
        energy_per_md=energy_total / vcfg.num_mds,
        energy_per_completion=energy_per_completion,
        mean_q_total=float(data.tx_total.mean()) if t_slots else 0.0,
        mean_k_total=float(data.compute_total.mean()) if t_slots else 0.0,
        mean_local_total=float(data.local_total.mean()) if t_slots else 0.0,
        q_time_avg=q_avg,
        k_time_avg=k_avg,
        load_imbalance=load_imbalance,
    )


def _v_param(vcfg: ValidatedConfig) -> Optional[float]:
    v = vcfg.policy_params.get("V")
    return float(v) if v is not None else None


@dataclass
class ComparisonRow:
    """Across-seed aggregate for one (policy, arrival-rate multiplier) cell."""

    policy_id: str
    lambda_multiplier: float
    n_runs: int
    throughput_mean: float
    throughput_ci95: float
    completion_ratio_mean: float
    completion_ratio_ci95: float
    latency_mean: float
    latency_ci95: float
    energy_per_completion_mean: float
    energy_per_completion_ci95: float


def _mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and 95% Student-t confidence half-width."""
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    n = len(arr)
    if n < 2:
        return mean, 0.0
    s = float(arr.std(ddof=1))
    if s == 0.0:
        return mean, 0.0
    half = float(stats.t.ppf(0.975, n - 1) * s / math.sqrt(n))
    return mean, half


def compare_runs(summaries: Sequence[RunSummary]) -> list[ComparisonRow]:
    """Aggregate summaries into per-(policy, multiplier) rows with 95% CIs.

    All summaries must come from structurally identical scenarios (same
    geometry, radio, compute, and arrival process up to the multiplier);
    anything else raises IncompatibleRuns.
    """
    if not summaries:
        return []
    reference = summaries[0].structural
    for s in summaries:
        if s.structural != reference:
            raise IncompatibleRuns(
                f"run {s.scenario_id!r} policy {s.policy_id!r} seed {s.seed} has a "
                "different structural config"
            )
    groups: dict[tuple[str, float], list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault((s.policy_id, s.lambda_multiplier), []).append(s)

    rows = []
    for (policy_id, mult) in sorted(groups):
        runs = groups[(policy_id, mult)]
        tp_mean, tp_ci = _mean_ci([r.throughput for r in runs])
        cr_mean, cr_ci = _mean_ci([r.completion_ratio for r in runs])
        lat_mean, lat_ci = _mean_ci([r.mean_latency_slots for r in runs])
        en_mean, en_ci = _mean_ci([r.energy_per_completion for r in runs])
        rows.append(
            ComparisonRow(
                policy_id=policy_id,
                lambda_multiplier=mult,
                n_runs=len(runs),
                throughput_mean=tp_mean,
                throughput_ci95=tp_ci,
                completion_ratio_mean=cr_mean,
                completion_ratio_ci95=cr_ci,
                latency_mean=lat_mean,
                latency_ci95=lat_ci,
                energy_per_completion_mean=en_mean,
                energy_per_completion_ci95=en_ci,
            )
        )
    return rows
