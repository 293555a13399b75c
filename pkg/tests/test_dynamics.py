from __future__ import annotations

import math

import numpy as np
import pytest

from edgebench.config import scenario_from_dict, validate_config
from edgebench.dynamics import (
    Streams,
    computing_rate,
    draw_arrivals,
    evolve_channels,
    realize_rates,
    run_trajectory,
    step,
    transmission_rate,
)
from edgebench.errors import ActionInvalid
from edgebench.policies import BackpressurePolicy, RandomFeasiblePolicy, shannon_tasks
from edgebench.state import Action, TaskLocation, check_coherence, initial_state

from conftest import base_scenario, make_vcfg, seed_state


def _streams(vcfg) -> Streams:
    return Streams(vcfg)


# --- arrivals -------------------------------------------------------------------


def test_zero_rate_never_arrives():
    vcfg = make_vcfg(num_mds=3, arrival_rates=0.0)
    streams = _streams(vcfg)
    for slot in range(200):
        assert draw_arrivals(vcfg, slot, streams).counts == [0, 0, 0]


def test_certain_bernoulli_arrival():
    vcfg = make_vcfg(num_mds=2, arrival_rates=1.0)
    streams = _streams(vcfg)
    for slot in range(200):
        assert draw_arrivals(vcfg, slot, streams).counts == [1, 1]


def test_bernoulli_sample_mean_matches_rate():
    # se = sqrt(0.4*0.6/1e5) ~ 0.00155, so +-0.01 is a ~6.5 sigma band
    vcfg = make_vcfg(num_mds=1, arrival_rates=0.4)
    streams = _streams(vcfg)
    total = sum(draw_arrivals(vcfg, t, streams).counts[0] for t in range(100_000))
    assert total / 100_000 == pytest.approx(0.4, abs=0.01)


def test_poisson_sample_mean_matches_rate():
    vcfg = make_vcfg(num_mds=1, arrival_rates=2.5, arrival_kind="poisson")
    streams = _streams(vcfg)
    total = sum(draw_arrivals(vcfg, t, streams).counts[0] for t in range(50_000))
    assert total / 50_000 == pytest.approx(2.5, abs=0.05)


def test_arrivals_deterministic_per_seed_and_slot():
    vcfg = make_vcfg(num_mds=4, arrival_rates=0.5, rng_seed=11)
    a = [draw_arrivals(vcfg, t, _streams(vcfg)).counts for t in (0, 7, 999)]
    b = [draw_arrivals(vcfg, t, _streams(vcfg)).counts for t in (0, 7, 999)]
    assert a == b
    other = make_vcfg(num_mds=4, arrival_rates=0.5, rng_seed=12)
    c = [draw_arrivals(other, t, _streams(other)).counts for t in range(50)]
    d = [draw_arrivals(vcfg, t, _streams(vcfg)).counts for t in range(50)]
    assert c != d


# --- channels -------------------------------------------------------------------


def test_identity_transition_freezes_channels():
    vcfg = make_vcfg(
        channel_states=[0.5, 1.5],
        channel_transition=[[1.0, 0.0], [0.0, 1.0]],
    )
    state = seed_state(vcfg, channel=[[0, 1], [1, 0]])
    streams = _streams(vcfg)
    for slot in range(100):
        evolve_channels(state, vcfg, streams, slot)
    assert state.channel_idx == [[0, 1], [1, 0]]


def test_flip_transition_alternates_every_slot():
    vcfg = make_vcfg(
        channel_states=[0.5, 1.5],
        channel_transition=[[0.0, 1.0], [1.0, 0.0]],
    )
    state = seed_state(vcfg, channel=[[0, 0], [0, 0]])
    streams = _streams(vcfg)
    for slot in range(9):
        evolve_channels(state, vcfg, streams, slot)
        expected = (slot + 1) % 2
        assert state.channel_idx == [[expected] * 2] * 2


def test_two_state_chain_empirical_occupancy():
    # pi0 * 0.1 = pi1 * 0.5 and pi0 + pi1 = 1 give pi0 = 5/6
    vcfg = make_vcfg(
        num_mds=1,
        num_ess=1,
        channel_states=[0.5, 1.5],
        channel_transition=[[0.9, 0.1], [0.5, 0.5]],
    )
    state = seed_state(vcfg, channel=[[0]])
    streams = _streams(vcfg)
    hits = 0
    n = 100_000
    for slot in range(n):
        evolve_channels(state, vcfg, streams, slot)
        hits += state.channel_idx[0][0] == 0
    assert hits / n == pytest.approx(5.0 / 6.0, abs=0.01)


# --- rate laws --------------------------------------------------------------------


def _rate_vcfg(**overrides):
    # One MD at 10 m from its ES: gain = 1e-3 * 10^-3 = 1e-6, no fading.
    return make_vcfg(
        num_mds=1,
        num_ess=1,
        es_placement="explicit",
        md_placement="explicit",
        es_positions=[[50.0, 50.0]],
        md_positions=[[50.0, 60.0]],
        noise_psd=1.0e-13,
        channel_states=[1.0],
        channel_transition=[[1.0]],
        **overrides,
    )


def test_zero_power_means_zero_rate():
    vcfg = _rate_vcfg()
    state = seed_state(vcfg, tx=[3])
    action = Action.idle(vcfg)
    assert transmission_rate(state, action, vcfg) == [0]


def test_shannon_rate_hand_value():
    # snr = 0.1 * 1e-6 / (1e-13 * 1e6) = 1; bits = 0.1 * 1e6 * log2(2) = 1e5
    # tasks = floor(1e5 / 5e4) = 2
    vcfg = _rate_vcfg()
    state = seed_state(vcfg, tx=[5])
    action = Action.idle(vcfg)
    action.power[0] = 0.1
    action.assoc[0] = 0
    assert transmission_rate(state, action, vcfg) == [2]


def test_bandwidth_sharing_asymptotics():
    class _V:
        slot_duration = 1.0
        noise_psd = 1e-13
        task_size_bits = 1.0

    # Low snr: halving the band doubles snr, rate nearly unchanged.
    gain, bw = 1e-6, 1e6
    p = 1e-4  # solo snr = p * gain / (noise * bw) = 1e-3
    solo = shannon_tasks(p, gain, bw, _V)
    shared = shannon_tasks(p, gain, bw / 2, _V)
    assert shared / solo > 0.99
    # High snr: halving the band nearly halves the rate.
    p = 100.0  # solo snr = 1e3
    solo = shannon_tasks(p, gain, bw, _V)
    shared = shannon_tasks(p, gain, bw / 2, _V)
    assert 0.5 < shared / solo < 0.6


def test_computing_rate_hand_values():
    vcfg = make_vcfg(num_mds=1, num_ess=1, core_speed_hz=1e9, task_cycles=2.5e7,
                     cores_per_es=2)
    action = Action.idle(vcfg)
    assert computing_rate(action, vcfg) == [[0]]
    action.cores[0][0] = 1  # floor(1e8 / 2.5e7) = 4
    assert computing_rate(action, vcfg) == [[4]]
    action.cores[0][0] = 2  # linear in cores
    assert computing_rate(action, vcfg) == [[8]]


# --- the tandem step ---------------------------------------------------------------


def test_step_basic_recursion():
    # Q=5, r=2, a=1: Q' = max(5-2, 0) + 1 = 4 and the ES queue gains 2.
    vcfg = _rate_vcfg(arrival_rates=1.0)
    state = seed_state(vcfg, tx=[5])
    action = Action.idle(vcfg)
    action.power[0] = 0.1
    action.assoc[0] = 0
    step(state, action, vcfg, _streams(vcfg))
    assert state.tx_backlog == [4]
    assert state.compute_backlog == [[2]]
    check_coherence(state)


def test_step_conserves_when_rate_exceeds_queue():
    # Q=1, r=4: only one task can move; the scalar recursion would have
    # injected 4 into the ES queue out of thin air.
    vcfg = _rate_vcfg(arrival_rates=1.0, slot_duration=0.2)
    state = seed_state(vcfg, tx=[1])
    rates = realize_rates(
        state,
        Action(power=[0.1], assoc=[0], cores=[[0]], local_admit=[0]),
        vcfg,
    )
    assert rates.uplink == [4]
    action = Action(power=[0.1], assoc=[0], cores=[[0]], local_admit=[0])
    step(state, action, vcfg, _streams(vcfg))
    assert state.compute_backlog == [[1]]
    assert state.tx_backlog == [1]  # max(1-4, 0) + 1 arrival
    check_coherence(state)


def test_step_conservation_amendment_with_batch_arrivals():
    # Q=1, r=4, a=3: Q' = max(1-4,0) + 3 = 3, ES queue gains min(1,4) = 1.
    base = base_scenario(
        num_mds=1,
        num_ess=1,
        es_placement="explicit",
        md_placement="explicit",
        es_positions=[[50.0, 50.0]],
        md_positions=[[50.0, 60.0]],
        noise_psd=1.0e-13,
        channel_states=[1.0],
        channel_transition=[[1.0]],
        arrival_rates=3.0,
        arrival_kind="poisson",
        slot_duration=0.2,
    )
    seed = next(
        s
        for s in range(200)
        if Streams(validate_config(scenario_from_dict({**base, "rng_seed": s})))
        .arrival_counts(0)[0]
        == 3
    )
    vcfg = validate_config(scenario_from_dict({**base, "rng_seed": seed}))
    state = seed_state(vcfg, tx=[1])
    action = Action(power=[0.1], assoc=[0], cores=[[0]], local_admit=[0])
    step(state, action, vcfg, _streams(vcfg))
    assert state.tx_backlog == [3]
    assert state.compute_backlog == [[1]]


def test_step_cannot_serve_absent_tasks():
    # K=2, c=5: exactly 2 completions.
    vcfg = _rate_vcfg(arrival_rates=0.0, task_cycles=2.0e7)
    state = seed_state(vcfg, compute=[[2]])
    action = Action(power=[0.0], assoc=[-1], cores=[[1]], local_admit=[0])
    assert computing_rate(action, vcfg) == [[5]]
    _, rec = step(state, action, vcfg, _streams(vcfg))
    assert rec.completions == 2
    assert state.compute_backlog == [[0]]
    assert state.total_completed == 2


def test_step_rejects_invalid_action():
    vcfg = make_vcfg()
    state = initial_state(vcfg)
    action = Action.idle(vcfg)
    action.power[0] = 0.07  # not a configured level
    action.assoc[0] = 0
    with pytest.raises(ActionInvalid):
        step(state, action, vcfg, _streams(vcfg))
    action = Action.idle(vcfg)
    action.cores[0][0] = 3  # only 2 cores exist
    with pytest.raises(ActionInvalid):
        step(state, action, vcfg, _streams(vcfg))


def test_deadline_expiry_age_and_counts():
    # No uplink possible: every task expires once its age exceeds 3 slots.
    vcfg = make_vcfg(
        num_mds=1, num_ess=1, power_levels=[0.0], arrival_rates=1.0, deadline_slots=3
    )
    state = initial_state(vcfg)
    streams = _streams(vcfg)
    horizon = 20
    for _ in range(horizon):
        step(state, Action.idle(vcfg), vcfg, streams)
    check_coherence(state)
    assert state.tx_backlog == [4]  # ages 0..3 survive
    assert state.total_dropped_deadline == horizon - 4
    for entry in state.tasks.values():
        if entry.location is TaskLocation.DROPPED:
            assert entry.dropped_slot - entry.born_slot == 4
            assert entry.drop_reason == "deadline"


def test_local_queue_service_and_energy():
    lc = {"local_core_speed_hz": 1.0e9, "local_energy_coeff": 1.0e-27}
    vcfg = make_vcfg(
        num_mds=1, num_ess=1, arrival_rates=1.0, local_compute=lc, task_cycles=5e7
    )
    assert vcfg.local_tasks == 2
    state = seed_state(vcfg, local=[3])
    action = Action.idle(vcfg)
    action.local_admit[0] = 10
    _, rec = step(state, action, vcfg, _streams(vcfg))
    assert rec.completions == 2
    assert state.local_backlog == [2]  # 3 - 2 served + 1 arrival
    # active local core: kappa * f^3 * tau = 1e-27 * 1e27 * 0.1
    assert rec.energy == pytest.approx(0.1)
    check_coherence(state)


# --- trajectories -------------------------------------------------------------------


def test_zero_arrivals_trajectory():
    vcfg = make_vcfg(arrival_rates=0.0, horizon=500)
    summary, _ = run_trajectory(vcfg, BackpressurePolicy())
    assert summary.total_arrivals == 0
    assert summary.throughput == 0.0
    assert summary.completion_ratio == 1.0  # vacuous by convention
    assert summary.energy_total == 0.0
    assert summary.drops_deadline == 0


def test_empty_horizon():
    vcfg = make_vcfg(horizon=0)
    summary, records = run_trajectory(vcfg, BackpressurePolicy(), trace=True)
    assert summary.slots == 0
    assert summary.total_arrivals == 0
    assert summary.throughput == 0.0
    assert records == []


def test_trajectory_bit_identical_reruns():
    vcfg = make_vcfg(num_mds=3, num_ess=2, horizon=400, arrival_rates=0.6,
                     deadline_slots=12)
    s1, r1 = run_trajectory(vcfg, RandomFeasiblePolicy(), trace=True)
    s2, r2 = run_trajectory(vcfg, RandomFeasiblePolicy(), trace=True)
    assert s1 == s2
    assert r1 == r2


def test_trajectory_differs_across_seeds():
    a, _ = run_trajectory(make_vcfg(horizon=300, rng_seed=1), BackpressurePolicy())
    b, _ = run_trajectory(make_vcfg(horizon=300, rng_seed=2), BackpressurePolicy())
    assert (a.total_arrivals, a.total_completions) != (b.total_arrivals, b.total_completions)


def test_stable_tandem_completes_everything():
    # Service of 2 tasks/slot on both stages against lambda = 0.3.
    vcfg = make_vcfg(
        num_mds=1,
        num_ess=1,
        es_placement="explicit",
        md_placement="explicit",
        es_positions=[[50.0, 50.0]],
        md_positions=[[50.0, 60.0]],
        noise_psd=1.0e-13,
        channel_states=[1.0],
        channel_transition=[[1.0]],
        arrival_rates=0.3,
        horizon=20_000,
        cores_per_es=1,
        task_cycles=5e7,
    )
    summary, _ = run_trajectory(vcfg, BackpressurePolicy())
    assert summary.completion_ratio == pytest.approx(1.0, abs=1e-3)


def test_little_law_on_stable_tandem():
    vcfg = make_vcfg(
        num_mds=1,
        num_ess=1,
        es_placement="explicit",
        md_placement="explicit",
        es_positions=[[50.0, 50.0]],
        md_positions=[[50.0, 60.0]],
        noise_psd=1.0e-13,
        channel_states=[1.0],
        channel_transition=[[1.0]],
        arrival_rates=0.3,
        horizon=30_000,
        cores_per_es=1,
        task_cycles=5e7,
    )
    summary, _ = run_trajectory(vcfg, BackpressurePolicy())
    occupancy = summary.mean_q_total + summary.mean_k_total
    assert occupancy / summary.throughput == pytest.approx(
        summary.mean_latency_slots, rel=0.05
    )


def test_fifo_completion_order_per_pair():
    vcfg = make_vcfg(num_mds=2, num_ess=2, horizon=800, arrival_rates=0.7)
    summary, _ = run_trajectory(vcfg, RandomFeasiblePolicy(), trace=False)
    # reconstruct from a fresh run's ledger
    from edgebench.dynamics import run_trajectory as rt  # same call, keep ledger

    vcfg2 = make_vcfg(num_mds=2, num_ess=2, horizon=800, arrival_rates=0.7)
    state = initial_state(vcfg2)
    streams = Streams(vcfg2)
    policy = RandomFeasiblePolicy()
    for t in range(vcfg2.horizon):
        action = policy.decide(state, vcfg2, streams.policy_uniforms(t))
        step(state, action, vcfg2, streams)
    groups: dict[tuple[int, int], list] = {}
    for entry in state.tasks.values():
        if entry.location is TaskLocation.COMPLETED and entry.es >= 0:
            groups.setdefault((entry.owner_md, entry.es), []).append(entry)
    assert groups
    for pair_entries in groups.values():
        pair_entries.sort(key=lambda e: (e.completed_slot, e.task_id))
        borns = [e.born_slot for e in pair_entries]
        assert borns == sorted(borns)


def test_energy_monotone_and_zero_when_unpowered():
    vcfg = make_vcfg(horizon=300, arrival_rates=0.8)
    summary, records = run_trajectory(vcfg, BackpressurePolicy(), trace=True)
    cumulative = np.cumsum([r.energy for r in records])
    assert (np.diff(cumulative) >= -1e-12).all()
    assert summary.energy_total > 0
    quiet = make_vcfg(horizon=300, arrival_rates=0.8, power_levels=[0.0])
    summary_quiet, _ = run_trajectory(quiet, BackpressurePolicy())
    assert summary_quiet.energy_total == 0.0


def test_trajectory_conservation_random_policies():
    for seed in range(6):
        vcfg = make_vcfg(
            num_mds=3,
            num_ess=2,
            horizon=600,
            arrival_rates=[0.9, 0.4, 0.1],
            deadline_slots=8 if seed % 2 else 0,
            rng_seed=seed,
        )
        summary, _ = run_trajectory(vcfg, RandomFeasiblePolicy())
        assert (
            summary.total_completions
            + summary.drops_deadline
            + summary.drops_overflow
            + summary.residual
            == summary.total_arrivals
        )
