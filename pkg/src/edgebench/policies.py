"""Per-slot decision policies mapping system state to an action.

Three heuristics bracket the design space: a transmission-first rule that
chases the best link and ignores computing load, a computation-first rule
that chases the least-loaded server and ignores the channel, and a
max-weight (backpressure) rule that weighs both through the differential
backlog between the transmission and computing stages, with an optional
energy penalty traded off by the weight V. A random-feasible policy serves
as a sanity floor, and a threshold rule routes arrivals to on-device
computing while the local queue is short.

All ties break toward the lowest index, so every policy is a deterministic
function of (state, config, slot randomness).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .config import ValidatedConfig
from .errors import EdgebenchError, LocalComputeDisabled
from .multihop import plan_migrations
from .state import Action, SystemState


def shannon_tasks(
    power: float, gain: float, share_hz: float, vcfg: ValidatedConfig
) -> int:
    """Whole tasks per slot over a band of `share_hz` at this power/gain."""
    if power <= 0 or share_hz <= 0:
        return 0
    snr = power * gain / (vcfg.noise_psd * share_hz)
    bits = vcfg.slot_duration * share_hz * math.log2(1.0 + snr)
    return int(bits // vcfg.task_size_bits)


def best_positive_option(options: Sequence[tuple[float, int, int]]) -> Optional[int]:
    """Index of the first strictly-positive-maximum weight, else None.

    Options are (weight, es, power_index) in iteration order; earlier
    entries win ties, which realizes the lowest-index tie rule. Scaling all
    weights by a positive constant cannot change the winner.
    """
    best_idx = None
    best_w = 0.0
    for idx, (w, _es, _p) in enumerate(options):
        if w > best_w:
            best_w = w
            best_idx = idx
    return best_idx


def _instant_gain(state: SystemState, vcfg: ValidatedConfig, i: int, j: int) -> float:
    return vcfg.gains[i][j] * vcfg.channel_states[state.channel_idx[i][j]]


def assign_cores_greedy(state: SystemState, vcfg: ValidatedConfig) -> list[list[int]]:
    """Largest-backlog-first core assignment, one core at a time per ES.

    Each assigned core is assumed to serve its per-core task quota, so the
    "remaining" backlog shrinks as cores pile onto a queue; ties go to the
    lowest MD index. Cores stop being assigned once no queue has remaining
    backlog.
    """
    u, jj = vcfg.num_mds, vcfg.num_ess
    cores = [[0] * jj for _ in range(u)]
    quota = max(vcfg.per_core_tasks, 1)
    for j in range(jj):
        remaining = [state.compute_backlog[i][j] for i in range(u)]
        for _ in range(vcfg.cores_per_es[j]):
            best = max(range(u), key=lambda i: (remaining[i], -i))
            if remaining[best] <= 0:
                break
            cores[best][j] += 1
            remaining[best] -= quota
    return cores


def assign_cores_even(state: SystemState, vcfg: ValidatedConfig) -> list[list[int]]:
    """Even split of each ES's cores over its non-empty queues.

    Integer division; the whole remainder goes to the largest backlog
    (ties to the lowest MD index). ESs with no waiting tasks assign nothing.
    """
    u, jj = vcfg.num_mds, vcfg.num_ess
    cores = [[0] * jj for _ in range(u)]
    for j in range(jj):
        active = [i for i in range(u) if state.compute_backlog[i][j] > 0]
        if not active:
            continue
        base, rem = divmod(vcfg.cores_per_es[j], len(active))
        for i in active:
            cores[i][j] = base
        if rem:
            top = max(active, key=lambda i: (state.compute_backlog[i][j], -i))
            cores[top][j] += rem
    return cores


class _MigrationMixin:
    """Shared backhaul hook: policies plan migrations when links exist."""

    migration_threshold: float = 0.0

    def _finish(
        self, action: Action, state: SystemState, vcfg: ValidatedConfig
    ) -> Action:
        if vcfg.backhaul_links:
            action.migrate = plan_migrations(state, vcfg, self.migration_threshold)
        return action


class TransmissionBasedPolicy(_MigrationMixin):
    """Chase the strongest instantaneous link; ignore computing backlogs."""

    def __init__(self, migration_threshold: float = 0.0):
        self.migration_threshold = migration_threshold

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action:
        action = Action.idle(vcfg)
        max_power = vcfg.positive_powers[-1] if vcfg.positive_powers else 0.0
        for i in range(vcfg.num_mds):
            if state.tx_backlog[i] <= 0 or max_power <= 0:
                continue
            best = max(
                range(vcfg.num_ess),
                key=lambda j: (_instant_gain(state, vcfg, i, j), -j),
            )
            action.assoc[i] = best
            action.power[i] = max_power
        action.cores = assign_cores_even(state, vcfg)
        return self._finish(action, state, vcfg)


class ComputationBasedPolicy(_MigrationMixin):
    """Chase the least-loaded ES; ignore channel quality."""

    def __init__(self, migration_threshold: float = 0.0):
        self.migration_threshold = migration_threshold

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action:
        action = Action.idle(vcfg)
        max_power = vcfg.positive_powers[-1] if vcfg.positive_powers else 0.0
        backlogs = [state.es_backlog(j) for j in range(vcfg.num_ess)]
        target = min(range(vcfg.num_ess), key=lambda j: (backlogs[j], j))
        for i in range(vcfg.num_mds):
            if state.tx_backlog[i] <= 0 or max_power <= 0:
                continue
            action.assoc[i] = target
            action.power[i] = max_power
        action.cores = assign_cores_greedy(state, vcfg)
        return self._finish(action, state, vcfg)


class BackpressurePolicy(_MigrationMixin):
    """Max-weight on the transmission/computing differential backlog.

    Each MD scores every (ES, power) option by
    max(tx_backlog - compute_backlog, 0) * estimated_rate - V * power * slot,
    idling when nothing scores positive; V=0 is pure max-weight. The
    estimated rate assumes solo bandwidth in a first pass, then is refined
    once under the bandwidth sharing that the first pass induces (a full
    joint fixed point over associations would be exponential).
    """

    def __init__(self, v_weight: float = 0.0, migration_threshold: float = 0.0):
        if v_weight < 0:
            raise EdgebenchError("drift-penalty weight V must be >= 0")
        self.v_weight = v_weight
        self.migration_threshold = migration_threshold

    def _options(
        self,
        state: SystemState,
        vcfg: ValidatedConfig,
        i: int,
        share_for: dict[int, float],
    ) -> list[tuple[float, int, int]]:
        tau = vcfg.slot_duration
        q = state.tx_backlog[i]
        opts = []
        for j in range(vcfg.num_ess):
            diff = q - state.compute_backlog[i][j]
            if diff < 0:
                diff = 0
            gain = _instant_gain(state, vcfg, i, j)
            for p_idx, p in enumerate(vcfg.positive_powers):
                rate = shannon_tasks(p, gain, share_for[j], vcfg)
                opts.append((diff * rate - self.v_weight * p * tau, j, p_idx))
        return opts

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action:
        action = Action.idle(vcfg)
        u, jj = vcfg.num_mds, vcfg.num_ess
        if vcfg.positive_powers:
            bw = vcfg.bandwidth_hz
            solo = {j: bw for j in range(jj)}
            provisional: list[Optional[tuple[int, int]]] = [None] * u
            counts = [0] * jj
            for i in range(u):
                if state.tx_backlog[i] <= 0:
                    continue
                opts = self._options(state, vcfg, i, solo)
                pick = best_positive_option(opts)
                if pick is not None:
                    _, j, p_idx = opts[pick]
                    provisional[i] = (j, p_idx)
                    counts[j] += 1
            for i in range(u):
                if state.tx_backlog[i] <= 0:
                    continue
                mine = provisional[i]
                share_for = {}
                for j in range(jj):
                    n = counts[j] if (mine is not None and mine[0] == j) else counts[j] + 1
                    share_for[j] = bw / max(n, 1)
                opts = self._options(state, vcfg, i, share_for)
                pick = best_positive_option(opts)
                if pick is not None:
                    _, j, p_idx = opts[pick]
                    action.assoc[i] = j
                    action.power[i] = vcfg.positive_powers[p_idx]
        action.cores = assign_cores_greedy(state, vcfg)
        return self._finish(action, state, vcfg)


class LocalOffloadThresholdPolicy(_MigrationMixin):
    """Keep arrivals on-device while the local queue is below a threshold.

    Arrivals admit to the local queue until it holds `theta` tasks; the
    offload side then behaves exactly like the backpressure policy.
    """

    def __init__(
        self,
        theta: float,
        v_weight: float = 0.0,
        migration_threshold: float = 0.0,
    ):
        if theta < 0:
            raise EdgebenchError("local-queue threshold must be >= 0")
        self.theta = theta
        self._offload = BackpressurePolicy(v_weight, migration_threshold)
        self.migration_threshold = migration_threshold

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action:
        if vcfg.local_compute is None:
            raise LocalComputeDisabled(
                "local-offload threshold policy needs local_compute in the scenario"
            )
        action = self._offload.decide(state, vcfg, draw)
        for i in range(vcfg.num_mds):
            if math.isinf(self.theta):
                action.local_admit[i] = 2**31
            else:
                room = int(math.ceil(self.theta)) - state.local_backlog[i]
                action.local_admit[i] = max(room, 0)
        return action


class RandomFeasiblePolicy(_MigrationMixin):
    """Uniform random (ES, power) per backlogged MD; even core split."""

    def __init__(self, migration_threshold: float = 0.0):
        self.migration_threshold = migration_threshold

    def decide(
        self, state: SystemState, vcfg: ValidatedConfig, draw: np.ndarray
    ) -> Action:
        action = Action.idle(vcfg)
        n_powers = len(vcfg.positive_powers)
        n_combos = vcfg.num_ess * n_powers
        for i in range(vcfg.num_mds):
            if state.tx_backlog[i] <= 0 or n_combos == 0:
                continue
            combo = min(int(draw[i] * n_combos), n_combos - 1)
            action.assoc[i] = combo // n_powers
            action.power[i] = vcfg.positive_powers[combo % n_powers]
        action.cores = assign_cores_even(state, vcfg)
        return self._finish(action, state, vcfg)


POLICY_IDS = (
    "transmission",
    "computation",
    "backpressure",
    "random",
    "local_threshold",
    "solved",
)


def make_policy(policy_id: str, params: Optional[dict] = None):
    """Instantiate a policy from its string id and parameter map.

    `solved` (alias `mdp`) loads a value-iteration policy from the file
    named by params["policy_file"].
    """
    params = dict(params or {})
    threshold = float(params.pop("migration_threshold", 0.0))
    if policy_id == "transmission":
        return TransmissionBasedPolicy(threshold)
    if policy_id == "computation":
        return ComputationBasedPolicy(threshold)
    if policy_id == "backpressure":
        return BackpressurePolicy(float(params.pop("V", 0.0)), threshold)
    if policy_id == "random":
        return RandomFeasiblePolicy(threshold)
    if policy_id == "local_threshold":
        theta = params.pop("theta", 0.0)
        theta = math.inf if theta == "inf" else float(theta)
        return LocalOffloadThresholdPolicy(
            theta, float(params.pop("V", 0.0)), threshold
        )
    if policy_id in ("solved", "mdp"):
        from .mdp import load_policy, SolvedPolicyDecider

        path = params.pop("policy_file", None)
        if path is None:
            raise EdgebenchError("solved policy needs params['policy_file']")
        return SolvedPolicyDecider(load_policy(path))
    raise EdgebenchError(f"unknown policy id {policy_id!r}")
