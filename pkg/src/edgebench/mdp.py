"""Exact decision-process solving on small truncated instances.

The system state is the vector of truncated queue lengths plus every
link's fading state; an action fixes each MD's (ES, power) choice and each
ES's core allocation. Arrivals must be per-slot bernoulli and the scenario
must have no local compute, no backhaul, and no deadline, so the kernel can
be enumerated exactly: the only stochasticity is the fading chains and the
per-MD arrival coin flips. Queue growth beyond the truncation caps counts
as a (reward-neutral, tracked) overflow drop, which keeps the kernel a
proper stochastic matrix.

The transition arithmetic is shared between the kernel enumerator and the
trajectory sampler, so a solved policy's simulated long-run reward can be
checked against the model's own prediction.
"""

from __future__ import annotations

import itertools
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .config import ValidatedConfig, model_digest
from .errors import (
    EdgebenchError,
    MalformedConfig,
    NonConvergence,
    OracleTooLarge,
    SpecMismatch,
    StateSpaceTooLarge,
)
from .policies import shannon_tasks
from .state import Action, SystemState

DEFAULT_STATE_CAP = 2_000_000
DEFAULT_ACTION_CAP = 10_000
ORACLE_POLICY_CAP = 10_000_000


@dataclass(frozen=True)
class MdpSpec:
    """A small scenario plus truncation and solving parameters."""

    vcfg: ValidatedConfig
    q_max: int
    k_max: int
    gamma: float = 0.95
    epsilon: float = 1e-6
    reward_kind: str = "completions"
    state_cap: int = DEFAULT_STATE_CAP
    action_cap: int = DEFAULT_ACTION_CAP

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise MalformedConfig("gamma", "must be in (0, 1)")
        if self.epsilon <= 0:
            raise MalformedConfig("epsilon", "must be > 0")
        if self.q_max < 1 or self.k_max < 1:
            raise MalformedConfig("q_max/k_max", "must be >= 1")
        if self.reward_kind not in ("completions", "admitted"):
            raise MalformedConfig("reward_kind", f"unknown {self.reward_kind!r}")
        vcfg = self.vcfg
        if vcfg.arrival_kind != "bernoulli":
            raise MalformedConfig("arrival_kind", "decision process needs bernoulli")
        if vcfg.local_compute is not None:
            raise MalformedConfig("local_compute", "not representable in the model")
        if vcfg.backhaul_links:
            raise MalformedConfig("backhaul_links", "not representable in the model")
        if vcfg.deadline_slots != 0:
            raise MalformedConfig("deadline_slots", "model has no task ages; use 0")

    def digest(self) -> str:
        return model_digest(
            self.vcfg,
            extra={
                "q_max": self.q_max,
                "k_max": self.k_max,
                "gamma": self.gamma,
                "epsilon": self.epsilon,
                "reward_kind": self.reward_kind,
            },
        )


class StateSpace:
    """Bijective mixed-radix indexing of (tx queues, compute queues, fading).

    Index 0 is the all-empty state with every fading chain in state 0.
    Digit order: tx queues (base q_max+1), then compute queues row-major
    (base k_max+1), then fading states row-major; first digit is the most
    significant within each group.
    """

    def __init__(self, spec: MdpSpec):
        vcfg = spec.vcfg
        self.u = vcfg.num_mds
        self.j = vcfg.num_ess
        self.pairs = self.u * self.j
        self.q_base = spec.q_max + 1
        self.k_base = spec.k_max + 1
        self.h_base = len(vcfg.channel_states)
        self.q_size = self.q_base**self.u
        self.k_size = self.k_base**self.pairs
        self.h_size = self.h_base**self.pairs
        self.count = self.q_size * self.k_size * self.h_size
        if self.count > spec.state_cap:
            raise StateSpaceTooLarge(self.count, spec.state_cap)

    def encode_q(self, q: Sequence[int]) -> int:
        code = 0
        for v in q:
            code = code * self.q_base + v
        return code

    def encode_k(self, k_flat: Sequence[int]) -> int:
        code = 0
        for v in k_flat:
            code = code * self.k_base + v
        return code

    def encode_h(self, h_flat: Sequence[int]) -> int:
        code = 0
        for v in h_flat:
            code = code * self.h_base + v
        return code

    def encode(self, q: Sequence[int], k_flat: Sequence[int], h_flat: Sequence[int]) -> int:
        return (
            self.encode_q(q) * self.k_size + self.encode_k(k_flat)
        ) * self.h_size + self.encode_h(h_flat)

    def decode(self, idx: int) -> tuple[list[int], list[int], list[int]]:
        qk, h_code = divmod(idx, self.h_size)
        q_code, k_code = divmod(qk, self.k_size)
        q = [0] * self.u
        for pos in range(self.u - 1, -1, -1):
            q_code, q[pos] = divmod(q_code, self.q_base)
        k = [0] * self.pairs
        for pos in range(self.pairs - 1, -1, -1):
            k_code, k[pos] = divmod(k_code, self.k_base)
        h = [0] * self.pairs
        for pos in range(self.pairs - 1, -1, -1):
            h_code, h[pos] = divmod(h_code, self.h_base)
        return q, k, h


def enumerate_states(spec: MdpSpec) -> StateSpace:
    """Index the full truncated state space (raises StateSpaceTooLarge)."""
    return StateSpace(spec)


@dataclass(frozen=True)
class EnumeratedAction:
    """One joint action, with its per-slot service and rate tables.

    service[i*J+j] is the whole-task computing service of pair (i, j);
    rate_table[i][h] is MD i's uplink rate when its chosen link's fading
    is in state h (empty tuple if the MD idles).
    """

    power: tuple[float, ...]
    assoc: tuple[int, ...]
    cores: tuple[tuple[int, ...], ...]
    service: tuple[int, ...]
    rate_table: tuple[tuple[int, ...], ...]


def _core_allocations(total: int, slots: int) -> list[tuple[int, ...]]:
    """All slot-wise allocations with sum <= total."""
    if slots == 1:
        return [(n,) for n in range(total + 1)]
    out = []
    for first in range(total + 1):
        for rest in _core_allocations(total - first, slots - 1):
            out.append((first,) + rest)
    return out


def enumerate_actions(vcfg: ValidatedConfig, action_cap: int = DEFAULT_ACTION_CAP) -> list[EnumeratedAction]:
    """Every joint (association, power, core-allocation) action.

    Per MD: idle, or any (ES, positive power) pair. Per ES: any allocation
    of its cores over the MDs summing to at most the core count.
    """
    u, jj = vcfg.num_mds, vcfg.num_ess
    md_options: list[tuple[int, float]] = [(-1, 0.0)]
    for j in range(jj):
        for p in vcfg.positive_powers:
            md_options.append((j, p))
    alloc_per_es = [_core_allocations(vcfg.cores_per_es[j], u) for j in range(jj)]

    count = len(md_options) ** u
    for allocs in alloc_per_es:
        count *= len(allocs)
    if count > action_cap:
        raise EdgebenchError(
            f"action space has {count} actions, cap is {action_cap}"
        )

    budget = vcfg.raw.core_speed_hz * vcfg.slot_duration
    w = vcfg.task_cycles
    n_ch = len(vcfg.channel_states)
    bw = vcfg.bandwidth_hz

    actions: list[EnumeratedAction] = []
    for md_choice in itertools.product(md_options, repeat=u):
        assoc = tuple(c[0] for c in md_choice)
        power = tuple(c[1] for c in md_choice)
        counts = [0] * jj
        for a in assoc:
            if a >= 0:
                counts[a] += 1
        rate_table = []
        for i in range(u):
            a, p = assoc[i], power[i]
            if a < 0 or p <= 0:
                rate_table.append(())
                continue
            share = bw / counts[a]
            rate_table.append(
                tuple(
                    shannon_tasks(p, vcfg.gains[i][a] * vcfg.channel_states[h], share, vcfg)
                    for h in range(n_ch)
                )
            )
        rate_table = tuple(rate_table)
        for es_allocs in itertools.product(*alloc_per_es):
            # es_allocs[j][i] = cores of ES j given to MD i
            cores = tuple(
                tuple(es_allocs[j][i] for j in range(jj)) for i in range(u)
            )
            service = tuple(
                int(cores[i][j] * budget // w)
                for i in range(u)
                for j in range(jj)
            )
            actions.append(
                EnumeratedAction(
                    power=power,
                    assoc=assoc,
                    cores=cores,
                    service=service,
                    rate_table=rate_table,
                )
            )
    return actions


def _arrival_branches(vcfg: ValidatedConfig) -> list[tuple[float, tuple[int, ...]]]:
    """All bernoulli arrival outcomes with nonzero probability."""
    per_md = []
    for lam in vcfg.rates:
        opts = []
        if lam < 1.0:
            opts.append((1.0 - lam, 0))
        if lam > 0.0:
            opts.append((lam, 1))
        per_md.append(opts)
    branches = []
    for combo in itertools.product(*per_md):
        prob = 1.0
        for p, _ in combo:
            prob *= p
        branches.append((prob, tuple(a for _, a in combo)))
    return branches


def _channel_branches(
    vcfg: ValidatedConfig, h_flat: Sequence[int]
) -> list[tuple[float, tuple[int, ...]]]:
    """All joint fading transitions from `h_flat` with nonzero probability."""
    rows = vcfg.raw.channel_transition
    per_pair = []
    for h in h_flat:
        row = rows[h]
        per_pair.append([(p, nxt) for nxt, p in enumerate(row) if p > 0.0])
    branches = []
    for combo in itertools.product(*per_pair):
        prob = 1.0
        for p, _ in combo:
            prob *= p
        branches.append((prob, tuple(nxt for _, nxt in combo)))
    return branches


@dataclass
class TransitionModel:
    """Sparse kernel P(s'|s,a) and reward R(s,a) over the enumerated space."""

    spec: MdpSpec
    space: StateSpace
    actions: list[EnumeratedAction]
    kernel: sparse.csr_matrix  # shape (S*A, S)
    reward: np.ndarray  # shape (S*A,)

    @property
    def n_states(self) -> int:
        return self.space.count

    @property
    def n_actions(self) -> int:
        return len(self.actions)


def _apply_transition(
    space: StateSpace,
    spec: MdpSpec,
    action: EnumeratedAction,
    q: Sequence[int],
    k: Sequence[int],
    h_next: Sequence[int],
    arrivals: Sequence[int],
) -> tuple[int, int, int]:
    """One deterministic transition given realized fading and arrivals.

    Returns (successor index, completions, overflow drops). Shared by the
    kernel enumerator and the trajectory sampler so the two can never
    drift apart.
    """
    u, jj = space.u, space.j
    k_max, q_max = spec.k_max, spec.q_max
    service = action.service
    assoc = action.assoc

    k_new = [0] * space.pairs
    completions = 0
    for idx in range(space.pairs):
        served = service[idx]
        have = k[idx]
        if served > have:
            served = have
        completions += served
        k_new[idx] = have - served

    q_new = list(q)
    drops = 0
    for i in range(u):
        a = assoc[i]
        if a < 0:
            continue
        rate = action.rate_table[i][h_next[i * jj + a]]
        moved = min(q_new[i], rate)
        if moved <= 0:
            continue
        q_new[i] -= moved
        idx = i * jj + a
        total = k_new[idx] + moved
        if total > k_max:
            drops += total - k_max
            total = k_max
        k_new[idx] = total

    for i in range(u):
        total = q_new[i] + arrivals[i]
        if total > q_max:
            drops += total - q_max
            total = q_max
        q_new[i] = total

    return space.encode(q_new, k_new, h_next), completions, drops


def build_transition_model(spec: MdpSpec) -> TransitionModel:
    """Enumerate the exact kernel and per-(state, action) reward.

    Reward is the slot's completions (deterministic given state and action)
    or, for reward_kind "admitted", the expected number of arrivals that
    fit under the transmission-queue cap.
    """
    space = enumerate_states(spec)
    vcfg = spec.vcfg
    actions = enumerate_actions(vcfg, spec.action_cap)
    arrival_branches = _arrival_branches(vcfg)
    channel_cache: dict[int, list[tuple[float, tuple[int, ...]]]] = {}

    n_states, n_actions = space.count, len(actions)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    reward = np.zeros(n_states * n_actions, dtype=float)

    for s in range(n_states):
        q, k, h = space.decode(s)
        h_code = space.encode_h(h)
        ch_branches = channel_cache.get(h_code)
        if ch_branches is None:
            ch_branches = _channel_branches(vcfg, h)
            channel_cache[h_code] = ch_branches
        for a_idx, action in enumerate(actions):
            row_id = s * n_actions + a_idx
            acc: dict[int, float] = {}
            reward_acc = 0.0
            for ch_prob, h_next in ch_branches:
                for arr_prob, arr in arrival_branches:
                    succ, completions, drops = _apply_transition(
                        space, spec, action, q, k, h_next, arr
                    )
                    prob = ch_prob * arr_prob
                    acc[succ] = acc.get(succ, 0.0) + prob
                    if spec.reward_kind == "completions":
                        reward_acc += prob * completions
                    else:
                        admitted = sum(arr) - _q_overflow(spec, space, action, q, h_next, arr)
                        reward_acc += prob * admitted
            reward[row_id] = reward_acc
            for succ, prob in acc.items():
                rows.append(row_id)
                cols.append(succ)
                vals.append(prob)

    kernel = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(n_states * n_actions, n_states)
    )
    return TransitionModel(
        spec=spec, space=space, actions=actions, kernel=kernel, reward=reward
    )


def _q_overflow(
    spec: MdpSpec,
    space: StateSpace,
    action: EnumeratedAction,
    q: Sequence[int],
    h_next: Sequence[int],
    arrivals: Sequence[int],
) -> int:
    """Arrivals lost to the transmission-queue cap for one outcome."""
    jj = space.j
    lost = 0
    for i in range(space.u):
        a = action.assoc[i]
        rate = action.rate_table[i][h_next[i * jj + a]] if a >= 0 else 0
        after = q[i] - min(q[i], rate) + arrivals[i]
        if after > spec.q_max:
            lost += after - spec.q_max
    return lost


@dataclass
class SolvedPolicy:
    """Greedy policy extracted from value iteration, plus its metadata."""

    action_idx: np.ndarray
    values: np.ndarray
    iterations: int
    final_residual: float
    residuals: list[float]
    digest: str
    q_max: int
    k_max: int
    gamma: float
    epsilon: float
    reward_kind: str


def value_iteration(model: TransitionModel, max_iterations: int = 1_000_000) -> SolvedPolicy:
    """Iterate the Bellman optimality operator to a sup-norm residual target.

    The discount makes the operator a contraction, so residuals shrink
    geometrically; a residual of eps bounds the greedy policy's value
    suboptimality by 2*gamma*eps/(1-gamma). Ties in the greedy extraction
    go to the lowest action index.
    """
    spec = model.spec
    n_states, n_actions = model.n_states, model.n_actions
    values = np.zeros(n_states, dtype=float)
    residuals: list[float] = []
    for iteration in range(1, max_iterations + 1):
        backed_up = model.reward + spec.gamma * (model.kernel @ values)
        new_values = backed_up.reshape(n_states, n_actions).max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        residuals.append(residual)
        values = new_values
        if residual <= spec.epsilon:
            backed_up = model.reward + spec.gamma * (model.kernel @ values)
            action_idx = backed_up.reshape(n_states, n_actions).argmax(axis=1)
            return SolvedPolicy(
                action_idx=action_idx.astype(np.int64),
                values=values,
                iterations=iteration,
                final_residual=residual,
                residuals=residuals,
                digest=spec.digest(),
                q_max=spec.q_max,
                k_max=spec.k_max,
                gamma=spec.gamma,
                epsilon=spec.epsilon,
                reward_kind=spec.reward_kind,
            )
    raise NonConvergence(
        f"no convergence after {max_iterations} iterations "
        f"(last residual {residuals[-1] if residuals else math.nan})"
    )


def policy_value(model: TransitionModel, policy: Sequence[int]) -> np.ndarray:
    """Exact discounted value of a stationary deterministic policy."""
    n_states, n_actions = model.n_states, model.n_actions
    row_ids = np.arange(n_states) * n_actions + np.asarray(policy)
    p_pi = model.kernel[row_ids].toarray()
    r_pi = model.reward[row_ids]
    mat = np.eye(n_states) - model.spec.gamma * p_pi
    return np.linalg.solve(mat, r_pi)


def brute_force_best_policy(model: TransitionModel) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate every stationary deterministic policy; return the best.

    Used only as a verification oracle: each candidate is evaluated exactly
    by solving its linear policy-evaluation system. Returns the elementwise
    max value vector over all policies (the optimal policy dominates in
    every state, so this equals the optimal value) and one policy attaining
    it. Enumeration is refused beyond 1e7 candidates unless the per-state
    action count is at most 4 with at most 12 states.
    """
    n_states, n_actions = model.n_states, model.n_actions
    log_candidates = n_states * math.log(n_actions) if n_actions > 1 else 0.0
    small_exception = n_actions <= 4 and n_states <= 12
    if log_candidates > math.log(ORACLE_POLICY_CAP) and not small_exception:
        raise OracleTooLarge(
            f"{n_actions}^{n_states} candidate policies exceed {ORACLE_POLICY_CAP}"
        )

    gamma = model.spec.gamma
    dense_p = np.asarray(model.kernel.todense()).reshape(
        n_states, n_actions, n_states
    )
    dense_r = model.reward.reshape(n_states, n_actions)
    eye = np.eye(n_states)
    state_ids = np.arange(n_states)

    best_values = np.full(n_states, -np.inf)
    best_policy = np.zeros(n_states, dtype=np.int64)
    best_sum = -np.inf
    for candidate in itertools.product(range(n_actions), repeat=n_states):
        pol = np.asarray(candidate)
        p_pi = dense_p[state_ids, pol]
        r_pi = dense_r[state_ids, pol]
        values = np.linalg.solve(eye - gamma * p_pi, r_pi)
        np.maximum(best_values, values, out=best_values)
        total = values.sum()
        if total > best_sum:
            best_sum = total
            best_policy = pol
    return best_values, best_policy


def model_average_reward(model: TransitionModel, policy: Sequence[int]) -> float:
    """Long-run average reward per slot of a policy under the model.

    Solves for the stationary distribution of the policy's chain (assumed
    ergodic, which holds for any instance with arrival randomness) and dots
    it with the per-state reward.
    """
    n_states, n_actions = model.n_states, model.n_actions
    row_ids = np.arange(n_states) * n_actions + np.asarray(policy)
    p_pi = model.kernel[row_ids].toarray()
    r_pi = model.reward[row_ids]
    a_mat = np.vstack([p_pi.T - np.eye(n_states), np.ones(n_states)])
    b_vec = np.zeros(n_states + 1)
    b_vec[-1] = 1.0
    dist, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    dist = np.clip(dist, 0.0, None)
    dist /= dist.sum()
    return float(dist @ r_pi)


@dataclass
class SimulatedRun:
    """Outcome of sampling the truncated dynamics under a fixed policy."""

    slots: int
    total_reward: float
    completions: int
    overflow_drops: int

    @property
    def average_reward(self) -> float:
        return self.total_reward / self.slots if self.slots else 0.0


def simulate_policy(
    model: TransitionModel, policy: Sequence[int], n_slots: int, seed: int
) -> SimulatedRun:
    """Sample the truncated dynamics slot by slot under a fixed policy.

    Uses the same deterministic transition arithmetic as the kernel
    builder, with fading and arrivals sampled instead of enumerated; the
    long-run average reward should match model_average_reward for ergodic
    instances.
    """
    spec = model.spec
    space = model.space
    vcfg = spec.vcfg
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    )
    cumrows = vcfg.channel_cumrows
    rates = vcfg.rates
    u = space.u

    s = 0
    total_reward = 0.0
    completions_total = 0
    overflow_total = 0
    for _ in range(n_slots):
        q, k, h = space.decode(s)
        action = model.actions[policy[s]]
        draws = rng.random(space.pairs + u)
        h_next = [
            bisect_right(cumrows[h[idx]], draws[idx]) for idx in range(space.pairs)
        ]
        arrivals = [1 if draws[space.pairs + i] < rates[i] else 0 for i in range(u)]
        succ, completions, drops = _apply_transition(
            space, spec, action, q, k, h_next, arrivals
        )
        if spec.reward_kind == "completions":
            total_reward += completions
        else:
            total_reward += sum(arrivals) - _q_overflow(
                spec, space, action, q, h_next, arrivals
            )
        completions_total += completions
        overflow_total += drops
        s = succ
    return SimulatedRun(
        slots=n_slots,
        total_reward=total_reward,
        completions=completions_total,
        overflow_drops=overflow_total,
    )


# --- Persistence and deployment ----------------------------------------------


def save_policy(solved: SolvedPolicy, path: str | Path) -> None:
    """Write a solved policy (with its scenario digest) as JSON."""
    payload = {
        "digest": solved.digest,
        "q_max": solved.q_max,
        "k_max": solved.k_max,
        "gamma": solved.gamma,
        "epsilon": solved.epsilon,
        "reward_kind": solved.reward_kind,
        "iterations": solved.iterations,
        "final_residual": solved.final_residual,
        "residuals": solved.residuals,
        "action_idx": solved.action_idx.tolist(),
        "values": solved.values.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_policy(path: str | Path) -> SolvedPolicy:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return SolvedPolicy(
        action_idx=np.asarray(data["action_idx"], dtype=np.int64),
        values=np.asarray(data["values"], dtype=float),
        iterations=data["iterations"],
        final_residual=data["final_residual"],
        residuals=list(data["residuals"]),
        digest=data["digest"],
        q_max=data["q_max"],
        k_max=data["k_max"],
        gamma=data["gamma"],
        epsilon=data["epsilon"],
        reward_kind=data["reward_kind"],
    )


class SolvedPolicyDecider:
    """Runs a solved policy inside the simulator.

    Live queue lengths above the truncation caps are clamped to the cap
    before lookup. The first decision verifies that the scenario in use
    matches the one the policy was solved for (SpecMismatch otherwise).
    """

    def __init__(self, solved: SolvedPolicy):
        self.solved = solved
        self._space: Optional[StateSpace] = None
        self._actions: Optional[list[EnumeratedAction]] = None

    def _prepare(self, vcfg: ValidatedConfig) -> None:
        solved = self.solved
        spec = MdpSpec(
            vcfg=vcfg,
            q_max=solved.q_max,
            k_max=solved.k_max,
            gamma=solved.gamma,
            epsilon=solved.epsilon,
            reward_kind=solved.reward_kind,
        )
        if spec.digest() != solved.digest:
            raise SpecMismatch(
                "scenario does not match the one this policy was solved for"
            )
        self._space = StateSpace(spec)
        self._actions = enumerate_actions(vcfg, spec.action_cap)

    def decide(self, state: SystemState, vcfg: ValidatedConfig, draw) -> Action:
        if self._space is None:
            self._prepare(vcfg)
        space, actions = self._space, self._actions
        q = [min(v, space.q_base - 1) for v in state.tx_backlog]
        k = [
            min(state.compute_backlog[i][j], space.k_base - 1)
            for i in range(space.u)
            for j in range(space.j)
        ]
        h = [state.channel_idx[i][j] for i in range(space.u) for j in range(space.j)]
        chosen = actions[int(self.solved.action_idx[space.encode(q, k, h)])]
        return Action(
            power=list(chosen.power),
            assoc=list(chosen.assoc),
            cores=[list(row) for row in chosen.cores],
            local_admit=[0] * vcfg.num_mds,
        )


def solved_policy_decide(
    state: SystemState, solved: SolvedPolicy, vcfg: ValidatedConfig
) -> Action:
    """One-shot lookup convenience around SolvedPolicyDecider."""
    return SolvedPolicyDecider(solved).decide(state, vcfg, None)
