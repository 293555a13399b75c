"""Scenario configuration: parsing, validation, geometry, and derived constants.

A scenario is a full static description of one experiment instance: how many
mobile devices (MDs) and edge servers (ESs) there are, where they sit, the
radio and compute parameters, the task arrival process, the fading model, and
the policy to run. Everything downstream (dynamics, policies, the decision-
process solver) consumes the validated form produced by :func:`validate_config`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import InconsistentDimensions, MalformedConfig

Position = tuple[float, float]

# Stream purposes for counter-based seed splitting (see dynamics.Streams).
STREAM_PLACEMENT = 0
STREAM_ARRIVALS = 1
STREAM_CHANNELS = 2
STREAM_POLICY = 3


@dataclass(frozen=True)
class LocalComputeSpec:
    """On-device computing: one local core per MD.

    local_energy_coeff is the effective switched-capacitance constant of the
    cubic dynamic-power model (power = coeff * speed**3, in watts).
    """

    local_core_speed_hz: float
    local_energy_coeff: float


@dataclass(frozen=True)
class BackhaulLink:
    """Inter-ES transport pipe.

    delay_slots 0 or 1 models a wired interconnect; larger values model
    store-carry-forward transport. Capacity is in tasks per slot per
    direction (only one direction may be used in any one slot).
    """

    es_a: int
    es_b: int
    delay_slots: int
    capacity_tasks_per_slot: int


@dataclass
class ScenarioConfig:
    """Raw scenario description, as parsed from a JSON file or built in code.

    Positions may be given explicitly or via placement directives:
    es_placement "grid" centers the ESs on a ceil(sqrt(J)) x ceil(sqrt(J))
    partition of the square, md_placement "uniform" draws MD coordinates
    i.i.d. uniform from the scenario seed. arrival_rates is per-MD (a scalar
    in JSON is broadcast to all MDs); the same broadcast applies to
    cores_per_es.
    """

    num_mds: int
    num_ess: int
    horizon: int
    slot_duration: float
    area_side: float
    task_size_bits: float
    task_cycles: float
    arrival_rates: list[float]
    power_levels: list[float]
    bandwidth_hz: float
    noise_psd: float
    pathloss_exponent: float
    reference_gain: float
    reference_distance: float
    cores_per_es: list[int]
    core_speed_hz: float

    scenario_id: str = "scenario"
    deadline_slots: int = 0
    arrival_kind: str = "bernoulli"
    es_placement: str = "grid"
    md_placement: str = "uniform"
    es_positions: Optional[list[Position]] = None
    md_positions: Optional[list[Position]] = None
    channel_states: list[float] = field(default_factory=lambda: [0.5, 1.5])
    channel_transition: list[list[float]] = field(
        default_factory=lambda: [[0.8, 0.2], [0.2, 0.8]]
    )
    local_compute: Optional[LocalComputeSpec] = None
    backhaul_links: list[BackhaulLink] = field(default_factory=list)
    policy_id: str = "backpressure"
    policy_params: dict[str, Any] = field(default_factory=dict)
    lambda_multiplier: float = 1.0
    rng_seed: int = 0


_ROW_SUM_TOL = 1e-12


def mean_gain(d: float, cfg) -> float:
    """Mean link gain at distance d (meters) under log-distance path loss.

    Distances inside the reference distance are clamped to it, which keeps
    the law finite at d=0 and continuous at the clamp boundary.
    """
    d_eff = max(d, cfg.reference_distance)
    return cfg.reference_gain * (d_eff / cfg.reference_distance) ** (
        -cfg.pathloss_exponent
    )


def _grid_positions(count: int, side: float) -> list[Position]:
    # Centroids of an n x n partition, row-major with x varying fastest;
    # the first `count` cells are used when count is not a perfect square.
    n = math.isqrt(count)
    if n * n < count:
        n += 1
    cell = side / n
    out: list[Position] = []
    for row in range(n):
        for col in range(n):
            if len(out) == count:
                return out
            out.append(((col + 0.5) * cell, (row + 0.5) * cell))
    return out


def place_nodes(cfg: ScenarioConfig) -> tuple[list[Position], list[Position]]:
    """Resolve ES and MD coordinates from placement directives.

    Explicit coordinate lists pass through unchanged. Uniform MD placement
    draws from a dedicated stream of the scenario seed, so re-running with
    the same seed reproduces the exact same layout.
    """
    if cfg.es_placement == "explicit":
        if cfg.es_positions is None:
            raise MalformedConfig("es_positions", "required for explicit placement")
        es = [(float(x), float(y)) for x, y in cfg.es_positions]
    elif cfg.es_placement == "grid":
        es = _grid_positions(cfg.num_ess, cfg.area_side)
    else:
        raise MalformedConfig("es_placement", f"unknown directive {cfg.es_placement!r}")

    if cfg.md_placement == "explicit":
        if cfg.md_positions is None:
            raise MalformedConfig("md_positions", "required for explicit placement")
        md = [(float(x), float(y)) for x, y in cfg.md_positions]
    elif cfg.md_placement == "uniform":
        seq = np.random.SeedSequence(
            entropy=cfg.rng_seed, spawn_key=(STREAM_PLACEMENT,)
        )
        rng = np.random.Generator(np.random.Philox(seq))
        coords = rng.uniform(0.0, cfg.area_side, size=(cfg.num_mds, 2))
        md = [(float(x), float(y)) for x, y in coords]
    else:
        raise MalformedConfig("md_placement", f"unknown directive {cfg.md_placement!r}")
    return es, md


@dataclass(frozen=True)
class ValidatedConfig:
    """A checked scenario plus the derived constants the simulator needs.

    rates is the effective per-MD arrival rate (base rate times the lambda
    multiplier). gains[i][j] is the mean path gain between MD i and ES j.
    per_core_tasks is the whole number of tasks one ES core finishes per
    slot; local_tasks is the same for the MD-side core (0 when local compute
    is disabled).
    """

    raw: ScenarioConfig
    es_positions: tuple[Position, ...]
    md_positions: tuple[Position, ...]
    rates: tuple[float, ...]
    gains: tuple[tuple[float, ...], ...]
    cores_per_es: tuple[int, ...]
    per_core_tasks: int
    local_tasks: int
    channel_states: tuple[float, ...]
    channel_cumrows: tuple[tuple[float, ...], ...]
    positive_powers: tuple[float, ...]
    power_level_set: frozenset[float]

    @property
    def num_mds(self) -> int:
        return self.raw.num_mds

    @property
    def num_ess(self) -> int:
        return self.raw.num_ess

    @property
    def horizon(self) -> int:
        return self.raw.horizon

    @property
    def slot_duration(self) -> float:
        return self.raw.slot_duration

    @property
    def task_size_bits(self) -> float:
        return self.raw.task_size_bits

    @property
    def task_cycles(self) -> float:
        return self.raw.task_cycles

    @property
    def deadline_slots(self) -> int:
        return self.raw.deadline_slots

    @property
    def arrival_kind(self) -> str:
        return self.raw.arrival_kind

    @property
    def power_levels(self) -> list[float]:
        return self.raw.power_levels

    @property
    def bandwidth_hz(self) -> float:
        return self.raw.bandwidth_hz

    @property
    def noise_psd(self) -> float:
        return self.raw.noise_psd

    @property
    def local_compute(self) -> Optional[LocalComputeSpec]:
        return self.raw.local_compute

    @property
    def backhaul_links(self) -> list[BackhaulLink]:
        return self.raw.backhaul_links

    @property
    def rng_seed(self) -> int:
        return self.raw.rng_seed

    @property
    def policy_id(self) -> str:
        return self.raw.policy_id

    @property
    def policy_params(self) -> dict[str, Any]:
        return self.raw.policy_params

    @property
    def scenario_id(self) -> str:
        return self.raw.scenario_id

    @property
    def lambda_multiplier(self) -> float:
        return self.raw.lambda_multiplier

    def es_capacity_tasks(self, es: int) -> int:
        """Max tasks ES `es` can finish in one slot with all cores busy."""
        return self.cores_per_es[es] * self.per_core_tasks


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise MalformedConfig(field_name, message)


def _as_list(value, length: int, field_name: str, kind=float) -> list:
    """Broadcast a scalar to `length` or check an existing list's length."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [kind(value)] * length
    out = [kind(v) for v in value]
    if len(out) != length:
        raise InconsistentDimensions(
            field_name, f"expected length {length}, got {len(out)}"
        )
    return out


def validate_config(cfg: ScenarioConfig) -> ValidatedConfig:
    """Check every scenario invariant and precompute derived constants.

    Raises MalformedConfig (or its subclass InconsistentDimensions) naming
    the offending field. Re-validating an identical config yields an
    identical result, including the seeded placement.
    """
    _require(cfg.num_mds >= 1, "num_mds", "must be >= 1")
    _require(cfg.num_ess >= 1, "num_ess", "must be >= 1")
    _require(cfg.horizon >= 0, "horizon", "must be >= 0")
    _require(cfg.slot_duration > 0, "slot_duration", "must be > 0")
    _require(cfg.area_side > 0, "area_side", "must be > 0")
    _require(cfg.task_size_bits > 0, "task_size_bits", "must be > 0")
    _require(cfg.task_cycles > 0, "task_cycles", "must be > 0")
    _require(cfg.deadline_slots >= 0, "deadline_slots", "must be >= 0")
    _require(cfg.bandwidth_hz > 0, "bandwidth_hz", "must be > 0")
    _require(cfg.noise_psd > 0, "noise_psd", "must be > 0")
    _require(cfg.reference_gain > 0, "reference_gain", "must be > 0")
    _require(cfg.reference_distance > 0, "reference_distance", "must be > 0")
    _require(cfg.pathloss_exponent >= 0, "pathloss_exponent", "must be >= 0")
    _require(cfg.core_speed_hz > 0, "core_speed_hz", "must be > 0")
    _require(cfg.lambda_multiplier > 0, "lambda_multiplier", "must be > 0")
    _require(
        cfg.arrival_kind in ("bernoulli", "poisson"),
        "arrival_kind",
        f"must be 'bernoulli' or 'poisson', got {cfg.arrival_kind!r}",
    )

    rates = _as_list(cfg.arrival_rates, cfg.num_mds, "arrival_rates")
    rates = [r * cfg.lambda_multiplier for r in rates]
    for i, r in enumerate(rates):
        _require(r >= 0, f"arrival_rates[{i}]", "must be >= 0")
        if cfg.arrival_kind == "bernoulli":
            _require(
                r <= 1.0,
                f"arrival_rates[{i}]",
                f"bernoulli rate must be <= 1 (got {r} after multiplier)",
            )

    powers = [float(p) for p in cfg.power_levels]
    _require(len(powers) >= 1, "power_levels", "must be non-empty")
    _require(powers[0] == 0.0, "power_levels", "first level must be 0 (idle)")
    _require(
        all(powers[k] < powers[k + 1] for k in range(len(powers) - 1)),
        "power_levels",
        "must be strictly ascending",
    )

    states = [float(s) for s in cfg.channel_states]
    _require(len(states) >= 1, "channel_states", "must be non-empty")
    _require(all(s >= 0 for s in states), "channel_states", "must be >= 0")
    n_states = len(states)
    trans = cfg.channel_transition
    if len(trans) != n_states:
        raise InconsistentDimensions(
            "channel_transition", f"expected {n_states} rows, got {len(trans)}"
        )
    cumrows = []
    for ri, row in enumerate(trans):
        if len(row) != n_states:
            raise InconsistentDimensions(
                f"channel_transition[{ri}]",
                f"expected {n_states} entries, got {len(row)}",
            )
        _require(
            all(p >= 0 for p in row), f"channel_transition[{ri}]", "entries must be >= 0"
        )
        total = math.fsum(row)
        _require(
            abs(total - 1.0) <= _ROW_SUM_TOL,
            f"channel_transition[{ri}]",
            f"row sums to {total!r}, must be 1 within {_ROW_SUM_TOL}",
        )
        acc, cum = 0.0, []
        for p in row:
            acc += p
            cum.append(acc)
        cum[-1] = 1.0  # guard bisect against fsum residue
        cumrows.append(tuple(cum))

    cores = _as_list(cfg.cores_per_es, cfg.num_ess, "cores_per_es", kind=int)
    for j, m in enumerate(cores):
        _require(m >= 0, f"cores_per_es[{j}]", "must be >= 0")

    if cfg.local_compute is not None:
        _require(
            cfg.local_compute.local_core_speed_hz > 0,
            "local_compute.local_core_speed_hz",
            "must be > 0",
        )
        _require(
            cfg.local_compute.local_energy_coeff >= 0,
            "local_compute.local_energy_coeff",
            "must be >= 0",
        )

    for li, link in enumerate(cfg.backhaul_links):
        _require(
            0 <= link.es_a < cfg.num_ess and 0 <= link.es_b < cfg.num_ess,
            f"backhaul_links[{li}]",
            "endpoints must be valid ES indices",
        )
        _require(
            link.es_a != link.es_b, f"backhaul_links[{li}]", "endpoints must differ"
        )
        _require(
            link.delay_slots >= 0, f"backhaul_links[{li}].delay_slots", "must be >= 0"
        )
        _require(
            link.capacity_tasks_per_slot >= 1,
            f"backhaul_links[{li}].capacity_tasks_per_slot",
            "must be >= 1",
        )

    es_pos, md_pos = place_nodes(cfg)
    if len(es_pos) != cfg.num_ess:
        raise InconsistentDimensions(
            "es_positions", f"expected {cfg.num_ess}, got {len(es_pos)}"
        )
    if len(md_pos) != cfg.num_mds:
        raise InconsistentDimensions(
            "md_positions", f"expected {cfg.num_mds}, got {len(md_pos)}"
        )
    for name, positions in (("es_positions", es_pos), ("md_positions", md_pos)):
        for k, (x, y) in enumerate(positions):
            _require(
                0.0 <= x <= cfg.area_side and 0.0 <= y <= cfg.area_side,
                f"{name}[{k}]",
                f"({x}, {y}) outside [0, {cfg.area_side}]^2",
            )

    gains = tuple(
        tuple(
            mean_gain(math.dist(md_pos[i], es_pos[j]), cfg)
            for j in range(cfg.num_ess)
        )
        for i in range(cfg.num_mds)
    )

    per_core_tasks = int(cfg.core_speed_hz * cfg.slot_duration // cfg.task_cycles)
    local_tasks = 0
    if cfg.local_compute is not None:
        local_tasks = int(
            cfg.local_compute.local_core_speed_hz * cfg.slot_duration
            // cfg.task_cycles
        )

    return ValidatedConfig(
        raw=cfg,
        es_positions=tuple(es_pos),
        md_positions=tuple(md_pos),
        rates=tuple(rates),
        gains=gains,
        cores_per_es=tuple(cores),
        per_core_tasks=per_core_tasks,
        local_tasks=local_tasks,
        channel_states=tuple(states),
        channel_cumrows=tuple(cumrows),
        positive_powers=tuple(powers[1:]),
        power_level_set=frozenset(powers),
    )


# --- JSON scenario files ----------------------------------------------------

_SCALAR_BROADCAST_KEYS = {"arrival_rates", "cores_per_es"}


def scenario_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed JSON object (strict keys).

    Unknown keys are an error rather than silently ignored, so a typoed
    parameter name cannot quietly fall back to a default.
    """
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise MalformedConfig(unknown[0], "unknown scenario key")

    kwargs = dict(data)
    if "local_compute" in kwargs and kwargs["local_compute"] is not None:
        lc = kwargs["local_compute"]
        extra = sorted(set(lc) - {"local_core_speed_hz", "local_energy_coeff"})
        if extra:
            raise MalformedConfig(f"local_compute.{extra[0]}", "unknown key")
        try:
            kwargs["local_compute"] = LocalComputeSpec(**lc)
        except TypeError as exc:
            raise MalformedConfig("local_compute", str(exc)) from None
    if "backhaul_links" in kwargs:
        links = []
        for li, item in enumerate(kwargs["backhaul_links"]):
            if isinstance(item, dict):
                extra = sorted(
                    set(item)
                    - {"es_a", "es_b", "delay_slots", "capacity_tasks_per_slot"}
                )
                if extra:
                    raise MalformedConfig(f"backhaul_links[{li}].{extra[0]}", "unknown key")
                try:
                    links.append(BackhaulLink(**item))
                except TypeError as exc:
                    raise MalformedConfig(f"backhaul_links[{li}]", str(exc)) from None
            else:
                links.append(BackhaulLink(*item))
        kwargs["backhaul_links"] = links
    for key in ("es_positions", "md_positions"):
        if kwargs.get(key) is not None:
            kwargs[key] = [tuple(p) for p in kwargs[key]]

    import dataclasses

    required = [
        f.name
        for f in fields(ScenarioConfig)
        if f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING  # type: ignore[misc]
    ]
    missing = sorted(set(required) - set(kwargs))
    if missing:
        raise MalformedConfig(missing[0], "missing required scenario key")
    return ScenarioConfig(**kwargs)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse a JSON scenario file (strict keys, see scenario_from_dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedConfig(str(path), f"not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedConfig(str(path), "top-level JSON value must be an object")
    return scenario_from_dict(data)


def scenario_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Round-trippable plain-dict form of a scenario (JSON-compatible)."""
    out: dict[str, Any] = {}
    for f in fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        if f.name == "local_compute" and value is not None:
            value = {
                "local_core_speed_hz": value.local_core_speed_hz,
                "local_energy_coeff": value.local_energy_coeff,
            }
        elif f.name == "backhaul_links":
            value = [
                {
                    "es_a": l.es_a,
                    "es_b": l.es_b,
                    "delay_slots": l.delay_slots,
                    "capacity_tasks_per_slot": l.capacity_tasks_per_slot,
                }
                for l in value
            ]
        elif f.name in ("es_positions", "md_positions") and value is not None:
            value = [list(p) for p in value]
        out[f.name] = value
    return out


_NON_STRUCTURAL_KEYS = {
    "scenario_id",
    "policy_id",
    "policy_params",
    "lambda_multiplier",
    "rng_seed",
}


def structural_digest(cfg: ScenarioConfig) -> str:
    """Hash of everything except policy, seed, id, and the rate multiplier.

    Two runs are comparable (same system, different policy / load / seed)
    exactly when their structural digests match.
    """
    data = scenario_to_dict(cfg)
    for key in _NON_STRUCTURAL_KEYS:
        data.pop(key, None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def model_digest(vcfg: ValidatedConfig, extra: dict[str, Any] | None = None) -> str:
    """Hash of the parts of a scenario that shape its decision process.

    Uses resolved positions (not the placement directive), the effective
    arrival rates, and everything entering the rate laws; excludes the
    horizon, the seed, and the policy selection. `extra` mixes in solver
    parameters so a solved policy is pinned to them too.
    """
    data = scenario_to_dict(vcfg.raw)
    for key in _NON_STRUCTURAL_KEYS | {"horizon", "es_placement", "md_placement"}:
        data.pop(key, None)
    data["es_positions"] = [list(p) for p in vcfg.es_positions]
    data["md_positions"] = [list(p) for p in vcfg.md_positions]
    data["arrival_rates"] = list(vcfg.rates)
    if extra:
        data["__solver__"] = extra
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
