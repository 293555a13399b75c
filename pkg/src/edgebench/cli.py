"""Command-line front end: run, sweep, solve, presets.

Exit codes: 0 success, 2 missing input file, 3 malformed scenario or sweep,
4 state space over its cap, 1 anything else. Sweeps can fan out over
processes when EDGEBENCH_THREADS is set above 1; cell order in the output
CSV is always (policy, multiplier, seed) regardless of scheduling.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

from .config import (
    MalformedConfig,
    ScenarioConfig,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_config,
)
from .dynamics import SlotRecord, run_trajectory
from .errors import EdgebenchError, StateSpaceTooLarge
from .metrics import RunSummary
from .policies import make_policy
from .presets import PRESETS, SweepPlan

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2
EXIT_MALFORMED = 3
EXIT_TOO_LARGE = 4

SUMMARY_COLUMNS = [
    "scenario_id",
    "policy",
    "V",
    "lambda_multiplier",
    "seed",
    "arrivals",
    "completions",
    "drops_deadline",
    "drops_overflow",
    "throughput",
    "completion_ratio",
    "mean_latency_slots",
    "p95_latency_slots",
    "energy_J_total",
    "energy_J_per_completion",
    "mean_Q",
    "mean_K",
    "load_imbalance",
]

TRACE_COLUMNS = ["slot", "field", "md", "es", "value"]


def summary_row(s: RunSummary) -> list[str]:
    return [
        s.scenario_id,
        s.policy_id,
        "" if s.v_param is None else repr(s.v_param),
        repr(float(s.lambda_multiplier)),
        str(s.seed),
        str(s.total_arrivals),
        str(s.total_completions),
        str(s.drops_deadline),
        str(s.drops_overflow),
        repr(s.throughput),
        repr(s.completion_ratio),
        repr(s.mean_latency_slots),
        repr(s.p95_latency_slots),
        repr(s.energy_total),
        repr(s.energy_per_completion),
        repr(s.mean_q_total),
        repr(s.mean_k_total),
        repr(s.load_imbalance),
    ]


def write_summary_csv(path: Path, summaries: list[RunSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow(summary_row(s))


def write_trace_csv(path: Path, records: list[SlotRecord], u: int, jj: int) -> None:
    """Long-format per-slot trace: one row per (slot, field, entity)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            d = rec.detail
            for i in range(u):
                writer.writerow([rec.slot, "tx_backlog", i, "", d.tx_backlog[i]])
            for i in range(u):
                for j in range(jj):
                    flat = i * jj + j
                    writer.writerow(
                        [rec.slot, "compute_backlog", i, j, d.compute_backlog[flat]]
                    )
                    writer.writerow([rec.slot, "channel_state", i, j, d.channel[flat]])
                    writer.writerow([rec.slot, "cores", i, j, d.cores[flat]])
            for i in range(u):
                writer.writerow([rec.slot, "power", i, "", repr(float(d.power[i]))])
                writer.writerow([rec.slot, "assoc", i, "", d.assoc[i]])
                writer.writerow([rec.slot, "uplinked", i, "", d.uplinked[i]])
                writer.writerow([rec.slot, "local_backlog", i, "", d.local_backlog[i]])
            writer.writerow([rec.slot, "completions", "", "", rec.completions])
            writer.writerow([rec.slot, "drops_deadline", "", "", rec.drops_deadline])
            writer.writerow([rec.slot, "energy", "", "", repr(rec.energy)])


def _run_one(cfg: ScenarioConfig, trace: bool) -> tuple[RunSummary, Optional[list[SlotRecord]]]:
    vcfg = validate_config(cfg)
    policy = make_policy(cfg.policy_id, cfg.policy_params)
    return run_trajectory(vcfg, policy, trace=trace)


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    if not path.is_file():
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        return EXIT_MISSING_FILE
    try:
        cfg = load_scenario(path)
        if args.seed is not None:
            cfg.rng_seed = args.seed
        summary, records = _run_one(cfg, trace=args.trace)
    except StateSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except MalformedConfig as exc:
        print(f"error: malformed scenario: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except EdgebenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out_dir / "summary.csv", [summary])
    if args.trace and records is not None:
        write_trace_csv(
            out_dir / "trace.csv", records, cfg.num_mds, cfg.num_ess
        )
    print(
        f"{summary.scenario_id}: policy={summary.policy_id} seed={summary.seed} "
        f"throughput={summary.throughput:.4f} "
        f"completion_ratio={summary.completion_ratio:.4f}"
    )
    return EXIT_OK


# --- sweeps -------------------------------------------------------------------


def _load_sweep_file(path: Path) -> SweepPlan:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedConfig(str(path), f"not valid JSON: {exc}") from None
    known = {"base_scenario", "lambda_multipliers", "policies", "seeds", "solver"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise MalformedConfig(unknown[0], "unknown sweep key")
    base_ref = data.get("base_scenario")
    if isinstance(base_ref, str):
        base_path = (path.parent / base_ref).resolve()
        if not base_path.is_file():
            raise FileNotFoundError(base_path)
        base = scenario_to_dict(load_scenario(base_path))
    elif isinstance(base_ref, dict):
        base = scenario_to_dict(scenario_from_dict(base_ref))
    else:
        raise MalformedConfig("base_scenario", "must be a path or an inline object")
    plan = SweepPlan(
        base_scenario=base,
        lambda_multipliers=[float(m) for m in data.get("lambda_multipliers", [1.0])],
        policies=list(data.get("policies", [])),
        seeds=[int(s) for s in data.get("seeds", [0])],
        solver=data.get("solver"),
    )
    _check_plan(plan)
    return plan


def _check_plan(plan: SweepPlan) -> None:
    if not plan.lambda_multipliers:
        raise MalformedConfig("lambda_multipliers", "must be non-empty")
    if any(m <= 0 for m in plan.lambda_multipliers):
        raise MalformedConfig("lambda_multipliers", "must all be > 0")
    if not plan.policies:
        raise MalformedConfig("policies", "must be non-empty")
    if not plan.seeds:
        raise MalformedConfig("seeds", "must be non-empty")
    for entry in plan.policies:
        if "id" not in entry:
            raise MalformedConfig("policies", "each entry needs an 'id'")


def _cell_config(
    plan: SweepPlan, policy: dict[str, Any], mult: float, seed: int
) -> ScenarioConfig:
    data = dict(plan.base_scenario)
    data["lambda_multiplier"] = mult
    data["rng_seed"] = seed
    data["policy_id"] = policy["id"]
    data["policy_params"] = dict(policy.get("params", {}))
    return scenario_from_dict(data)


def _run_cell(payload: tuple[dict[str, Any], dict[str, Any], float, int]) -> list[str]:
    """Sweep worker: returns a finished CSV row (plus error column)."""
    base, policy, mult, seed = payload
    try:
        cfg = scenario_from_dict(
            {**base, "lambda_multiplier": mult, "rng_seed": seed,
             "policy_id": policy["id"], "policy_params": dict(policy.get("params", {}))}
        )
        summary, _ = _run_one(cfg, trace=False)
        return summary_row(summary) + [""]
    except Exception as exc:  # recorded per-cell, never aborts the sweep
        pid = policy.get("id", "?")
        v = policy.get("params", {}).get("V")
        return [
            str(base.get("scenario_id", "scenario")),
            str(pid),
            "" if v is None else repr(float(v)),
            repr(float(mult)),
            str(seed),
        ] + [""] * (len(SUMMARY_COLUMNS) - 5) + [f"{type(exc).__name__}: {exc}"]


def _solve_for_plan(plan: SweepPlan, out_dir: Path) -> None:
    """Pre-solve 'mdp' policies that have no policy file yet.

    One solve per arrival-rate multiplier; the solved table is written next
    to the sweep output and referenced by every seed's cell. Requires
    explicit node placement so the model is seed-independent.
    """
    from .mdp import MdpSpec, build_transition_model, save_policy, value_iteration

    needs = [
        p
        for p in plan.policies
        if p["id"] in ("mdp", "solved") and "policy_file" not in p.get("params", {})
    ]
    if not needs:
        return
    if plan.solver is None:
        raise MalformedConfig("solver", "sweep uses 'mdp' but has no solver settings")
    base = plan.base_scenario
    if base.get("md_placement") != "explicit" or base.get("es_placement") != "explicit":
        raise MalformedConfig(
            "md_placement", "on-the-fly solving needs explicit node placement"
        )
    for mult in plan.lambda_multipliers:
        cfg = scenario_from_dict(
            {**base, "lambda_multiplier": mult, "policy_id": "backpressure",
             "policy_params": {}}
        )
        vcfg = validate_config(cfg)
        spec = MdpSpec(
            vcfg=vcfg,
            q_max=int(plan.solver["q_max"]),
            k_max=int(plan.solver["k_max"]),
            gamma=float(plan.solver.get("gamma", 0.95)),
            epsilon=float(plan.solver.get("epsilon", 1e-6)),
            reward_kind=str(plan.solver.get("reward_kind", "completions")),
        )
        model = build_transition_model(spec)
        solved = value_iteration(model)
        policy_path = out_dir / f"mdp_policy_{base.get('scenario_id', 'scenario')}_m{mult}.json"
        save_policy(solved, policy_path)
        for p in needs:
            params = p.setdefault("params", {})
            per_mult = params.setdefault("_policy_file_by_mult", {})
            per_mult[repr(float(mult))] = str(policy_path)


def _plan_rows(plan: SweepPlan, workers: int) -> list[list[str]]:
    cells = []
    for policy in plan.policies:
        for mult in plan.lambda_multipliers:
            for seed in plan.seeds:
                entry = dict(policy)
                params = dict(entry.get("params", {}))
                per_mult = params.pop("_policy_file_by_mult", None)
                if per_mult is not None:
                    params["policy_file"] = per_mult[repr(float(mult))]
                entry["params"] = params
                cells.append((plan.base_scenario, entry, mult, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    # Deterministic merge order: (policy, multiplier, seed), independent of
    # scheduling. Cells were generated in that order already.
    return rows


def cmd_sweep(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    try:
        if args.preset:
            if args.preset not in PRESETS:
                print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
                return EXIT_MALFORMED
            plans = PRESETS[args.preset]["plans"]()
        else:
            if not args.sweep:
                print("error: sweep needs --sweep FILE or --preset NAME", file=sys.stderr)
                return EXIT_MALFORMED
            sweep_path = Path(args.sweep)
            if not sweep_path.is_file():
                print(f"error: sweep file not found: {sweep_path}", file=sys.stderr)
                return EXIT_MISSING_FILE
            plans = [_load_sweep_file(sweep_path)]
        out_dir.mkdir(parents=True, exist_ok=True)
        workers = max(int(os.environ.get("EDGEBENCH_THREADS", "1")), 1)
        all_rows: list[list[str]] = []
        for plan in plans:
            _check_plan(plan)
            _solve_for_plan(plan, out_dir)
            all_rows.extend(_plan_rows(plan, workers))
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except StateSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except MalformedConfig as exc:
        print(f"error: malformed sweep: {exc}", file=sys.stderr)
        return EXIT_MALFORMED

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS + ["error"])
        for row in all_rows:
            writer.writerow(row)
    print(f"wrote {len(all_rows)} rows to {csv_path}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    from .mdp import MdpSpec, build_transition_model, save_policy, value_iteration

    path = Path(args.scenario)
    if not path.is_file():
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        return EXIT_MISSING_FILE
    try:
        cfg = load_scenario(path)
        if args.seed is not None:
            cfg.rng_seed = args.seed
        vcfg = validate_config(cfg)
        spec = MdpSpec(
            vcfg=vcfg,
            q_max=args.q_max,
            k_max=args.k_max,
            gamma=args.gamma,
            epsilon=args.epsilon,
            reward_kind=args.reward_kind,
        )
        model = build_transition_model(spec)
        solved = value_iteration(model)
    except StateSpaceTooLarge as exc:
        print(
            f"error: {exc}; shrink q_max/k_max or the scenario", file=sys.stderr
        )
        return EXIT_TOO_LARGE
    except MalformedConfig as exc:
        print(f"error: malformed scenario: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except EdgebenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_policy(solved, out_path)
    print(
        f"solved {model.n_states} states x {model.n_actions} actions in "
        f"{solved.iterations} iterations, residual {solved.final_residual:.3e}; "
        f"wrote {out_path}"
    )
    return EXIT_OK


def cmd_presets(_args: argparse.Namespace) -> int:
    for name in sorted(PRESETS):
        print(f"{name}: {PRESETS[name]['description']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgebench",
        description="Slotted-time edge offloading simulator and policy bench",
        epilog=(
            "exit codes: 0 ok, 2 missing file, 3 malformed input, "
            "4 state space too large, 1 other errors"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one trajectory from a scenario file")
    p_run.add_argument("--scenario", required=True, help="scenario JSON path")
    p_run.add_argument("--seed", type=int, default=None, help="override rng_seed")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument(
        "--trace", action="store_true", help="also write a per-slot trace CSV"
    )
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a multiplier x policy x seed grid")
    p_sweep.add_argument("--sweep", default=None, help="sweep JSON path")
    p_sweep.add_argument(
        "--preset", default=None, help="bundled preset name (see `presets`)"
    )
    p_sweep.add_argument("--out", default=".", help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_solve = sub.add_parser("solve", help="value-iterate a small instance")
    p_solve.add_argument("--scenario", required=True, help="scenario JSON path")
    p_solve.add_argument("--seed", type=int, default=None, help="override rng_seed")
    p_solve.add_argument("--q-max", type=int, required=True)
    p_solve.add_argument("--k-max", type=int, required=True)
    p_solve.add_argument("--gamma", type=float, default=0.95)
    p_solve.add_argument("--epsilon", type=float, default=1e-6)
    p_solve.add_argument(
        "--reward-kind", choices=["completions", "admitted"], default="completions"
    )
    p_solve.add_argument("--out", required=True, help="solved policy output file")
    p_solve.set_defaults(func=cmd_solve)

    p_presets = sub.add_parser("presets", help="list bundled presets")
    p_presets.set_defaults(func=cmd_presets)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
