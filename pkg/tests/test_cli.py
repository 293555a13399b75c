from __future__ import annotations

import json

import pytest

from edgebench.cli import (
    EXIT_MALFORMED,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_TOO_LARGE,
    SUMMARY_COLUMNS,
    main,
)

from conftest import base_scenario


GOLDEN_HEADER = (
    "scenario_id,policy,V,lambda_multiplier,seed,arrivals,completions,"
    "drops_deadline,drops_overflow,throughput,completion_ratio,"
    "mean_latency_slots,p95_latency_slots,energy_J_total,"
    "energy_J_per_completion,mean_Q,mean_K,load_imbalance"
)


def _write_scenario(path, **overrides):
    path.write_text(json.dumps(base_scenario(**overrides)), encoding="utf-8")
    return path


def _mdp_scenario(**overrides):
    data = base_scenario(
        num_mds=1,
        num_ess=1,
        es_placement="explicit",
        md_placement="explicit",
        es_positions=[[50.0, 50.0]],
        md_positions=[[50.0, 60.0]],
        noise_psd=1.0e-13,
        task_size_bits=1.0e5,
        task_cycles=1.0e8,
        cores_per_es=1,
        arrival_rates=0.6,
        channel_states=[0.5, 1.5],
        channel_transition=[[0.7, 0.3], [0.4, 0.6]],
        horizon=300,
    )
    data.update(overrides)
    return data


def test_summary_schema_is_golden():
    assert ",".join(SUMMARY_COLUMNS) == GOLDEN_HEADER


def test_run_valid_scenario(tmp_path, capsys):
    scenario = _write_scenario(tmp_path / "s.json", horizon=200)
    code = main(["run", "--scenario", str(scenario), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert lines[0] == GOLDEN_HEADER
    assert len(lines) == 2
    assert lines[1].startswith("test,backpressure,")


def test_run_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["run", "--scenario", str(missing)])
    assert code == EXIT_MISSING_FILE
    assert str(missing) in capsys.readouterr().err


def test_run_malformed_scenario(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(base_scenario(arrival_rates=-1.0)), encoding="utf-8")
    code = main(["run", "--scenario", str(bad), "--out", str(tmp_path)])
    assert code == EXIT_MALFORMED


def test_run_seed_override_changes_only_seeded_fields(tmp_path):
    scenario = _write_scenario(tmp_path / "s.json", horizon=300)
    main(["run", "--scenario", str(scenario), "--seed", "1", "--out", str(tmp_path / "a")])
    main(["run", "--scenario", str(scenario), "--seed", "2", "--out", str(tmp_path / "b")])
    row_a = (tmp_path / "a" / "summary.csv").read_text().splitlines()[1].split(",")
    row_b = (tmp_path / "b" / "summary.csv").read_text().splitlines()[1].split(",")
    cols = dict(zip(SUMMARY_COLUMNS, range(len(SUMMARY_COLUMNS))))
    for fixed in ("scenario_id", "policy", "V", "lambda_multiplier"):
        assert row_a[cols[fixed]] == row_b[cols[fixed]]
    assert row_a[cols["seed"]] == "1"
    assert row_b[cols["seed"]] == "2"
    assert row_a[cols["arrivals"]] != row_b[cols["arrivals"]]


def test_run_rerun_is_byte_identical(tmp_path):
    scenario = _write_scenario(tmp_path / "s.json", horizon=250)
    main(["run", "--scenario", str(scenario), "--trace", "--out", str(tmp_path / "a")])
    main(["run", "--scenario", str(scenario), "--trace", "--out", str(tmp_path / "b")])
    for name in ("summary.csv", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trace_csv_has_expected_fields(tmp_path):
    scenario = _write_scenario(tmp_path / "s.json", horizon=20)
    main(["run", "--scenario", str(scenario), "--trace", "--out", str(tmp_path / "t")])
    lines = (tmp_path / "t" / "trace.csv").read_text().splitlines()
    assert lines[0] == "slot,field,md,es,value"
    fields = {line.split(",")[1] for line in lines[1:]}
    assert {
        "tx_backlog",
        "compute_backlog",
        "channel_state",
        "cores",
        "power",
        "assoc",
        "uplinked",
        "completions",
        "energy",
    } <= fields


# --- sweep ---------------------------------------------------------------------


def _write_sweep(tmp_path, **kw):
    sweep = {
        "base_scenario": base_scenario(horizon=120),
        "lambda_multipliers": [0.5, 1.0, 2.0],
        "policies": [
            {"id": "backpressure", "params": {"V": 0.0}},
            {"id": "transmission", "params": {}},
        ],
        "seeds": [0, 1, 2, 3, 4],
    }
    sweep.update(kw)
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(sweep), encoding="utf-8")
    return path


def test_sweep_row_count_and_order(tmp_path):
    path = _write_sweep(tmp_path)
    code = main(["sweep", "--sweep", str(path), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == GOLDEN_HEADER + ",error"
    rows = [l.split(",") for l in lines[1:]]
    assert len(rows) == 3 * 2 * 5
    keys = [(r[1], float(r[3]), int(r[4])) for r in rows]
    grouped = sorted(keys, key=lambda k: (["backpressure", "transmission"].index(k[0]), k[1], k[2]))
    assert keys == grouped
    assert all(r[-1] == "" for r in rows)


def test_sweep_rerun_byte_identical(tmp_path):
    path = _write_sweep(tmp_path)
    main(["sweep", "--sweep", str(path), "--out", str(tmp_path / "a")])
    main(["sweep", "--sweep", str(path), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (
        tmp_path / "b" / "sweep.csv"
    ).read_bytes()


def test_sweep_records_cell_errors_without_aborting(tmp_path):
    # multiplier 4 pushes the bernoulli rate over 1: those cells must carry
    # an error while the rest of the sweep completes.
    path = _write_sweep(tmp_path, lambda_multipliers=[1.0, 4.0], seeds=[0, 1])
    code = main(["sweep", "--sweep", str(path), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()[1:]
    rows = [l.split(",") for l in lines]
    assert len(rows) == 2 * 2 * 2
    good = [r for r in rows if r[3] == "1.0"]
    bad = [r for r in rows if r[3] == "4.0"]
    assert all(r[-1] == "" for r in good)
    assert all("MalformedConfig" in r[-1] for r in bad)


def test_sweep_missing_file(tmp_path, capsys):
    code = main(["sweep", "--sweep", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert code == EXIT_MISSING_FILE


def test_sweep_rejects_empty_policy_list(tmp_path):
    path = _write_sweep(tmp_path, policies=[])
    assert main(["sweep", "--sweep", str(path), "--out", str(tmp_path)]) == EXIT_MALFORMED


def test_sweep_rejects_nonpositive_multiplier(tmp_path):
    path = _write_sweep(tmp_path, lambda_multipliers=[0.0])
    assert main(["sweep", "--sweep", str(path), "--out", str(tmp_path)]) == EXIT_MALFORMED


# --- solve ---------------------------------------------------------------------


def test_solve_and_run_solved_policy(tmp_path, capsys):
    scenario = tmp_path / "mdp.json"
    scenario.write_text(json.dumps(_mdp_scenario()), encoding="utf-8")
    policy_path = tmp_path / "policy.json"
    code = main(
        ["solve", "--scenario", str(scenario), "--q-max", "1", "--k-max", "1",
         "--out", str(policy_path)]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "residual" in out
    assert policy_path.is_file()

    run_scenario = tmp_path / "run.json"
    run_scenario.write_text(
        json.dumps(
            _mdp_scenario(
                policy_id="solved",
                policy_params={"policy_file": str(policy_path)},
            )
        ),
        encoding="utf-8",
    )
    code = main(["run", "--scenario", str(run_scenario), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert lines[1].split(",")[1] == "solved"


def test_solve_rejects_oversized_instance(tmp_path, capsys):
    scenario = tmp_path / "big.json"
    scenario.write_text(
        json.dumps(base_scenario(num_mds=40, num_ess=4, arrival_rates=0.05)),
        encoding="utf-8",
    )
    code = main(
        ["solve", "--scenario", str(scenario), "--q-max", "2", "--k-max", "2",
         "--out", str(tmp_path / "p.json")]
    )
    assert code == EXIT_TOO_LARGE
    assert "states" in capsys.readouterr().err


def test_solve_missing_scenario(tmp_path):
    code = main(
        ["solve", "--scenario", str(tmp_path / "none.json"), "--q-max", "1",
         "--k-max", "1", "--out", str(tmp_path / "p.json")]
    )
    assert code == EXIT_MISSING_FILE


def test_presets_listed(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "case-study" in capsys.readouterr().out
