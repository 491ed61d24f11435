import csv
import json
from importlib import resources

import pytest
import yaml

from epipolicy import cli
from epipolicy import scenario as sc

SEIR = {
    "schema_version": 1,
    "name": "small",
    "seed": 0,
    "model": "seir",
    "initial_state": {"population": 3.0e6, "exposed": 1},
    "menu": {"preset": "seir"},
    "optimizer": {"tau": 3000, "d": 14, "k": 21, "k_s": 35, "horizon_total": 140},
}
SCHOOL = {
    "schema_version": 1,
    "name": "school",
    "model": "epicast-lite",
    "initial_state": {"population": 1e7, "infected": 250, "recovered": 25000, "trans_prob": 0.2,
                      "asymptomatic_ratio": 0.3, "relative_infectiousness": 0.9, "compliance": 0.75},
    "menu": {"preset": "school"},
    "optimizer": {"tau": 1600, "horizon_total": 84},
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _patched(base, **sections):
    cfg = json.loads(json.dumps(base))
    for key, value in sections.items():
        if value is None:
            cfg.pop(key, None)
        elif isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


# -- run ------------------------------------------------------------------------------

def test_run_writes_all_outputs(tmp_path):
    out = tmp_path / "out"
    assert _run("run", "--config", _write(tmp_path, SEIR), "--out", out) == 0
    for name in ("policy.csv", "trajectory.csv", "net_scores.csv", "new_cases.svg", "manifest.json"):
        assert (out / name).exists(), name
    rows = list(csv.DictReader(open(out / "policy.csv")))
    assert list(rows[0]) == ["day", "npi_label", "reward", "new_cases"] and len(rows) == 140
    assert list(csv.DictReader(open(out / "trajectory.csv")))[0].keys() == {"day", "S", "E", "I", "R"}
    m = json.loads((out / "manifest.json").read_text())
    for key in ("scenario_sha256", "tool_version", "seed", "started_at", "finished_at", "total_reward", "feasible"):
        assert key in m
    assert m["total_reward"] == sum(float(r["reward"]) for r in rows)
    svg = (out / "new_cases.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg


def test_run_is_byte_reproducible(tmp_path):
    cfg = _write(tmp_path, SEIR)
    assert _run("run", "--config", cfg, "--out", tmp_path / "a") == 0
    assert _run("run", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("policy.csv", "trajectory.csv", "net_scores.csv", "new_cases.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    for m in (ma, mb):
        del m["started_at"], m["finished_at"]
    assert ma == mb


def test_run_epicast_trajectory_columns(tmp_path):
    out = tmp_path / "o"
    assert _run("run", "--config", _write(tmp_path, SCHOOL), "--out", out) == 0
    header = open(out / "trajectory.csv").readline().strip()
    assert header == "day,infected,recovered"
    assert open(out / "net_scores.csv").readline().strip().endswith("net_P2c,net_P2a")


def test_seed_override_is_recorded(tmp_path):
    out = tmp_path / "o"
    assert _run("run", "--config", _write(tmp_path, SEIR), "--out", out, "--seed", 42) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 42


# -- errors and exit codes -------------------------------------------------------------

def _without(section, key):
    def edit(cfg):
        del cfg[section][key]
        return cfg
    return edit


@pytest.mark.parametrize("edit, field", [
    (_without("optimizer", "tau"), "optimizer.tau"),
    (lambda c: _patched(c, schema_version=7), "schema_version"),
    (lambda c: _patched(c, model="agent-based"), "model"),
    (_without("initial_state", "population"), "initial_state.population"),
    (lambda c: _patched(c, menu={"preset": "none"}), "menu.preset"),
    (lambda c: _patched(c, optimizer={"tau": "lots"}), "optimizer.tau"),
    (lambda c: _patched(c, optimizer={"d": 1.5}), "optimizer.d"),
    (lambda c: _patched(c, optimizer={"k": 7}), "optimizer"),
    (lambda c: _patched(c, colour="red"), "unknown field"),
    (lambda c: _patched(SCHOOL, model="surrogate:/does/not/exist"), "model"),
    (lambda c: _patched(SCHOOL, initial_state={"compliance": 1.5}), "initial_state"),
])
def test_config_errors_exit_2_and_name_the_field(tmp_path, capsys, edit, field):
    cfg = edit(json.loads(json.dumps(SEIR)))
    assert _run("run", "--config", _write(tmp_path, cfg), "--out", tmp_path / "o") == 2
    assert field in capsys.readouterr().err


def test_missing_and_invalid_files_exit_2(tmp_path, capsys):
    assert _run("run", "--config", tmp_path / "nope.yaml") == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [unclosed")
    assert _run("run", "--config", bad) == 2


def test_infeasible_with_abort_exits_3(tmp_path, capsys):
    cfg = _patched(SEIR, initial_state={"exposed": 5e4}, optimizer={"tau": 100, "infeasible_fallback": "abort"})
    assert _run("run", "--config", _write(tmp_path, cfg), "--out", tmp_path / "o") == 3
    assert "day" in capsys.readouterr().err


def test_numerical_failure_exits_4(tmp_path, capsys):
    cfg = _patched(SEIR, model_options={"sigma": 60.0, "dt": 1.0}, initial_state={"exposed": 1e5})
    assert _run("run", "--config", _write(tmp_path, cfg), "--out", tmp_path / "o") == 4
    assert "numerical" in capsys.readouterr().err


def test_bad_flags_exit_2(tmp_path):
    assert _run("run", "--config", _write(tmp_path, SEIR), "--parallel", 0) == 2


# -- sweep ------------------------------------------------------------------------------

def test_tau_sweep_summary_and_figure(tmp_path):
    cfg = _patched(SEIR, sweep={"parameter": "tau", "values": ["inf", 6000, 2000]})
    out = tmp_path / "s"
    assert _run("sweep", "--config", _write(tmp_path, cfg), "--out", out) == 0
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert [r["value"] for r in rows] == ["inf", "6000", "2000"]
    rewards = [float(r["total_reward"]) for r in rows]
    assert rewards == sorted(rewards, reverse=True)
    assert (out / "reward_vs_infections.svg").exists()
    assert (out / "tau_6000" / "policy.csv").exists()


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = _write(tmp_path, _patched(SCHOOL, sweep={"parameter": "compliance", "values": [0.5, 0.9]}))
    assert _run("sweep", "--config", cfg, "--out", tmp_path / "a") == 0
    assert _run("sweep", "--config", cfg, "--out", tmp_path / "b", "--parallel", 2) == 0
    assert (tmp_path / "a" / "sweep_summary.csv").read_bytes() == (tmp_path / "b" / "sweep_summary.csv").read_bytes()


def test_sweep_requires_section_and_valid_parameter(tmp_path):
    assert _run("sweep", "--config", _write(tmp_path, SEIR)) == 2
    cfg = _patched(SEIR, sweep={"parameter": "compliance", "values": [0.5]})
    assert _run("sweep", "--config", _write(tmp_path, cfg)) == 2


# -- train-surrogate and oracle-compare --------------------------------------------------

TRAIN = {
    "schema_version": 1,
    "seed": 0,
    "surrogate": {"labels": ["P0", "P2a"], "design": {"samples_per_round": 8, "days": 60},
                  "fit": {"max_epochs": 3, "stride": 6}},
}


def test_train_surrogate_artifacts_and_report(tmp_path):
    cfg = _write(tmp_path, TRAIN)
    assert _run("train-surrogate", "--config", cfg, "--out", tmp_path / "a") == 0
    report = json.loads((tmp_path / "a" / "training_report.json").read_text())
    assert set(report["surrogates"]) == {"P0", "P2a"}
    for r in report["surrogates"].values():
        assert {"r2", "n_train", "n_validation", "validation_runs", "dataset_sha256"} <= set(r)
    assert (tmp_path / "a" / "r2_report.csv").exists()
    # same seed -> identical artifacts
    assert _run("train-surrogate", "--config", cfg, "--out", tmp_path / "b") == 0
    for lab in ("P0", "P2a"):
        assert (tmp_path / "a" / f"{lab}.npz").read_bytes() == (tmp_path / "b" / f"{lab}.npz").read_bytes()


def test_train_surrogate_config_errors(tmp_path):
    assert _run("train-surrogate", "--config", _write(tmp_path, {"schema_version": 1})) == 2
    bad = _patched(TRAIN, surrogate={"labels": ["P0"], "design": {"iterations": 0}})
    assert _run("train-surrogate", "--config", _write(tmp_path, bad)) == 2


def test_oracle_compare_random_instances(tmp_path):
    cfg = _patched(SEIR, oracle={"random_instances": 3}, optimizer={"horizon_total": 56})
    out = tmp_path / "o"
    assert _run("oracle-compare", "--config", _write(tmp_path, cfg), "--out", out) == 0
    rows = list(csv.DictReader(open(out / "oracle_compare.csv")))
    assert len(rows) == 3 and "dominates" in rows[0]


def test_oracle_compare_scenario_budget(tmp_path):
    cfg = _patched(SEIR, oracle={"budget": 10})
    assert _run("oracle-compare", "--config", _write(tmp_path, cfg), "--out", tmp_path / "o") == 2


# -- bundled scenarios --------------------------------------------------------------------

def _bundled():
    return sorted(p.name for p in resources.files("epipolicy").joinpath("scenarios").iterdir()
                  if p.name.endswith(".yaml"))


@pytest.mark.parametrize("name", _bundled())
def test_bundled_scenarios_parse(name):
    path = resources.files("epipolicy").joinpath("scenarios", name)
    raw = yaml.safe_load(path.read_text())
    if "surrogate" in raw and "model" not in raw:
        labels, design, settings = cli._training_settings(raw)
        assert labels
    else:
        s = sc.from_mapping(raw)
        assert s.name == name[:-5]


def test_bundled_scenarios_cover_quoted_settings():
    names = set(_bundled())
    for n in ("seir_tau_inf", "seir_tau6000", "seir_tau5000", "seir_tau3000", "seir_tau2000",
              "school_tau2000", "school_tau1600", "school_tau1250", "business_tau700"):
        assert f"{n}.yaml" in names
