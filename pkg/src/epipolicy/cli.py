"""Command line entry point: ``epipolicy {run,sweep,train-surrogate,oracle-compare}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible with
``infeasible_fallback: abort``, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import scenario as sc
from .optimizer import Infeasible, optimize
from .report import (SUMMARY_COLUMNS, plot_run, plot_sweep, write_csv, write_run_tables)
from .seir import NumericalDrift

log = logging.getLogger("epipolicy")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    tmp.replace(path)
    return path


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


# -- run ----------------------------------------------------------------------------

def run_scenario(scenario: sc.Scenario, out_dir: Path | None = None) -> dict:
    """Optimize one scenario and write its tables, figure and manifest."""
    out_dir = Path(out_dir or scenario.output_dir)
    started = _now()
    model = sc.build_model(scenario)
    state = sc.initial_state(scenario)
    result = optimize(model, state, scenario.menu, scenario.optimizer)

    files = write_run_tables(result, scenario.menu, out_dir)
    files["figure"] = plot_run(files["policy"], out_dir / "new_cases.svg", scenario.optimizer.tau,
                               scenario.menu.labels, title=scenario.name)
    manifest = {
        "scenario": scenario.name,
        "scenario_sha256": scenario.sha256,
        "tool_version": __version__,
        "seed": scenario.seed,
        "model": scenario.raw["model"],
        "tau": _finite(scenario.optimizer.tau),
        "total_reward": result.total_reward,
        "cumulative_infections": result.cumulative_cases,
        "max_new_cases": float(np.max(result.trajectory.new_cases)),
        "feasible": result.feasible,
        "n_violation_days": len(result.violations),
        "first_violation_day": result.violations[0][0] if result.violations else None,
        "fallback_decisions": [d.day + 1 for d in result.decisions if d.fallback],
        "files": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in sorted(files.items())},
        "started_at": started,
        "finished_at": _now(),
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _cmd_run(args) -> int:
    scenario = _load(args)
    m = run_scenario(scenario, args.out)
    print(f"{scenario.name}: reward {m['total_reward']:g}, infections {m['cumulative_infections']:.0f}, "
          f"max N_c {m['max_new_cases']:.0f}, feasible={m['feasible']}")
    return EXIT_OK


# -- sweep --------------------------------------------------------------------------

def _value_tag(v) -> str:
    return "inf" if isinstance(v, float) and math.isinf(v) else f"{v:g}"


def _sweep_one(raw: dict, source, out_dir: str, surrogate_path, parameter: str, value):
    # runs in a worker process: rebuild everything from plain data
    base = sc.from_mapping(raw, Path(source) if source else None)
    if surrogate_path is not None:
        base = dataclasses.replace(base, surrogate_path=Path(surrogate_path))
    scenario = sc.with_overrides(base, **{parameter: value})
    return run_scenario(scenario, Path(out_dir))


def sweep(scenario: sc.Scenario, out_dir: Path | None = None, parallel: int = 1) -> list[dict]:
    spec = scenario.section("sweep")
    parameter = spec["parameter"]
    values = [sc.parse_tau(v) if parameter == "tau" else float(v) for v in spec["values"]]
    out_dir = Path(out_dir or scenario.output_dir)
    jobs = [(dict(scenario.raw), str(scenario.source) if scenario.source else None,
             str(out_dir / f"{parameter}_{_value_tag(v)}"),
             str(scenario.surrogate_path) if scenario.surrogate_path else None, parameter, v)
            for v in values]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            manifests = list(pool.map(_sweep_one, *zip(*jobs)))
    else:
        manifests = [_sweep_one(*job) for job in jobs]
    rows = [(_value_tag(v), m["total_reward"], m["cumulative_infections"], m["max_new_cases"], int(m["feasible"]))
            for v, m in zip(values, manifests)]
    summary = write_csv(out_dir / "sweep_summary.csv", SUMMARY_COLUMNS, rows)
    plot_sweep(summary, out_dir / "reward_vs_infections.svg", parameter)
    return manifests


def _cmd_sweep(args) -> int:
    scenario = _load(args)
    if "sweep" not in scenario.raw:
        raise sc.ConfigError("sweep: section required for the sweep command")
    manifests = sweep(scenario, args.out, args.parallel)
    parameter = scenario.section("sweep")["parameter"]
    for v, m in zip(scenario.section("sweep")["values"], manifests):
        print(f"{parameter}={v}: reward {m['total_reward']:g}, infections {m['cumulative_infections']:.0f}, "
              f"feasible={m['feasible']}")
    return EXIT_OK


# -- train-surrogate ----------------------------------------------------------------

def _training_settings(raw: dict):
    from .npi import PRESETS
    from .surrogate import EnsembleDesign, FitSettings

    section = raw.get("surrogate")
    if not isinstance(section, dict):
        raise sc.ConfigError("surrogate: section required for train-surrogate")
    if "labels" in section:
        labels = [str(x) for x in section["labels"]]
    elif "menus" in section:
        labels = []
        for name in section["menus"]:
            if name not in ("school", "business"):
                raise sc.ConfigError(f"surrogate.menus: unknown menu {name!r}")
            labels += [lab for lab in PRESETS[name]().labels if lab not in labels]
    else:
        raise sc.ConfigError("surrogate: needs 'labels' or 'menus'")
    try:
        design_kw = dict(section.get("design") or {})
        if "parameter_ranges" in design_kw:
            design_kw["parameter_ranges"] = {k: tuple(v) for k, v in design_kw["parameter_ranges"].items()}
        design = EnsembleDesign(**design_kw)
        fit_kw = dict(section.get("fit") or {})
        if "hidden" in fit_kw:
            fit_kw["hidden"] = tuple(fit_kw["hidden"])
        settings = FitSettings(**fit_kw)
    except (TypeError, ValueError, KeyError) as exc:
        raise sc.ConfigError(f"surrogate: {exc}") from None
    return labels, design, settings


def _train_one(label, design, settings, seed, out_dir):
    from .epicast import EpicastLite
    from .surrogate import build_windows, design_ensembles, fit, save

    bank = design_ensembles(EpicastLite(), label, design, seed)
    data = build_windows(bank, stride=settings.stride)
    model = fit(data, settings)
    path = save(model, Path(out_dir) / f"{label}.npz")
    return label, str(path), dict(model.metrics), bank.n_runs


def train_surrogates(raw: dict, seed: int, out_dir: Path, parallel: int = 1) -> dict:
    labels, design, settings = _training_settings(raw)
    settings = dataclasses.replace(settings, seed=seed)
    started = _now()
    jobs = [(lab, design, settings, seed, str(out_dir)) for lab in labels]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*j) for j in jobs]
    report = {
        "tool_version": __version__,
        "seed": seed,
        "design": {"iterations": design.iterations, "samples_per_round": design.samples_per_round,
                   "days": design.days, "population": design.population,
                   "parameter_ranges": {k: list(v) for k, v in design.parameter_ranges.items()}},
        "fit": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(settings).items()},
        "surrogates": {lab: {"artifact": Path(p).name, "sha256": _sha256(Path(p)), "runs": n, **metrics}
                       for lab, p, metrics, n in results},
        "started_at": started,
        "finished_at": _now(),
    }
    _write_json(Path(out_dir) / "training_report.json", report)
    rows = [(lab, m["r2"], m["r2_curves"], m["n_train"], m["n_validation"], m["best_epoch"])
            for lab, _, m, _ in results]
    write_csv(Path(out_dir) / "r2_report.csv",
              ("npi", "r2_heldout", "r2_curves", "n_train", "n_validation", "best_epoch"), rows)
    return report


def _cmd_train(args) -> int:
    raw = _load_raw(args.config)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    out = Path(args.out or raw.get("output_dir") or "surrogates")
    report = train_surrogates(raw, seed, out, args.parallel)
    for lab, r in report["surrogates"].items():
        print(f"{lab}: held-out R2 {r['r2']:.4f} ({r['n_train']} train / {r['n_validation']} validation windows)")
    return EXIT_OK


# -- oracle-compare -----------------------------------------------------------------

ORACLE_COLUMNS = ("instance", "tau", "d", "horizon", "menu", "greedy_reward", "greedy_feasible",
                  "greedy_blocks", "oracle_reward", "oracle_any_feasible", "oracle_feasible_count",
                  "oracle_explored", "oracle_blocks", "dominates")


def oracle_compare(scenario: sc.Scenario, out_dir: Path | None = None) -> list[dict]:
    """Greedy vs. exhaustive search on the scenario itself or on random small instances."""
    from .oracle import DEFAULT_BUDGET, SmallInstance, compare_with_greedy, random_instance

    spec = scenario.section("oracle")
    budget = int(spec.get("budget", DEFAULT_BUDGET))
    model = sc.build_model(scenario)
    opt = scenario.optimizer
    n_random = int(spec.get("random_instances", 0))
    if n_random:
        rng = np.random.default_rng(scenario.seed)
        instances = [random_instance(rng, max_choices=int(spec.get("max_choices", 4)), d=opt.d,
                                     max_blocks=int(spec.get("max_blocks", 4))) for _ in range(n_random)]
    else:
        instances = [SmallInstance(sc.initial_state(scenario), scenario.menu, opt.tau, opt.d, opt.horizon_total)]
    records = []
    for n, inst in enumerate(instances):
        rec = compare_with_greedy(model, inst, opt.k, opt.k_s, budget)
        records.append({"instance": n, **rec})
    out_dir = Path(out_dir or scenario.output_dir)
    write_csv(out_dir / "oracle_compare.csv", ORACLE_COLUMNS,
              ([r[c] if not isinstance(r[c], bool) else int(r[c]) for c in ORACLE_COLUMNS] for r in records))
    return records


def _cmd_oracle(args) -> int:
    from .oracle import BudgetExceeded

    scenario = _load(args)
    try:
        records = oracle_compare(scenario, args.out)
    except BudgetExceeded as exc:
        raise sc.ConfigError(f"oracle.budget: {exc}") from None
    ok = sum(r["dominates"] for r in records)
    print(f"{len(records)} instance(s); oracle dominates greedy on {ok}")
    return EXIT_OK


# -- plumbing -----------------------------------------------------------------------

def _load_raw(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise sc.ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise sc.ConfigError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise sc.ConfigError("top level must be a mapping")
    if raw.get("schema_version") != sc.SCHEMA_VERSION:
        raise sc.ConfigError(f"schema_version: expected {sc.SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    return raw


def _load(args) -> sc.Scenario:
    scenario = sc.load(args.config)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    return scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epipolicy", description="Look-ahead NPI policy optimization")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", _cmd_run, "optimize one scenario"),
                            ("sweep", _cmd_sweep, "run a scenario over a list of parameter values"),
                            ("train-surrogate", _cmd_train, "train per-NPI surrogates against epicast-lite"),
                            ("oracle-compare", _cmd_oracle, "compare greedy with exhaustive search")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--parallel", type=int, default=1, help="worker processes")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except sc.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible: {exc} (day {exc.day})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalDrift, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
