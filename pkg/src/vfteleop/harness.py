"""Experiment harness: run scenario matrices and persist results.

`run_matrix` executes every (scenario x mode x seed) trial, writes one CSV
record (plus JSON sidecar) per trial, a per-trial metrics table, and
aggregate summary tables in CSV/Markdown/JSON. Reruns with the same seeds
produce byte-identical records.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .control import GainSet
from .metrics import TrialMetrics, aggregate, save_record, trial_metrics
from .operators import run_trial
from .paths import save_path
from .scenarios import Scenario, load_scenario
from .sim import SimConfig


def _trial_job(scenario: Scenario, mode: str, seed: int, gains: GainSet,
               sim_cfg: SimConfig, out_dir: str):
    record = run_trial(mode, scenario, gains, scenario.operator, sim_cfg, seed)
    path = Path(out_dir) / f"{mode}_s{seed:04d}.csv"
    save_record(record, path)
    return mode, seed, record.status, trial_metrics(record, scenario.reference)


def run_scenario(scenario: Scenario, out_dir, gains: GainSet | None = None,
                 sim_cfg: SimConfig | None = None, jobs: int = 1):
    """Run all trials of one scenario; returns (metrics list, fault count)."""
    gains = gains or GainSet()
    sim_cfg = sim_cfg or SimConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_path(scenario.path, out_dir / "path.json")
    save_path(scenario.reference, out_dir / "reference.json")

    if any(m.startswith("bi") for m in scenario.modes):
        scenario.ideal_trajectory(scenario.operator)  # build once, before forking

    tasks = [(mode, seed) for mode in scenario.modes for seed in scenario.seeds()]
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_trial_job, scenario, m, s, gains, sim_cfg, str(out_dir))
                    for m, s in tasks]
            results = [f.result() for f in futs]
    else:
        results = [_trial_job(scenario, m, s, gains, sim_cfg, str(out_dir))
                   for m, s in tasks]

    metrics = [r[3] for r in results]
    faults = sum(1 for r in results if r[2].startswith("fault"))
    write_reports(metrics, out_dir)
    return metrics, faults


def write_reports(metrics: list, out_dir) -> None:
    out_dir = Path(out_dir)
    lines = ["mode,seed,status,sal,mean_error_mm,error_var_mm2,error_std_mm,"
             "contact_losses,duration_s"]
    for t in metrics:
        lines.append(f"{t.mode},{t.seed},{t.status},{t.sal!r},{t.mean_error_mm!r},"
                     f"{t.error_var_mm2!r},{t.error_std_mm!r},{t.contact_losses},"
                     f"{t.duration_s!r}")
    (out_dir / "trials.csv").write_text("\n".join(lines) + "\n")

    report = aggregate(metrics)
    (out_dir / "summary.md").write_text(report.to_markdown() + "\n")
    (out_dir / "summary.csv").write_text(report.to_csv())
    (out_dir / "summary.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def run_matrix(scenario_files, out_dir, gains: GainSet | None = None,
               sim_cfg: SimConfig | None = None, jobs: int = 1) -> int:
    """Run all scenarios; returns a process exit status (0 = no faults)."""
    out_dir = Path(out_dir)
    total_faults = 0
    for f in scenario_files:
        scenario = load_scenario(f)
        _, faults = run_scenario(scenario, out_dir / scenario.name, gains, sim_cfg, jobs)
        total_faults += faults
        print(f"[{scenario.name}] {len(scenario.modes) * scenario.trials} trials, "
              f"{faults} faults -> {out_dir / scenario.name}")
    return 0 if total_faults == 0 else 1


def recompute_metrics(result_dir) -> int:
    """Recompute metrics from persisted records and print the tables."""
    from .metrics import load_record
    from .paths import load_path

    result_dir = Path(result_dir)
    path_file = result_dir / "reference.json"
    if not path_file.exists():
        path_file = result_dir / "path.json"
    if not path_file.exists():
        print(f"no reference.json or path.json in {result_dir}")
        return 1
    gt = load_path(path_file)
    metrics = []
    for csv in sorted(result_dir.glob("*_s*.csv")):
        record = load_record(csv)
        metrics.append(trial_metrics(record, gt))
    if not metrics:
        print(f"no trial records in {result_dir}")
        return 1
    report = aggregate(metrics)
    print(report.to_markdown())
    return 0
