"""Command line entry point: ``run``, ``sweep`` and ``report``.

Exit codes: 0 success, 2 validation error, 3 runtime abort, 4 missing artifacts.
Failures also print a one-line JSON record to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, outputs
from .config import ConfigError, RunSpec, dump_config, load_campaign, load_config
from .harness import (SimulationDiverged, compare_phase, nonstationary_configs, run_cohort,
                      run_simulation)

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT, EXIT_MISSING = 0, 2, 3, 4

log = logging.getLogger("bmi_adapt")


class CliError(Exception):
    def __init__(self, code, kind, message, **detail):
        super().__init__(message)
        self.code = code
        self.record = {"error": kind, "message": message, **detail}


def _slug(name):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "variant"


def _apply_overrides(spec: RunSpec, args) -> RunSpec:
    sim = spec.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if args.trials is not None:
        sim = replace(sim, n_trials=args.trials)
    spec = replace(spec, sim=sim)
    if args.seeds is not None:
        spec = replace(spec, n_seeds=args.seeds)
    problems = spec.sim.validate()
    if args.seeds is not None and args.seeds < 1:
        problems.append("--seeds: must be at least 1")
    if problems:
        raise ConfigError(problems)
    return spec


def _baseline_sim(sim):
    return replace(sim, decoder_kind="supervised", nonstationary=False, phases=None,
                   freeze_schedule=None)


def _comparison_rows(cohorts, reference=None, pairs=None):
    """One row per (cohort, phase); p-values against the reference, the first cohort and the paired arm."""
    pairs = pairs or {}
    names = list(cohorts)
    first = cohorts[names[0]] if names else None
    rows = []
    for name in names:
        summary = cohorts[name]
        for row in summary.phase_table():
            phase = row["phase"]
            p_ref = (compare_phase(summary, reference, phase)
                     if reference is not None and phase in reference.phases() else None)
            p_first = compare_phase(summary, first, phase) if phase in first.phases() else None
            partner = pairs.get(name)
            p_pair = (compare_phase(summary, cohorts[partner], phase)
                      if partner in cohorts else None)
            rows.append((name, phase, row["n"], row["median_rce"], row["iqr"], row["hit_rate"],
                         row["median_ce"], p_ref, p_first, p_pair))
    return rows


def _write_cohort(out_dir, cohort_id, summary, config_text, extra_p=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = out_dir / "trials.csv"
    summary_path = out_dir / "summary.json"
    outputs.write_trials(trials, cohort_id, summary)
    outputs.write_json(summary_path, outputs.cohort_summary_dict(cohort_id, summary, config_text, extra_p))
    (out_dir / "config.ini").write_text(config_text)
    return [trials, summary_path, out_dir / "config.ini"]


def _write_manifest(out, kind, baseline, cohorts, files, config_texts, **extra):
    manifest = {
        "kind": kind,
        "version": __version__,
        "supervised_baseline": baseline,
        "parameter_hash": hashlib.sha256("\n".join(config_texts).encode()).hexdigest(),
        "cohorts": cohorts,
        "files": outputs.inventory(out, files),
        **extra,
    }
    outputs.write_json(out / "manifest.json", manifest)


def cmd_run(args) -> int:
    spec = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = spec.sim
    files = []
    texts = [dump_config(spec)]
    baseline = spec.baseline
    if baseline is None and sim.decoder_kind != "supervised":
        base_sim = _baseline_sim(sim)
        ref = run_cohort(base_sim, spec.seeds, jobs=args.jobs)
        baseline = ref.baseline
        base_text = dump_config(RunSpec(base_sim, spec.n_seeds))
        files += _write_cohort(out / "baseline", "baseline", ref, base_text)
        texts.append(base_text)
    summary = run_cohort(sim, spec.seeds, baseline=baseline, jobs=args.jobs)
    baseline = summary.baseline
    name = sim.decoder_kind
    files += _write_cohort(out / "cohort", name, summary, texts[0])
    comparison = out / "comparison.csv"
    outputs.write_csv(comparison, outputs.COMPARISON_COLUMNS, _comparison_rows({name: summary}))
    files.append(comparison)
    if args.trajectories:
        files += _dump_trajectories(out, sim, spec.seeds)
    cohorts = [{"variant": name, "dir": "cohort"}]
    _write_manifest(out, "run", baseline, cohorts, files, texts, aborted=summary.aborted)
    if summary.aborted:
        raise CliError(EXIT_ABORT, "runtime_abort", f"{len(summary.aborted)} run(s) aborted",
                       aborted={str(k): v for k, v in summary.aborted.items()})
    log.info("wrote %s", out)
    return EXIT_OK


def _dump_trajectories(out, sim, seeds):
    traj_path = out / "trajectories.csv"
    snapshots = {}
    with outputs.TrajectoryWriter(traj_path) as writer:
        for seed in seeds:
            writer.sim_id = f"{sim.decoder_kind}-{seed}"
            try:
                _, decoder = run_simulation(replace(sim, seed=seed), writer.sink, return_decoder=True)
                snapshots[writer.sim_id] = decoder.snapshot()
            except SimulationDiverged as exc:
                snapshots[writer.sim_id] = {"aborted": str(exc)}
    snap_path = out / "decoders.json"
    outputs.write_json(snap_path, snapshots)
    return [traj_path, snap_path]


def cmd_sweep(args) -> int:
    campaign = load_campaign(args.config)
    if args.seeds is not None:
        campaign = replace(campaign, n_seeds=args.seeds)
    if args.trials is not None:
        campaign = replace(campaign, trials=args.trials)
    jobs = args.jobs if args.jobs is not None else campaign.jobs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def seeded(spec):
        return replace(spec, sim=replace(spec.sim, seed=args.seed)) if args.seed is not None else spec

    base_spec = seeded(campaign.baseline_spec())
    files, texts = [], [dump_config(base_spec)]
    baseline = base_spec.baseline
    reference = None
    if baseline is None:
        reference = run_cohort(base_spec.sim, base_spec.seeds, jobs=jobs)
        baseline = reference.baseline
        files += _write_cohort(out / "baseline", "baseline", reference, texts[0])
    log.info("supervised baseline %.6g", baseline)

    cohorts, pairs, entries, failures = {}, {}, [], {}
    for variant in campaign.variants:
        spec = seeded(campaign.variant_spec(variant))
        if variant.arms == "nonstationary":
            adaptive, frozen = nonstationary_configs(replace(spec.sim, nonstationary=True))
            arms = {f"{variant.name}/adaptive": adaptive, f"{variant.name}/frozen": frozen}
            names = list(arms)
            pairs.update({names[0]: names[1], names[1]: names[0]})
        else:
            arms = {variant.name: spec.sim}
        for name, sim in arms.items():
            log.info("running %s", name)
            try:
                cohorts[name] = run_cohort(sim, spec.seeds, baseline=baseline, jobs=jobs)
            except Exception as exc:  # a broken variant must not stop the sweep
                log.error("variant %s failed: %s", name, exc)
                failures[name] = f"{type(exc).__name__}: {exc}"
                continue
            text = dump_config(replace(spec, sim=sim))
            texts.append(text)
            entries.append({"variant": name, "dir": f"variants/{_slug(name)}", "config": text})

    rows = _comparison_rows(cohorts, reference, pairs)
    comparison = out / "comparison.csv"
    outputs.write_csv(comparison, outputs.COMPARISON_COLUMNS, rows)
    files.append(comparison)
    for entry in entries:
        name = entry["variant"]
        extra_p = {f"{r[1]}|vs_supervised": r[7] for r in rows if r[0] == name}
        files += _write_cohort(out / entry.pop("dir"), name, cohorts[name], entry.pop("config"), extra_p)
        entry["dir"] = f"variants/{_slug(name)}"
    aborted = {name: {str(k): v for k, v in s.aborted.items()} for name, s in cohorts.items() if s.aborted}
    _write_manifest(out, "campaign", baseline, entries, files, texts, name=campaign.name,
                    failures=failures, aborted=aborted)
    if failures:
        raise CliError(EXIT_ABORT, "variant_failure", f"{len(failures)} variant(s) failed",
                       failures=failures)
    return EXIT_OK


def _fmt_cell(text, width=10):
    if text == "":
        return "-".rjust(width)
    if text.isdigit():
        return text.rjust(width)
    try:
        value = float(text)
    except ValueError:
        return text.rjust(width)
    return (f"{value:.3g}" if abs(value) < 1e-3 and value else f"{value:.3f}").rjust(width)


def render_table(rows):
    """Text table of comparison rows grouped by phase; cells are the CSV strings reformatted."""
    lines = []
    phases = []
    for row in rows:
        if row["phase"] not in phases:
            phases.append(row["phase"])
    width = max([len(r["variant"]) for r in rows] + [7])
    cols = ("median_rce", "iqr", "hit_rate", "n", "p_vs_supervised", "p_vs_first", "p_vs_pair")
    for phase in phases:
        lines.append(f"== {phase} ==")
        lines.append("variant".ljust(width) + "".join(c[:10].rjust(11) for c in cols))
        for row in rows:
            if row["phase"] == phase:
                lines.append(row["variant"].ljust(width) + "".join(" " + _fmt_cell(row[c]) for c in cols))
        lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> int:
    out = Path(args.out)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise CliError(EXIT_MISSING, "missing_artifact", f"no manifest.json in {out}")
    manifest = outputs.read_json(manifest_path)
    missing = [f for f in manifest.get("files", {}) if not (out / f).exists()]
    if missing:
        raise CliError(EXIT_MISSING, "missing_artifact", "files listed in the manifest are missing",
                       files=missing)
    rows = outputs.read_csv(out / "comparison.csv")
    header = [f"supervised baseline CE (m): {manifest['supervised_baseline']!r}"]
    text = "\n".join(header) + "\n\n" + render_table(rows)
    long_rows = []
    for entry in manifest["cohorts"]:
        for rec in outputs.read_csv(out / entry["dir"] / "trials.csv"):
            long_rows.append((entry["variant"], rec["phase"], rec["seed"], rec["trial"], rec["rce"]))
    # cells are copied verbatim from the per-trial CSVs
    with open(out / "rce_long.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(outputs.LONG_COLUMNS)
        writer.writerows(long_rows)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bmi-adapt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run config (run) or campaign file (sweep)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="first seed")
        p.add_argument("--seeds", type=int, help="number of seeds")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        p.add_argument("--trials", type=int, help="trials per simulation")

    p_run = sub.add_parser("run", help="run one configuration over one or more seeds")
    common(p_run)
    p_run.add_argument("--trajectories", action="store_true",
                       help="also dump every screen state and the final decoders")
    p_run.set_defaults(func=cmd_run)
    p_sweep = sub.add_parser("sweep", help="run every variant of a campaign file")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    p_report = sub.add_parser("report", help="print tables and write long-format CSV")
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def _fail(code, record):
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is None and args.command == "run":
        args.jobs = 1
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, {"error": "validation", "problems": exc.problems})
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, {"error": "missing_artifact", "message": str(exc)})
    except CliError as exc:
        return _fail(exc.code, exc.record)


if __name__ == "__main__":
    sys.exit(main())
