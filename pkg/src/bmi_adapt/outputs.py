"""CSV / JSON writers and readers for run and campaign output directories.

Floats are written with ``repr`` so identical runs give byte-identical files;
JSON is written with sorted keys and NaN mapped to null.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .stats import rank_sum_test

TRIAL_COLUMNS = ("cohort_id", "seed", "trial", "phase", "success", "duration_steps", "ce_m", "rce")
TRAJECTORY_COLUMNS = ("sim_id", "trial", "step", "p1", "p2", "v1", "v2", "g1", "g2")
COMPARISON_COLUMNS = ("variant", "phase", "n", "median_rce", "iqr", "hit_rate", "median_ce",
                      "p_vs_supervised", "p_vs_first", "p_vs_pair")
LONG_COLUMNS = ("variant", "phase", "seed", "trial", "rce")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def trial_rows(cohort_id, summary):
    """Rows of the per-trial CSV; trials never reached by an aborted run are omitted."""
    rce = summary.rce
    for i, seed in enumerate(summary.seeds):
        for j, phase in enumerate(summary.phase_labels):
            if np.isnan(summary.ce[i, j]):
                continue
            yield (cohort_id, int(seed), j + 1, phase, bool(summary.success[i, j]),
                   int(summary.duration[i, j]), summary.ce[i, j], rce[i, j])


def write_trials(path, cohort_id, summary):
    write_csv(path, TRIAL_COLUMNS, trial_rows(cohort_id, summary))


def phase_p_values(summary):
    """Rank-sum p-values between every pair of phases of one cohort."""
    out = {}
    for a, b in combinations(summary.phases(), 2):
        xs, ys = summary.phase_values(a), summary.phase_values(b)
        out[f"{a}|{b}"] = rank_sum_test(xs, ys)[1] if xs.size and ys.size else float("nan")
    return out


def cohort_summary_dict(cohort_id, summary, config_text, extra_p=None):
    phases = {
        row["phase"]: {k: row[k] for k in ("median_rce", "iqr", "hit_rate", "n")}
        for row in summary.phase_table()
    }
    p_values = phase_p_values(summary)
    if extra_p:
        p_values.update(extra_p)
    return {
        "cohort_id": cohort_id,
        "config": config_text,
        "seeds": [int(s) for s in summary.seeds],
        "version": __version__,
        "supervised_baseline": summary.baseline,
        "phases": phases,
        "p_values": p_values,
        "aborted": {str(k): v for k, v in summary.aborted.items()},
    }


class TrajectoryWriter:
    """Streams post-step screen states of one or more simulations to CSV."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(TRAJECTORY_COLUMNS)
        self.sim_id = ""

    def sink(self, trial, step, x):
        self._writer.writerow([self.sim_id, trial, step, *(fmt(v) for v in x)])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def inventory(root, paths):
    root = Path(root)
    return {str(Path(p).relative_to(root)): file_sha256(p) for p in sorted(paths)}
