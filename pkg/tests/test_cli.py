import csv
import json

import pytest

from bmi_adapt.cli import main

SUPERVISED = "[decoder]\nkind = supervised\n[experiment]\ntrials = 100\n"


def _write(path, text):
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_smoke(tmp_path):
    cfg = _write(tmp_path / "sup.ini", SUPERVISED)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    rows = _rows(tmp_path / "out" / "cohort" / "trials.csv")
    assert len(rows) == 100
    assert list(rows[0]) == ["cohort_id", "seed", "trial", "phase", "success", "duration_steps", "ce_m", "rce"]
    summary = json.loads((tmp_path / "out" / "cohort" / "summary.json").read_text())
    assert set(summary["phases"]) >= {"early", "freeze"}
    assert {"median_rce", "iqr", "hit_rate", "n"} == set(summary["phases"]["freeze"])
    assert summary["seeds"] == [0] and "version" in summary and "p_values" in summary
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["supervised_baseline"] > 0 and len(manifest["parameter_hash"]) == 64


def test_missing_kind_fails_validation(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.ini", "[experiment]\ntrials = 10\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "validation"
    assert any("decoder_kind" in p for p in record["problems"])


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 4


def test_seed_override_matches_inline(tmp_path):
    base = "[decoder]\nkind = error_based\nupdate_period = 0.8\n[experiment]\ntrials = 12\nfreeze = 10-12\n"
    a = _write(tmp_path / "a.ini", base)
    b = _write(tmp_path / "b.ini", base + "seed = 7\n")
    assert main(["run", "--config", a, "--out", str(tmp_path / "oa"), "--seed", "7"]) == 0
    assert main(["run", "--config", b, "--out", str(tmp_path / "ob")]) == 0
    for name in ("cohort/trials.csv", "cohort/summary.json", "baseline/trials.csv", "comparison.csv",
                 "manifest.json"):
        assert (tmp_path / "oa" / name).read_bytes() == (tmp_path / "ob" / name).read_bytes()


def test_trials_and_seeds_flags(tmp_path):
    cfg = _write(tmp_path / "sup.ini", SUPERVISED)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--trials", "70",
                 "--seeds", "2", "--seed", "3"]) == 0
    rows = _rows(tmp_path / "o" / "cohort" / "trials.csv")
    assert len(rows) == 140 and {r["seed"] for r in rows} == {"3", "4"}


def test_runtime_abort_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path / "div.ini", "[decoder]\nkind = static_random\n[experiment]\ntrials = 70\n"
                                       "divergence_limit = 0.5\nsupervised_baseline = 0.45\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "runtime_abort" and "0" in record["aborted"]
    assert (tmp_path / "o" / "manifest.json").exists()


def test_trajectory_dump(tmp_path):
    cfg = _write(tmp_path / "e.ini", "[decoder]\nkind = error_based\nupdate_period = 0.8\n"
                                     "[experiment]\ntrials = 6\nfreeze = 5-6\nsupervised_baseline = 0.45\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--trajectories"]) == 0
    traj = _rows(tmp_path / "o" / "trajectories.csv")
    trials = _rows(tmp_path / "o" / "cohort" / "trials.csv")
    assert len(traj) == sum(int(r["duration_steps"]) for r in trials)
    assert list(traj[0]) == ["sim_id", "trial", "step", "p1", "p2", "v1", "v2", "g1", "g2"]
    snaps = json.loads((tmp_path / "o" / "decoders.json").read_text())
    assert snaps["error_based-0"]["step_count"] > 0


def _campaign(tmp_path, variants, trials=70, seeds=2):
    text = f"[campaign]\nname = test\nseeds = {seeds}\ntrials = {trials}\n[base]\ndecoder.kind = error_based\n"
    text += "".join(f"[variant {name}]\n{body}" for name, body in variants)
    return _write(tmp_path / "camp.ini", text)


def test_kappa_sweep_cardinality(tmp_path):
    kappas = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8)
    camp = _campaign(tmp_path, [(f"kappa={k}", f"error.kappa = {k}\n") for k in kappas], trials=40)
    code = main(["sweep", "--config", camp, "--out", str(tmp_path / "s")])
    assert code in (0, 3)
    rows = _rows(tmp_path / "s" / "comparison.csv")
    for phase in {r["phase"] for r in rows}:
        assert sum(r["phase"] == phase for r in rows) == 6


def test_empty_campaign_rejected(tmp_path):
    camp = _write(tmp_path / "c.ini", "[campaign]\nname = empty\n")
    assert main(["sweep", "--config", camp, "--out", str(tmp_path / "s")]) == 2


def test_strategy_report(tmp_path, capsys):
    camp = _campaign(tmp_path, [
        ("supervised", "decoder.kind = supervised\n"),
        ("unsupervised", "decoder.kind = unsupervised_amplitude\n"),
        ("error", "decoder.kind = error_based\n"),
        ("combined", "decoder.kind = unsup_plus_error\n"),
    ])
    out = tmp_path / "s"
    assert main(["sweep", "--config", camp, "--out", str(out)]) in (0, 3)
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    for name in ("supervised", "unsupervised", "error", "combined"):
        assert f"\n{name} " in text
    first = {p: (out / p).read_bytes() for p in ("report.txt", "rce_long.csv")}
    assert main(["report", "--out", str(out)]) == 0
    assert first == {p: (out / p).read_bytes() for p in ("report.txt", "rce_long.csv")}
    long_rows = _rows(out / "rce_long.csv")
    assert list(long_rows[0]) == ["variant", "phase", "seed", "trial", "rce"]
    # every long-format value is copied from a per-trial CSV
    trial_rce = {r["rce"] for r in _rows(out / "variants" / "error" / "trials.csv")}
    assert {r["rce"] for r in long_rows if r["variant"] == "error"} == trial_rce


def test_single_variant_report(tmp_path, capsys):
    camp = _campaign(tmp_path, [("only", "error.kappa = 0.1\n")])
    out = tmp_path / "s"
    assert main(["sweep", "--config", camp, "--out", str(out)]) in (0, 3)
    rows = _rows(out / "comparison.csv")
    phases = [r["phase"] for r in rows]
    assert len(phases) == len(set(phases)) and {r["variant"] for r in rows} == {"only"}


def test_nonstationary_arms_in_sweep(tmp_path):
    camp = _campaign(tmp_path, [("drift", "arms = nonstationary\ndecoder.lambda = 0.995\n")], seeds=1)
    out = tmp_path / "s"
    assert main(["sweep", "--config", camp, "--out", str(out), "--trials", "50"]) in (0, 3)
    rows = _rows(out / "comparison.csv")
    assert {r["variant"] for r in rows} == {"drift/adaptive", "drift/frozen"}
    assert {r["phase"] for r in rows} >= {"freeze1", "freeze2"}
    assert all(r["p_vs_pair"] != "" for r in rows if r["phase"] == "freeze2")


def test_report_requires_manifest(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 4
    assert json.loads(capsys.readouterr().err)["error"] == "missing_artifact"


def test_sweep_is_deterministic(tmp_path):
    camp = _campaign(tmp_path, [("a", "error.kappa = 0.2\n")], trials=30)
    for name in ("x", "y"):
        assert main(["sweep", "--config", camp, "--out", str(tmp_path / name)]) in (0, 3)
    for rel in ("comparison.csv", "variants/a/trials.csv", "baseline/trials.csv", "manifest.json"):
        assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes()
