import json
from pathlib import Path

import pytest

from bidcontrol import BidLog, Opportunity, write_log
from bidcontrol.cli import main

from conftest import small_synth


def write_synth_config(path: Path, n=2000, seed=7):
    cfg = {"synthetic": small_synth(seed=seed, n=n).to_dict()}
    path.write_text(json.dumps(cfg))
    return path


def write_batch_config(path: Path, n_campaigns=2, n=3000, seed=55):
    cfg = {
        "n_campaigns": n_campaigns, "base_seed": seed,
        "synthetic": small_synth(seed=seed, n=n).to_dict(),
        "derivation": {"cpc_cap_fraction_range": [0.75, 0.85],
                       "budget_click_ratio_range": [0.85, 1.0],
                       "wp_base_jitter": 0.1,
                       "fixed_cpc_caps": {"0": 200.0}},
    }
    path.write_text(json.dumps(cfg))
    return path


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def two_opp_files(tmp_path: Path) -> Path:
    log = BidLog.from_opportunities([
        Opportunity(0, 0, 1.0, 0.5, 0.2),
        Opportunity(1, 0, 2.0, 0.1, 0.1),
    ])
    path = tmp_path / "two.csv"
    write_log(log, path)
    return path


@pytest.fixture(scope="module")
def mini_batch(tmp_path_factory):
    """gen + solve over a small two-campaign batch, shared by CLI tests."""
    root = tmp_path_factory.mktemp("mini_batch")
    cfg = write_batch_config(root / "batch.json")
    out = root / "runs"
    assert main(["gen", "--batch-config", str(cfg), "--out", str(out)]) == 0
    assert main(["solve", "--batch", str(out), "--out", str(out)]) == 0
    return out


def test_gen_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "x")]) == 1
    assert "requires --config" in capsys.readouterr().err


def test_gen_deterministic(tmp_path):
    cfg = write_synth_config(tmp_path / "synth.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", str(cfg), "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen", "--config", str(cfg), "--seed", "7", "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)
    assert (a / "train.csv").exists() and (a / "test.csv").exists()
    assert (a / "manifest.json").exists()


def test_gen_seed_changes_output(tmp_path):
    cfg = write_synth_config(tmp_path / "synth.json")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["gen", "--config", str(cfg), "--seed", "7", "--out", str(a)])
    main(["gen", "--config", str(cfg), "--seed", "8", "--out", str(b)])
    assert (a / "train.csv").read_bytes() != (b / "train.csv").read_bytes()


def test_gen_drift_flag(tmp_path):
    cfg = write_synth_config(tmp_path / "synth.json")
    out = tmp_path / "d"
    assert main(["gen", "--config", str(cfg), "--drift-wp-factor", "1.5",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["synthetic"]["drift"]["wp_factor"] == 1.5


def test_solve_two_opportunity_fixture(tmp_path, capsys):
    train = two_opp_files(tmp_path)
    out = tmp_path / "solve"
    assert main(["solve", "--train", str(train), "--budget", "1.0",
                 "--cpc-cap", "4.0", "--out", str(out)]) == 0
    payload = json.loads((out / "dual.json").read_text())
    assert payload["train_dual"]["dual_objective"] == pytest.approx(0.1, abs=1e-7)
    printed = capsys.readouterr().out
    assert "p=" in printed and "dual_objective=" in printed


def test_solve_tol_flag_stability(tmp_path):
    train = two_opp_files(tmp_path)
    outs = []
    for i, tol in enumerate(("1e-6", "5e-7")):
        out = tmp_path / f"s{i}"
        assert main(["solve", "--train", str(train), "--budget", "1.0",
                     "--cpc-cap", "4.0", "--tol", tol, "--out", str(out)]) == 0
        outs.append(json.loads((out / "dual.json").read_text()))
    assert outs[0]["train_dual"]["dual_objective"] == pytest.approx(
        outs[1]["train_dual"]["dual_objective"], abs=1e-8)


def test_solve_missing_args_usage(tmp_path):
    assert main(["solve", "--out", str(tmp_path / "x")]) == 1


def test_solve_unreadable_log(tmp_path):
    assert main(["solve", "--train", str(tmp_path / "nope.csv"), "--budget", "1",
                 "--cpc-cap", "4", "--out", str(tmp_path / "o")]) == 2


def simulate_args(batch: Path, out: Path, strategy: str, extra=()):
    cdir = batch / "campaigns" / "c00"
    spec = json.loads((cdir / "spec.json").read_text())["spec"]
    return ["simulate", "--train", str(cdir / "train.csv"),
            "--test", str(cdir / "test.csv"),
            "--budget", repr(spec["budget"]), "--cpc-cap", repr(spec["cpc_cap"]),
            "--dual", str(cdir / "dual.json"),
            "--strategy", strategy, "--out", str(out), *extra]


def write_tuned(path: Path) -> Path:
    tuned = {
        "i-pid": {"gains_p": [0, 0, 0], "gains_q": [0, 0.3, 0], "alpha": 1.0, "beta": 1.0},
        "m-pid": {"gains_p": [0, 0, 0], "gains_q": [0, 0.3, 0], "alpha": 0.75, "beta": 0.5},
        "cost-min": {"gains_b0": [0, 0.03, 0]},
        "fb-control": {"gains_b0": [0, 0.01, 0]},
        "fb-control-m": {"gains_b0": [0, 0, 0], "gains_cap": [0, 0.1, 0]},
    }
    path.write_text(json.dumps(tuned))
    return path


def test_simulate_ipid_trace(mini_batch, tmp_path):
    tuned = write_tuned(tmp_path / "tuned.json")
    out = tmp_path / "sim"
    rc = main(simulate_args(mini_batch, out, "i-pid", ("--tuned", str(tuned))))
    assert rc == 0
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 24
    rec = json.loads(lines[0])
    assert {"t", "cost", "cost_ref", "cum_cost", "cpc", "cum_cpc", "p", "q"} <= set(rec)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["strategy"] == "i-pid"


def test_simulate_mpid_identity_weights_match_ipid(mini_batch, tmp_path):
    tuned = write_tuned(tmp_path / "tuned.json")
    out_i = tmp_path / "sim_i"
    out_m = tmp_path / "sim_m"
    assert main(simulate_args(mini_batch, out_i, "i-pid", ("--tuned", str(tuned)))) == 0
    assert main(simulate_args(mini_batch, out_m, "m-pid",
                              ("--tuned", str(tuned), "--alpha", "1", "--beta", "1"))) == 0
    assert (out_i / "trace.jsonl").read_bytes() == (out_m / "trace.jsonl").read_bytes()


def test_simulate_unknown_strategy_usage(mini_batch, tmp_path):
    rc = main(simulate_args(mini_batch, tmp_path / "x", "galaxy-brain"))
    assert rc == 1


def test_simulate_missing_tuned_config(mini_batch, tmp_path):
    rc = main(simulate_args(mini_batch, tmp_path / "x", "i-pid"))
    assert rc == 2


def test_tune_single_strategy(mini_batch, tmp_path):
    out = tmp_path / "tune"
    rc = main(["tune", "--batch", str(mini_batch), "--strategies", "fb-control",
               "--out", str(out)])
    assert rc == 0
    tuned = json.loads((out / "tuned.json").read_text())
    assert "fb-control" in tuned and "gains_b0" in tuned["fb-control"]


def test_tune_per_campaign_shape(mini_batch, tmp_path):
    out = tmp_path / "tune_pc"
    rc = main(["tune", "--batch", str(mini_batch), "--per-campaign",
               "--strategies", "fb-control", "--out", str(out)])
    assert rc == 0
    tuned = json.loads((out / "tuned.json").read_text())
    assert set(tuned) == {"per_campaign"}
    assert set(tuned["per_campaign"]) == {"c00", "c01"}
    for entry in tuned["per_campaign"].values():
        assert "gains_b0" in entry["fb-control"]


def test_evaluate_with_per_campaign_tuned(mini_batch, tmp_path):
    pooled = json.loads(write_tuned(tmp_path / "pooled.json").read_text())
    per_campaign = {"per_campaign": {"c00": pooled, "c01": pooled}}
    tuned_path = tmp_path / "tuned_pc.json"
    tuned_path.write_text(json.dumps(per_campaign))
    out = tmp_path / "report_pc"
    rc = main(["evaluate", "--batch", str(mini_batch), "--tuned", str(tuned_path),
               "--out", str(out)])
    assert rc == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert len(lines) == 1 + 6


def test_evaluate_per_campaign_missing_entry(mini_batch, tmp_path):
    tuned_path = tmp_path / "partial.json"
    tuned_path.write_text(json.dumps({"per_campaign": {"c00": {}}}))
    rc = main(["evaluate", "--batch", str(mini_batch), "--tuned", str(tuned_path),
               "--out", str(tmp_path / "r")])
    assert rc == 2


def test_solve_workers_match_sequential(tmp_path):
    cfg = write_batch_config(tmp_path / "b.json", n_campaigns=2, n=1500)
    seq, par = tmp_path / "seq", tmp_path / "par"
    for out in (seq, par):
        assert main(["gen", "--batch-config", str(cfg), "--out", str(out)]) == 0
    assert main(["solve", "--batch", str(seq), "--out", str(seq / "solve")]) == 0
    assert main(["solve", "--batch", str(par), "--out", str(par / "solve"),
                 "--workers", "2"]) == 0
    for cid in ("c00", "c01"):
        a = (seq / "campaigns" / cid / "dual.json").read_bytes()
        b = (par / "campaigns" / cid / "dual.json").read_bytes()
        assert a == b


def test_tune_requires_solved_batch(tmp_path):
    cfg = write_batch_config(tmp_path / "b.json", n_campaigns=1, n=1000)
    out = tmp_path / "runs"
    assert main(["gen", "--batch-config", str(cfg), "--out", str(out)]) == 0
    rc = main(["tune", "--batch", str(out), "--out", str(tmp_path / "t")])
    assert rc == 2  # dual.json missing until solve runs


def test_evaluate_reports_all_strategies(mini_batch, tmp_path):
    tuned = write_tuned(tmp_path / "tuned.json")
    out = tmp_path / "report"
    rc = main(["evaluate", "--batch", str(mini_batch), "--tuned", str(tuned),
               "--out", str(out)])
    assert rc == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "strategy,cpc_ratio,value_ratio"
    assert len(lines) == 1 + 6
    results = [json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()]
    assert len(results) == 6 * 2  # six strategies, two campaigns


def test_evaluate_missing_tuned(mini_batch, tmp_path):
    rc = main(["evaluate", "--batch", str(mini_batch), "--out", str(tmp_path / "r")])
    assert rc == 2


def test_rerun_reproduces_gen(tmp_path):
    cfg = write_synth_config(tmp_path / "synth.json")
    first = tmp_path / "first"
    assert main(["gen", "--config", str(cfg), "--out", str(first)]) == 0
    again = tmp_path / "again"
    assert main(["rerun", "--manifest", str(first / "manifest.json"),
                 "--out", str(again)]) == 0
    assert tree_bytes(first) == tree_bytes(again)


def test_rerun_reproduces_solve(mini_batch, tmp_path):
    train = mini_batch / "campaigns" / "c00" / "train.csv"
    spec = json.loads((mini_batch / "campaigns" / "c00" / "spec.json").read_text())["spec"]
    first = tmp_path / "first"
    assert main(["solve", "--train", str(train), "--budget", repr(spec["budget"]),
                 "--cpc-cap", repr(spec["cpc_cap"]), "--out", str(first)]) == 0
    again = tmp_path / "again"
    assert main(["rerun", "--manifest", str(first / "manifest.json"),
                 "--out", str(again)]) == 0
    assert tree_bytes(first) == tree_bytes(again)
