"""Command-line entry point: generate data, solve duals, simulate, tune,
evaluate, and re-run any command from its manifest.

Every run writes a ``manifest.json`` holding the fully resolved config, so
the same outputs can be reproduced byte-for-byte with ``rerun``. Exit
codes: 0 success, 1 usage, 2 data/validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .auction import trace_records
from .control import build_cost_reference
from .data import (BidLogError, CampaignSpec, SyntheticConfig, generate_log,
                   load_log, write_log)
from .experiment import (PER_CAMPAIGN_KEY, STRATEGIES, TUNABLE_STRATEGIES,
                         Campaign, CampaignContext, build_batch,
                         evaluate_batch, grid_search,
                         grid_search_per_campaign, prepare_campaign,
                         resolve_tuned_entry, simulate_strategy,
                         result_from_trace)
from .lp import DualSolution, SolverError, solve_dual

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

MANIFEST_SCHEMA = 1
TRACE_SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sanitize(obj):
    """Make config/result structures JSON-serializable with plain floats."""
    if isinstance(obj, Mapping):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_sanitize(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise BidLogError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _out_rel(path: Path, out_dir: Path) -> str:
    try:
        return str(path.relative_to(out_dir))
    except ValueError:
        return str(path)


def write_manifest(out_dir: Path, command: str, config: dict,
                   outputs: list[str]) -> None:
    dump_json({
        "command": command,
        "config": config,
        "outputs": sorted(outputs),
        "versions": {"bidcontrol": __version__,
                     "manifest_schema": MANIFEST_SCHEMA,
                     "trace_schema": TRACE_SCHEMA},
    }, out_dir / "manifest.json")


# --- gen -------------------------------------------------------------------

def do_gen(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = cfg.get("format", "csv")
    outputs = []
    if "batch" in cfg:
        campaigns = build_batch(cfg["batch"])
        for camp in campaigns:
            cdir = out_dir / "campaigns" / camp.campaign_id
            for day in ("train", "test"):
                log = generate_log(camp.synth, day)
                path = cdir / f"{day}.{fmt}"
                write_log(log, path)
                outputs.append(_out_rel(path, out_dir))
            spec_path = cdir / "spec.json"
            dump_json({"spec": camp.spec.to_dict(),
                       "synthetic": camp.synth.to_dict()}, spec_path)
            outputs.append(_out_rel(spec_path, out_dir))
        index = out_dir / "batch.json"
        dump_json({"campaign_ids": [c.campaign_id for c in campaigns]}, index)
        outputs.append("batch.json")
    else:
        synth = SyntheticConfig.from_dict(cfg["synthetic"])
        for day in ("train", "test"):
            log = generate_log(synth, day)
            path = out_dir / f"{day}.{fmt}"
            write_log(log, path)
            outputs.append(_out_rel(path, out_dir))
    write_manifest(out_dir, "gen", cfg, outputs)


def cmd_gen(args) -> int:
    if args.config is None and args.batch_config is None:
        raise UsageError("gen requires --config or --batch-config")
    if args.batch_config is not None:
        cfg = {"batch": load_config_file(args.batch_config), "format": args.format}
        if args.seed is not None:
            cfg["batch"]["base_seed"] = args.seed
    else:
        raw = load_config_file(args.config)
        synth = raw.get("synthetic", raw)
        if args.seed is not None:
            synth = dict(synth, rng_seed=args.seed)
        if args.drift_wp_factor is not None:
            drift = dict(synth.get("drift") or {})
            drift["wp_factor"] = args.drift_wp_factor
            synth = dict(synth, drift=drift)
        # round-trip through the dataclass to validate and make every field explicit
        cfg = {"synthetic": SyntheticConfig.from_dict(synth).to_dict(),
               "format": args.format}
    do_gen(cfg, Path(args.out))
    return 0


# --- solve -----------------------------------------------------------------

def _spec_from_cfg(cfg: dict, campaign_id: str = "campaign") -> CampaignSpec:
    return CampaignSpec(campaign_id=cfg.get("campaign_id", campaign_id),
                        budget=float(cfg["budget"]), cpc_cap=float(cfg["cpc_cap"]),
                        step_seconds=int(cfg.get("step_seconds", 3600)),
                        num_steps=int(cfg.get("num_steps", 24)))


def _solve_campaign_files(train_path: Path, test_path: Path | None,
                          spec: CampaignSpec, tol: float | None) -> dict:
    train = load_log(train_path, day_label="train")
    dual = solve_dual(train, spec, tol)
    refs = build_cost_reference(train, spec, dual)
    payload = {"train_dual": dual.to_dict(),
               "cost_ref": refs.cost_ref,
               "cpc_ref": refs.cpc_ref,
               "spec": spec.to_dict()}
    if test_path is not None:
        test = load_log(test_path, day_label="test")
        payload["test_hindsight"] = solve_dual(test, spec, tol).dual_objective
    return payload


def _solve_batch_task(args: tuple) -> tuple:
    cdir_str, fmt, tol = args
    cdir = Path(cdir_str)
    spec_info = load_config_file(cdir / "spec.json")
    spec = CampaignSpec.from_dict(spec_info["spec"])
    payload = _solve_campaign_files(cdir / f"train.{fmt}",
                                    cdir / f"test.{fmt}", spec, tol)
    return cdir_str, payload


def do_solve(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    tol = cfg.get("tol")
    outputs = []
    if "batch_dir" in cfg:
        batch_dir = Path(cfg["batch_dir"])
        fmt = cfg.get("format", "csv")
        workers = int(cfg.get("workers", 1))
        tasks = [(str(cdir), fmt, tol)
                 for cdir in sorted((batch_dir / "campaigns").iterdir())]
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                solved = list(pool.map(_solve_batch_task, tasks))
        else:
            solved = [_solve_batch_task(t) for t in tasks]
        # results arrive in task order, so output bytes do not depend on workers
        for cdir_str, payload in solved:
            cdir = Path(cdir_str)
            dump_json(payload, cdir / "dual.json")
            outputs.append(_out_rel(cdir / "dual.json", out_dir))
            logger.info("%s: p=%.6g q=%.6g R*=%.6g", payload["spec"]["campaign_id"],
                        payload["train_dual"]["p"], payload["train_dual"]["q"],
                        payload["test_hindsight"])
    else:
        spec = _spec_from_cfg(cfg)
        payload = _solve_campaign_files(Path(cfg["train"]),
                                        Path(cfg["test"]) if cfg.get("test") else None,
                                        spec, tol)
        dump_json(payload, out_dir / "dual.json")
        outputs.append("dual.json")
        d = payload["train_dual"]
        print(f"p={d['p']!r} q={d['q']!r} dual_objective={d['dual_objective']!r}")
    write_manifest(out_dir, "solve", cfg, outputs)


def cmd_solve(args) -> int:
    if args.batch is not None:
        cfg = {"batch_dir": args.batch, "format": args.format,
               "workers": args.workers}
    else:
        if args.train is None or args.budget is None or args.cpc_cap is None:
            raise UsageError("solve requires --batch, or --train with --budget and --cpc-cap")
        cfg = {"train": args.train, "test": args.test, "budget": args.budget,
               "cpc_cap": args.cpc_cap, "step_seconds": args.step_seconds,
               "num_steps": args.num_steps}
    if args.tol is not None:
        cfg["tol"] = args.tol
    do_solve(cfg, Path(args.out))
    return 0


# --- simulate ---------------------------------------------------------------

def _context_from_files(train_path: Path, test_path: Path, spec: CampaignSpec,
                        dual_payload: dict | None, tol: float | None) -> CampaignContext:
    train = load_log(train_path, day_label="train")
    test = load_log(test_path, day_label="test")
    train_dual = test_hindsight = None
    if dual_payload is not None:
        train_dual = DualSolution.from_dict(dual_payload["train_dual"])
        test_hindsight = dual_payload.get("test_hindsight")
    return prepare_campaign(Campaign(synth=None, spec=spec), tol=tol, train=train,
                            test=test, train_dual=train_dual,
                            test_hindsight=test_hindsight)


def do_simulate(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    strategy = cfg["strategy"]
    if strategy not in STRATEGIES:
        raise BidLogError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    spec = _spec_from_cfg(cfg)
    dual_payload = load_config_file(cfg["dual"]) if cfg.get("dual") else None
    ctx = _context_from_files(Path(cfg["train"]), Path(cfg["test"]), spec,
                              dual_payload, cfg.get("tol"))

    entry = None
    if strategy != "optimal-static":
        tuned = load_config_file(cfg["tuned"]) if cfg.get("tuned") else {}
        if strategy not in tuned and strategy in TUNABLE_STRATEGIES:
            raise BidLogError(
                f"missing tuned config for controller strategy {strategy!r}; "
                f"pass --tuned (see the tune command)")
        entry = dict(tuned[strategy])
        if cfg.get("alpha") is not None:
            entry["alpha"] = cfg["alpha"]
        if cfg.get("beta") is not None:
            entry["beta"] = cfg["beta"]

    trace, controller = simulate_strategy(ctx, strategy, entry)
    telemetry = controller.telemetry if controller is not None else None
    records = trace_records(trace, cost_ref=ctx.refs.cost_ref, telemetry=telemetry)
    trace_path = out_dir / "trace.jsonl"
    with open(trace_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_sanitize(rec), sort_keys=True) + "\n")

    result = result_from_trace(ctx, strategy, trace, ctx.test_hindsight)
    dump_json(result.to_dict(), out_dir / "summary.json")
    write_manifest(out_dir, "simulate", cfg, ["trace.jsonl", "summary.json"])


def cmd_simulate(args) -> int:
    if args.train is None or args.test is None:
        raise UsageError("simulate requires --train and --test logs")
    if args.budget is None or args.cpc_cap is None:
        raise UsageError("simulate requires --budget and --cpc-cap")
    cfg = {"train": args.train, "test": args.test, "budget": args.budget,
           "cpc_cap": args.cpc_cap, "step_seconds": args.step_seconds,
           "num_steps": args.num_steps, "strategy": args.strategy,
           "tuned": args.tuned, "dual": args.dual,
           "alpha": args.alpha, "beta": args.beta}
    if args.tol is not None:
        cfg["tol"] = args.tol
    do_simulate(cfg, Path(args.out))
    return 0


# --- tune / evaluate ---------------------------------------------------------

def _load_batch_contexts(batch_dir: Path, fmt: str, tol: float | None) -> list[CampaignContext]:
    campaigns_dir = batch_dir / "campaigns"
    if not campaigns_dir.is_dir():
        raise BidLogError(f"no campaign batch at {batch_dir} (run gen first)")
    contexts = []
    for cdir in sorted(campaigns_dir.iterdir()):
        spec_info = load_config_file(cdir / "spec.json")
        spec = CampaignSpec.from_dict(spec_info["spec"])
        dual_path = cdir / "dual.json"
        if not dual_path.exists():
            raise BidLogError(f"missing {dual_path} (run solve before tune/evaluate)")
        payload = load_config_file(dual_path)
        train = load_log(cdir / f"train.{fmt}", day_label="train")
        test = load_log(cdir / f"test.{fmt}", day_label="test")
        ctx = prepare_campaign(
            Campaign(synth=None, spec=spec), tol=tol, train=train, test=test,
            train_dual=DualSolution.from_dict(payload["train_dual"]),
            test_hindsight=payload["test_hindsight"])
        contexts.append(ctx)
    return contexts


def do_tune(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    contexts = _load_batch_contexts(Path(cfg["batch_dir"]), cfg.get("format", "csv"),
                                    cfg.get("tol"))
    search = grid_search_per_campaign if cfg.get("per_campaign") else grid_search
    kwargs = {}
    if cfg.get("stress_factors"):
        kwargs["stress_factors"] = tuple(cfg["stress_factors"])
    tuned = search(contexts, strategies=cfg.get("strategies"), **kwargs)
    dump_json(tuned, out_dir / "tuned.json")
    write_manifest(out_dir, "tune", cfg, ["tuned.json"])


def cmd_tune(args) -> int:
    cfg = {"batch_dir": args.batch, "format": args.format}
    if args.per_campaign:
        cfg["per_campaign"] = True
    if args.strategies:
        cfg["strategies"] = args.strategies
    if args.stress:
        cfg["stress_factors"] = args.stress
    if args.tol is not None:
        cfg["tol"] = args.tol
    do_tune(cfg, Path(args.out))
    return 0


def do_evaluate(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    contexts = _load_batch_contexts(Path(cfg["batch_dir"]), cfg.get("format", "csv"),
                                    cfg.get("tol"))
    tuned = load_config_file(cfg["tuned"]) if cfg.get("tuned") else {}
    strategies = cfg.get("strategies") or list(STRATEGIES)
    need = [s for s in strategies if s in TUNABLE_STRATEGIES]
    if PER_CAMPAIGN_KEY in tuned:
        missing = [f"{ctx.campaign_id}:{s}" for ctx in contexts for s in need
                   if resolve_tuned_entry(tuned, s, ctx.campaign_id) is None]
    else:
        missing = [s for s in need if s not in tuned]
    if missing:
        raise BidLogError(f"missing tuned config for strategies {missing}; run tune")
    report = evaluate_batch(contexts, strategies, tuned)

    report_path = out_dir / "report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "cpc_ratio", "value_ratio"])
        for row in report.summary_rows():
            vr = row["value_ratio"]
            writer.writerow([row["strategy"], repr(row["cpc_ratio"]),
                             "" if vr is None else repr(vr)])
    results_path = out_dir / "results.jsonl"
    with open(results_path, "w") as fh:
        for res in report.results:
            fh.write(json.dumps(_sanitize(res.to_dict()), sort_keys=True) + "\n")
    for row in report.summary_rows():
        print(f"{row['strategy']}: cpc_ratio={row['cpc_ratio']:.3f} "
              f"value_ratio={row['value_ratio'] if row['value_ratio'] is not None else 'n/a'}")
    write_manifest(out_dir, "evaluate", cfg, ["report.csv", "results.jsonl"])


def cmd_evaluate(args) -> int:
    cfg = {"batch_dir": args.batch, "format": args.format, "tuned": args.tuned}
    if args.strategies:
        cfg["strategies"] = args.strategies
    if args.tol is not None:
        cfg["tol"] = args.tol
    do_evaluate(cfg, Path(args.out))
    return 0


# --- rerun -------------------------------------------------------------------

_DISPATCH = {"gen": do_gen, "solve": do_solve, "simulate": do_simulate,
             "tune": do_tune, "evaluate": do_evaluate}


def cmd_rerun(args) -> int:
    manifest = load_config_file(args.manifest)
    command = manifest.get("command")
    if command not in _DISPATCH:
        raise BidLogError(f"manifest has unknown command {command!r}")
    out = Path(args.out) if args.out else Path(args.manifest).parent
    _DISPATCH[command](manifest["config"], out)
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="bidcontrol",
                     description="Bid optimization and feedback-control simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic train/test bid logs")
    p.add_argument("--config", help="synthetic config file (TOML/JSON)")
    p.add_argument("--batch-config", help="campaign batch config file")
    p.add_argument("--seed", type=int, help="override the config's RNG seed")
    p.add_argument("--drift-wp-factor", type=float,
                   help="override the test-day winning-price factor")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve the dual on a training log")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--batch", help="batch directory produced by gen")
    p.add_argument("--budget", type=float)
    p.add_argument("--cpc-cap", type=float, dest="cpc_cap")
    p.add_argument("--step-seconds", type=int, default=3600)
    p.add_argument("--num-steps", type=int, default=24)
    p.add_argument("--tol", type=float)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel campaign solves in batch mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="replay one campaign-day under a strategy")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--budget", type=float)
    p.add_argument("--cpc-cap", type=float, dest="cpc_cap")
    p.add_argument("--step-seconds", type=int, default=3600)
    p.add_argument("--num-steps", type=int, default=24)
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--tuned", help="tuned config JSON (from tune)")
    p.add_argument("--dual", help="precomputed dual JSON (from solve)")
    p.add_argument("--alpha", type=float, help="override the tuned mixing alpha")
    p.add_argument("--beta", type=float, help="override the tuned mixing beta")
    p.add_argument("--tol", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="grid-search controller settings on training data")
    p.add_argument("--batch", required=True)
    p.add_argument("--per-campaign", action="store_true",
                   help="tune each campaign separately instead of pooling")
    p.add_argument("--strategies", nargs="+", choices=TUNABLE_STRATEGIES)
    p.add_argument("--stress", nargs="+", type=float,
                   help="training-replay price stress factors")
    p.add_argument("--tol", type=float)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="evaluate strategies over a campaign batch")
    p.add_argument("--batch", required=True)
    p.add_argument("--tuned", help="tuned config JSON (from tune)")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES)
    p.add_argument("--tol", type=float)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rerun", help="re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory (defaults to the manifest's)")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BidLogError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
