"""Command line entry point: simulate, train, eval, compare, consistency."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .bidder import UntrainedModelError
from .dqn import CheckpointError, load_checkpoint, q_forward
from .mdp import OBSERVED_ETA, ConfigurationError, STATE_DIM, SUBSTITUTE_THRESHOLD, eta_bound, write_consistency_csv
from .simulator import AuctionLog, run_episode


def _out(path: str | None, cfg: harness.ExperimentConfig) -> Path:
    out = Path(path or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _status(ok: bool, what: str) -> bool:
    print(f"{'ok  ' if ok else 'FAIL'} {what}")
    return ok


def cmd_simulate(args, cfg: harness.ExperimentConfig) -> bool:
    out = _out(args.out, cfg)
    setups = harness.calibrate(cfg)
    ok = True
    rows = []
    for kind in ("train", "test"):
        for i, day in enumerate(cfg.days(kind)):
            path = out / f"{kind}_{i:03d}.jsonl"
            day.write_jsonl(path)
            back = AuctionLog.read_jsonl(path)
            ok &= _status(len(back) == len(day) and np.array_equal(back.pcvr, day.pcvr), f"{path.name} round-trip")
            for s in setups:
                r = run_episode(day.for_ad(s.ad_id), s.kb, None)
                capped = run_episode(day.for_ad(s.ad_id), s.kb, r.cost)
                ok &= capped.cost_micros + capped.final_budget_left_micros == capped.budget_micros
                rows.append((kind, i, s.ad_id, len(day), r.impressions, r.clicks, r.purchases, r.cost, r.pur_amt))
    with open(out / "kb_days.csv", "w") as f:
        f.write("split,day,ad_id,auctions,impressions,clicks,purchases,cost,pur_amt\n")
        for row in rows:
            f.write(",".join(map(str, row)) + "\n")
    _status(ok, "budget conservation and log round-trips")
    return ok


def cmd_train(args, cfg: harness.ExperimentConfig) -> bool:
    out = _out(args.out, cfg)
    setups = harness.calibrate(cfg)
    train_days = cfg.days("train")
    if args.algo == "m-rmdp":
        trained, mlog = harness.train_market(cfg, setups, train_days, cfg.lam)
        harness.write_market_csv(mlog, out / "market_log.csv")
    else:
        fn = harness.train_rmdp if args.algo == "rmdp" else harness.train_amdp
        trained = [fn(cfg, s, train_days) for s in setups]
    ok = True
    rng = np.random.default_rng(0)
    probes = rng.random((100, STATE_DIM))
    for t, s in zip(trained, setups):
        stem = f"{args.algo}_{t.ad_id}"
        path = out / f"{stem}.ckpt"
        harness.save_policy(path, t, args.algo, s)
        net, _, _ = load_checkpoint(path)
        same = all(np.array_equal(q_forward(net, x), q_forward(t.net, x)) for x in probes)
        ok &= _status(same, f"{path.name} round-trip")
        ok &= _status(all(np.isfinite(p).all() for p in t.net.params), f"{stem} weights finite")
        conv = harness.emit_convergence(t.log, out / f"{stem}_convergence.csv")
        harness.write_training_jsonl(t.log, out / f"{stem}_episodes.jsonl")
        if conv is not None:
            print(f"     {stem}: loss {conv.loss_first:.4g} -> {conv.loss_last:.4g}, "
                  f"pur_amt {conv.pur_amt_first:.4g} -> {conv.pur_amt_last:.4g}")
    return ok


def cmd_eval(args, cfg: harness.ExperimentConfig) -> bool:
    setups = harness.calibrate(cfg)
    policy, setup, meta = harness.load_policy(args.checkpoint, setups, cfg.amdp_interval)
    algo = meta.get("algo", "rmdp")
    rows = harness.evaluate(setup.kb, setup, cfg.days("test"), "kb", "test")
    rows += harness.evaluate(policy, setup, cfg.days("test"), algo, "test")
    summary = harness.summarize(rows, cfg.cost_tolerance)
    _print_table(summary)
    return _status(all(s.valid for s in summary), "equal-cost tolerance")


def _print_table(rows) -> None:
    print(f"{'ad':>8} {'algo':>7} {'split':>5} {'cost':>10} {'pur_amt':>10} {'ratio':>7} {'impr':>8} {'costratio':>9}")
    for s in rows:
        flag = "" if s.valid else "  invalid"
        print(f"{s.ad_id:>8} {s.algo:>7} {s.split:>5} {s.cost:10.3f} {s.pur_amt:10.3f} {s.ratio:7.3f} "
              f"{s.improvement:+8.2%} {s.cost_ratio:9.3f}{flag}")


def cmd_compare(args, cfg: harness.ExperimentConfig) -> bool:
    if args.market:
        algos = ["kb", "rmdp", "m-rmdp"]
        res = harness.compare_market(cfg)
    else:
        algos = args.algos.split(",")
        res = harness.compare(cfg, algos)
    rows = sorted(res.summary, key=lambda s: (s.split, s.ad_id, algos.index(s.algo)))
    rows += sorted(res.averages, key=lambda s: (s.split, algos.index(s.algo)))
    _print_table(rows)
    if args.out:
        out = _out(args.out, cfg)
        harness.write_summary_csv(rows, out / "comparison.csv")
        for name, tl in res.logs.items():
            harness.emit_convergence(tl, out / f"{name.replace('/', '_')}_convergence.csv")
    return _status(all(s.valid for s in rows), "equal-cost tolerance for every algorithm")


def cmd_consistency(args, cfg: harness.ExperimentConfig) -> bool:
    reports = harness.consistency_run(cfg)
    if args.out:
        write_consistency_csv(reports, _out(args.out, cfg) / "consistency.csv")
    cells = [c for r in reports for c in r.included]
    frac = sum(c.passed for c in cells) / len(cells) if cells else 0.0
    print(f"     cells {len(cells)}, eta < {OBSERVED_ETA}: {frac:.1%}, flagged {sum(len(r.flagged) for r in reports)}")
    ok = _status(all(r.chain_holds for r in reports), "pairwise ratios within the eta bound")
    ok &= _status(eta_bound(OBSERVED_ETA) <= SUBSTITUTE_THRESHOLD, f"eta_bound({OBSERVED_ETA}) <= {SUBSTITUTE_THRESHOLD}")
    return ok


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssrtb", description="Sponsored-search bidding experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate train/test days and KB baselines")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train one algorithm for every ad")
    s.add_argument("--config", required=True)
    s.add_argument("--algo", choices=("rmdp", "amdp", "m-rmdp"), default="rmdp")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint against KB on the test days")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="train and compare algorithms at equal cost")
    s.add_argument("--config", required=True)
    s.add_argument("--algos", default="kb,amdp,rmdp")
    s.add_argument("--market", action="store_true", help="all ads in one shared market: KB vs lam=0 vs lam from config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("consistency", help="cross-day similarity of hourly aggregates")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_consistency)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.ExperimentConfig.load(args.config)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return 0 if args.func(args, cfg) else 1
    except (UntrainedModelError, CheckpointError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
