"""Command-line entry points: train, verify-theory, bench-comm."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .config import load_config


def _add_train(sub):
    p = sub.add_parser("train", help="run the multi-agent training loop")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--mode", choices=("rsm", "avg", "none"),
                   help="mixing mode override")
    p.add_argument("--epochs", type=int, help="override epoch count")
    p.add_argument("--out", default="runs/run", help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering PNG figures")


def _add_verify(sub):
    p = sub.add_parser("verify-theory",
                       help="exact verification sweep of the mixing bounds")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--taylor-draws", type=int, default=50)
    p.add_argument("--tol", action="append", default=[],
                   metavar="NAME=VALUE",
                   help="override a tolerance, e.g. --tol lemma_return=0")
    p.add_argument("--out", default="runs/theory", help="output directory")
    p.add_argument("--no-figures", action="store_true")


def _add_bench(sub):
    p = sub.add_parser("bench-comm",
                       help="replay reconstruction counts through the cost model")
    p.add_argument("--rho-total", type=int, required=True, action="append",
                   help="reconstruction count (repeatable for several rows)")
    p.add_argument("--d", type=int, required=True,
                   help="parameters per policy vector")
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--payload-bytes", type=int, default=4480)
    p.add_argument("--out", help="optional directory for bench_comm.csv")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gossipsac",
        description="Multi-agent SAC with segmented gossip and regulated "
                    "parameter mixing")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_verify(sub)
    _add_bench(sub)
    args = parser.parse_args(argv)

    if args.command == "train":
        cfg = load_config(args.config, seed=args.seed, mode=args.mode,
                          epochs=args.epochs,
                          figures=False if args.no_figures else None)
        result = harness.run(cfg, args.out)
        if result.aborted:
            print(f"run aborted: {result.abort_reason}", file=sys.stderr)
            return 2
        last = result.eval_rewards[-1] if result.eval_rewards else float("nan")
        print(f"wrote {result.metrics_path} (final eval reward {last:.4f}, "
              f"mixing rate {result.ledger.mixing_rate:.1%})")
        return 0

    if args.command == "verify-theory":
        overrides = {}
        for item in args.tol:
            name, _, value = item.partition("=")
            overrides[name] = float(value)
        report = harness.verify_theory(instances=args.instances,
                                       seed=args.seed,
                                       taylor_draws=args.taylor_draws,
                                       tol_overrides=overrides or None)
        path = harness.write_theory_report(report, args.out,
                                           figures=not args.no_figures)
        print(harness.format_theory_report(report))
        print(f"wrote {path}")
        if not report.passed:
            print("verification FAILED; failing instances serialized next to "
                  "the report", file=sys.stderr)
            return 1
        return 0

    if args.command == "bench-comm":
        rows = [harness.bench_comm(rho, args.d, args.segments,
                                   args.payload_bytes)
                for rho in args.rho_total]
        header = ["rho_total", "d", "segments", "psi_gb", "messages"]
        print(" ".join(f"{h:>10s}" for h in header))
        for row in rows:
            print(f"{row['rho_total']:>10d} {row['d']:>10d} "
                  f"{row['segments']:>10d} {row['psi_gb']:>10.3f} "
                  f"{row['messages']:>10d}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "bench_comm.csv", "w", newline="",
                      encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=header)
                writer.writeheader()
                writer.writerows(rows)
            print(f"wrote {out / 'bench_comm.csv'}")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
