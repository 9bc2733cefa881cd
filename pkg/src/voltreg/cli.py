"""Command-line harness tying the pipeline together.

Subcommands: gen-data, train-surrogate, train-agent, compare, fast-fluct, pf.
Every command takes --config (JSON overrides of the defaults), --seed and
--out; outputs are CSV/PNG/JSON files in the output directory plus a copy of
the resolved configuration.  Exit codes: 0 success, 2 configuration errors,
3 feeder/data errors, 4 runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, RunConfig, load_config, save_config
from .grid import FeederError


def _parser():
    p = argparse.ArgumentParser(
        prog="voltreg",
        description="Volt-VAR control on unbalanced feeders: ground-truth "
                    "power flow, learned voltage surrogate, DDPG control.")
    p.add_argument("--config", help="JSON run configuration (partial overrides)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="solve random operating points into a dataset CSV")
    sub.add_parser("train-surrogate",
                   help="fit the voltage surrogate (generates data if absent)")
    t = sub.add_parser("train-agent", help="train the DDPG agent")
    t.add_argument("--backend", choices=("surrogate", "truemodel"),
                   default="surrogate",
                   help="reward source during training (default: surrogate)")
    sub.add_parser("compare",
                   help="evaluate no-control and both agents on held-out days")
    sub.add_parser("fast-fluct", help="per-second cloud-transient rollout")
    f = sub.add_parser("pf", help="print |V| per node-phase for one profile hour")
    f.add_argument("--day", type=int, default=0)
    f.add_argument("--hour", type=int, default=12)
    return p


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_run_config(args)
        if args.command == "pf":
            pipeline.run_pf(cfg, day=args.day, hour=args.hour)
            return 0
        import os
        os.makedirs(args.out, exist_ok=True)
        save_config(cfg, os.path.join(args.out, "run_config.json"))
        if args.command == "gen-data":
            pipeline.run_gen_data(cfg, args.out)
        elif args.command == "train-surrogate":
            _, _, mae, per_node = pipeline.run_train_surrogate(cfg, args.out)
            print("test MAE %.3e, max node MAE %.3e" % (mae, per_node.max()))
        elif args.command == "train-agent":
            result, calls = pipeline.run_train_agent(cfg, args.out,
                                                     backend=args.backend)
            print("final window-100 return %.3f (backend %s, %d solver calls)"
                  % (result.returns[-min(100, len(result.returns)):].mean(),
                     args.backend, calls))
        elif args.command == "compare":
            reports, _, _ = pipeline.run_compare(cfg, args.out)
            with open(f"{args.out}/compare_table.txt") as fh:
                print(fh.read(), end="")
        elif args.command == "fast-fluct":
            _, in_bounds, lat = pipeline.run_fast_fluct(cfg, args.out)
            for name, frac in in_bounds.items():
                print("%s: %.1f%% of steps in bounds (median latency %.2f ms)"
                      % (name, 100 * frac, 1e3 * lat[name]))
        return 0
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (FeederError, FileNotFoundError, ValueError) as exc:
        print("input error: %s" % exc, file=sys.stderr)
        return 3
    except (RuntimeError, FloatingPointError) as exc:
        print("runtime error: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
