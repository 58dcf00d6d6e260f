"""Command line entry point: ``shillab run`` and ``shillab grid``.

Exit codes: 0 success, 1 a stage failed (artifacts kept, rerun with
``--resume``), 2 invalid configuration or arguments.
"""

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError
from .pipeline import grid, run_experiment


def _axis(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected section.key=v1,v2,... got {text!r}")
    name, values = text.split("=", 1)
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError(f"axis {name!r} has no values")
    return name.strip(), items


def build_parser():
    parser = argparse.ArgumentParser(prog="shillab", description="Shilling-attack experiments on implicit feedback data.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (.ini/.cfg sections or .json)")
        p.add_argument("--seed", type=int, help="attack seed (targets, templates, attacker training)")
        p.add_argument("--out", help="output directory (default: run.out from the config)")
        p.add_argument("--resume", action="store_true", help="continue the latest unfinished run of this config")
        p.add_argument("--data", help="ratings file (overrides data.path)")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--attack", help="comma-separated attack methods, or 'none' for the clean baseline only")
    run.add_argument("--victims", help="comma-separated victim kinds (MF, LGN, NCF)")

    g = sub.add_parser("grid", help="run a hyper-parameter grid")
    common(g)
    g.add_argument("--axis", type=_axis, action="append", default=[],
                   help="grid axis as section.key=v1,v2,... (repeatable)")
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out.setdefault("attack", {})["seed"] = args.seed
    if args.data is not None:
        out.setdefault("data", {})["path"] = args.data
    if getattr(args, "attack", None) is not None:
        out.setdefault("attack", {})["methods"] = args.attack
    if getattr(args, "victims", None) is not None:
        out.setdefault("victims", {})["kinds"] = args.victims
    return out


def _summary(report, run_dir):
    lines = [f"run directory: {run_dir}", report.metrics_csv().rstrip()]
    if report.detection:
        lines.append(report.detection_csv().rstrip())
    lines.append("runtimes: " + json.dumps({k: round(v, 2) for k, v in report.runtimes.items()}))
    return "\n".join(lines)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        if args.command == "run":
            report, run_dir = run_experiment(cfg, out=args.out, resume=args.resume)
            print(_summary(report, run_dir))
        else:
            axes = {}
            for name, values in args.axis:
                axes[name] = values
            section_key = {name: [cfg.with_(**{name: v})[name] for v in values] for name, values in axes.items()}
            results = grid(cfg, section_key, out=args.out, resume=args.resume)
            for assignment, report, run_dir in results:
                print(json.dumps(assignment, sort_keys=True))
                print(_summary(report, run_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage failure: keep artifacts, report and exit nonzero
        logging.getLogger("shillab").exception("stage failed")
        print(f"run failed: {type(exc).__name__}: {exc}; rerun with --resume to continue", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
