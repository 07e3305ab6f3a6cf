"""Command-line interface: gen, train, detect, split, sweep, report.

Exit codes: 0 ok, 1 usage error, 2 data/format error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import DataError, FormatError, IrpSimError
from .harness import ExperimentSpec
from .synthgen import GenConfig, load_config
from .trace import load_census, load_trace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="irpsim", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="top-level RNG seed")
    parser.add_argument("--config", help="generator config JSON")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="sweep worker threads")
    parser.add_argument(
        "--per-sample", action="store_true",
        help="report detection rates per ransomware sample instead of per feature vector",
    )
    parser.add_argument(
        "--denominator", choices=harness.DENOMINATORS, default=None,
        help="detection-rate denominator (default: vectors)",
    )
    parser.add_argument(
        "--no-timestamps", action="store_true", help="omit wall-clock times from logs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate census and traces")
    p.add_argument("--n-files", type=int, default=None)
    p.add_argument("--n-dirs", type=int, default=None)
    p.add_argument("--n-benign", type=int, default=None)
    p.add_argument("--n-ransomware", type=int, default=None)

    p = sub.add_parser("train", help="train a detector on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory (from gen)")
    p.add_argument("--detector", choices=("tiered", "windowed"), default="tiered")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--coverage-agg", choices=("max", "mean"), default="max")

    p = sub.add_parser("detect", help="classify one trace")
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--census", help="census JSON (needed for the tiered detector)")
    p.add_argument("trace", help="trace JSONL path")

    p = sub.add_parser("split", help="apply one attack transform to a trace")
    p.add_argument("--attack", choices=("process", "functional", "mimicry"), required=True)
    p.add_argument("--n", type=int, default=2, help="process count (per group for functional)")
    p.add_argument("--groups", help='JSON op groups, e.g. [["DL"],["RD"],["WT"],["RN"]]')
    p.add_argument("--census", help="census JSON")
    p.add_argument("--data", help="dataset directory for profile derivation")
    p.add_argument("--profiles", help="profiles JSON for mimicry")
    p.add_argument("--profile-ops", help='mimicked class, e.g. "DL,RD,WT,RN"')
    p.add_argument("trace", help="trace JSONL path")

    p = sub.add_parser("sweep", help="run an attack sweep against a trained detector")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--attack", choices=("process", "functional", "mimicry"), required=True)
    p.add_argument("--name", help="attack name used in reports")
    p.add_argument("--groups", help="JSON op groups for functional splitting")
    p.add_argument("--profiles", help="profiles JSON for mimicry")
    p.add_argument("--profile-ops", help="mimicked class")
    p.add_argument("--sweep", default="1,2,4,16,64,256", help="comma-separated widths")

    sub.add_parser("report", help="aggregate sweep outputs into figure CSVs")

    return parser


def _attack_descriptor(args) -> dict:
    attack: dict = {"kind": args.attack, "name": getattr(args, "name", None) or args.attack}
    if getattr(args, "groups", None):
        attack["groups"] = json.loads(args.groups)
    if getattr(args, "profiles", None):
        attack["profiles_path"] = args.profiles
    if getattr(args, "profile_ops", None):
        attack["profile_ops"] = args.profile_ops
    return attack


def _run(args) -> int:
    out = Path(args.out)
    if args.command == "gen":
        config = load_config(args.config) if args.config else GenConfig(seed=args.seed)
        overrides = {}
        if args.config and args.seed:
            overrides["seed"] = args.seed
        for name in ("n_files", "n_dirs", "n_benign", "n_ransomware"):
            value = getattr(args, name)
            if value is not None:
                overrides[name] = value
        if overrides:
            config = GenConfig.from_obj({**config.to_obj(), **overrides})
        harness.run_gen(config, out)
        return EXIT_OK

    if args.command == "train":
        harness.run_train(
            args.data, out, detector=args.detector, seed=args.seed,
            n_trees=args.n_trees, coverage_agg=args.coverage_agg,
        )
        return EXIT_OK

    if args.command == "detect":
        from .detectors import load_bundle

        bundle = load_bundle(args.model)
        census = load_census(args.census) if args.census else None
        detector = bundle.detector(census)
        verdict = detector.detect(load_trace(args.trace))
        print(json.dumps({
            "malicious": verdict.malicious,
            "first_detection": verdict.first_detection,
            "per_interval_probs": list(verdict.per_interval_probs),
        }, sort_keys=True))
        return EXIT_OK

    if args.command == "split":
        attack = _attack_descriptor(args)
        attack["n"] = args.n
        harness.run_split(
            args.trace, attack, out, census_path=args.census,
            data_dir=args.data, seed=args.seed,
        )
        return EXIT_OK

    if args.command == "sweep":
        denominator = args.denominator or ("samples" if args.per_sample else "vectors")
        spec = ExperimentSpec(
            data_dir=args.data,
            model_dir=args.model,
            out_dir=str(out),
            attack=_attack_descriptor(args),
            sweep=tuple(int(x) for x in args.sweep.split(",")),
            seed=args.seed,
            jobs=args.jobs,
            denominator=denominator,
        )
        harness.run_sweep(spec)
        return EXIT_OK

    if args.command == "report":
        summary = harness.run_report(out)
        print(json.dumps({"runs": len(summary["runs"]),
                          "warnings": summary["warnings"]}, sort_keys=True))
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    fmt = "%(levelname)s %(message)s" if args.no_timestamps else "%(asctime)s %(levelname)s %(message)s"
    logging.basicConfig(level=logging.INFO, format=fmt)
    try:
        return _run(args)
    except (DataError, FormatError) as exc:
        print(f"irpsim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IrpSimError as exc:
        print(f"irpsim: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"irpsim: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
