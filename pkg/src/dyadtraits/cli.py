"""Command-line entry point: ``dyadtraits {generate,judge,metrics,validate,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .providers import ProviderConfigError
from .runs import (
    ConfigError,
    MissingInput,
    cmd_generate,
    cmd_judge,
    cmd_metrics,
    cmd_report,
    cmd_validate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3

log = logging.getLogger("dyadtraits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadtraits", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the debate matrix and persist discourses")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True, help="runs root; the run goes to <out>/<run_id>")
    g.add_argument("--workers", type=int)

    j = sub.add_parser("judge", help="collect judge verdicts for every discourse participant")
    j.add_argument("--run", required=True)
    j.add_argument("--judges", required=True, help="TOML file with [judges.<id>] provider tables")
    j.add_argument("--force", action="store_true", help="re-judge existing (judge, discourse, participant) records")
    j.add_argument("--workers", type=int, default=4)

    m = sub.add_parser("metrics", help="compute metric reports (all verdict-based families if no flag is given)")
    m.add_argument("--run", required=True)
    m.add_argument("--hta-lta", action="store_true")
    m.add_argument("--kappa", action="store_true")
    m.add_argument("--alignment", action="store_true")
    m.add_argument("--lexicon")
    m.add_argument("--corpus-stats", action="store_true")
    m.add_argument("--required-judges", help="comma-separated judge ids for kappa rows")

    v = sub.add_parser("validate", help="similarity screen plus a seeded human-review sample")
    v.add_argument("--run", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--threshold", type=float, default=0.9)
    v.add_argument("--sample-size", type=int, default=15)

    r = sub.add_parser("report", help="write reports/summary.md and print it")
    r.add_argument("--run", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            run_dir = cmd_generate(args.config, args.out, args.workers)
            print(run_dir)
        elif args.command == "judge":
            res = cmd_judge(args.run, args.judges, force=args.force, workers=args.workers)
            print(f"{res['new']} new verdicts, {res['total']} total")
            for jid, s in res["judges"].items():
                print(f"  {jid}: invalid_rate={s['invalid_rate']:.3f} ({s['invalid']}/{s['total']})")
        elif args.command == "metrics":
            fams = [f for f, on in (("hta-lta", args.hta_lta), ("kappa", args.kappa),
                                    ("alignment", args.alignment), ("corpus-stats", args.corpus_stats)) if on]
            req = args.required_judges.split(",") if args.required_judges else None
            done = cmd_metrics(args.run, fams, lexicon=args.lexicon, required_judges=req)
            print("wrote: " + ", ".join(done))
        elif args.command == "validate":
            rep = cmd_validate(args.run, seed=args.seed, threshold=args.threshold, sample_size=args.sample_size)
            print(f"{len(rep['flagged'])} flagged, {len(rep['degenerate'])} degenerate, "
                  f"{len(rep['review_sample'])} sampled for review")
        elif args.command == "report":
            print(cmd_report(args.run), end="")
    except MissingInput as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ProviderConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
