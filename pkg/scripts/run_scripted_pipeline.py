"""Offline demo: scripted debaters and judges through every pipeline phase.

    python scripts/run_scripted_pipeline.py --out /tmp/dyad-demo

Uses the sample topics and combos in configs/, mirror pairing, and three
simulated judges with different error rates.
"""

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from dyadtraits.cli import main as cli
from dyadtraits.demo import JudgeBehaviour, write_workspace

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo-run")
    ap.add_argument("--turns", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    topics = json.loads((CONFIGS / "topics_sample.json").read_text())
    combos = json.loads((CONFIGS / "combos_sample.json").read_text())
    cfg, judges = write_workspace(out / "workspace", topics, combos, policy="mirror",
                                  turns_per_participant=args.turns, judges={
                                      "steady": JudgeBehaviour(flip_rate=0.1),
                                      "noisy": JudgeBehaviour(flip_rate=0.35),
                                      "flaky": JudgeBehaviour(flip_rate=0.2, invalid_rate=0.45),
                                  })
    run = out / "runs" / "demo"
    lexicon = resources.files("dyadtraits") / "data" / "demo_lexicon.json"
    steps = [
        ["generate", "--config", str(cfg), "--out", str(out / "runs")],
        ["judge", "--run", str(run), "--judges", str(judges)],
        ["metrics", "--run", str(run), "--hta-lta", "--kappa", "--corpus-stats", "--alignment",
         "--lexicon", str(lexicon)],
        ["validate", "--run", str(run), "--seed", str(args.seed)],
        ["report", "--run", str(run)],
    ]
    for step in steps:
        code = cli(step)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
