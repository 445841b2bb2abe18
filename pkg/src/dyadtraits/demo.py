"""Offline scripted workspaces: a run config plus keyed response scripts.

Used by the end-to-end tests and ``scripts/run_scripted_pipeline.py``. Debater
lines are drawn from a seeded vocabulary so utterances differ from each other;
judge verdicts copy the assigned profile and flip each trait with a fixed
probability, with a configurable share of malformed replies.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import TRAITS, Speaker, TraitProfile, parse_trait_profile
from .judging import verdict_response_json

_SUBJECTS = ["cost", "safety", "the evidence", "public trust", "long-term risk", "the data", "local jobs",
             "regulation", "fairness", "innovation", "the budget", "future generations"]
_VERBS = ["outweighs", "undermines", "supports", "changes", "ignores", "protects", "complicates", "clarifies"]
_OPENERS = ["I think", "Frankly", "Look", "Honestly", "Consider this:", "My view is that", "Still", "Yet"]


def _rng(*parts: str) -> random.Random:
    return random.Random(hashlib.sha256("|".join(parts).encode()).hexdigest())


def debater_line(discourse_id: str, turn: int) -> str:
    r = _rng("debate", discourse_id, str(turn))
    sents = []
    for _ in range(r.randint(2, 3)):
        a, b = r.sample(_SUBJECTS, 2)
        sents.append(f"{r.choice(_OPENERS)} {a} {r.choice(_VERBS)} {b}.")
    if r.random() < 0.3:
        sents.append(f"Why ignore {r.choice(_SUBJECTS)}?")
    return " ".join(sents)


@dataclass(frozen=True)
class JudgeBehaviour:
    flip_rate: float = 0.2
    invalid_rate: float = 0.0


def judge_reply(judge_id: str, discourse_id: str, participant: Speaker, assigned: Mapping[str, str],
                behaviour: JudgeBehaviour, attempt: int = 0) -> str:
    r = _rng("judge", judge_id, discourse_id, participant.value, str(attempt))
    if r.random() < behaviour.invalid_rate:
        return r.choice(['{"predicted_bfi": {"Openness": "High"', "I cannot judge this text.",
                         '{"predicted_bfi": {"Openness": "High/Low"}}'])
    profile = parse_trait_profile(dict(assigned))
    levels = {t: (profile[t].flipped() if r.random() < behaviour.flip_rate else profile[t]) for t in TRAITS}
    return verdict_response_json(TraitProfile.from_levels(levels))


def _toml_str(s: str) -> str:
    return json.dumps(s)


def write_workspace(root: str | Path, topics: Sequence[str], combos: Sequence[Mapping], *,
                    judges: Mapping[str, JudgeBehaviour] | None = None, turns_per_participant: int = 4,
                    run_id: str = "demo", policy: str = "pairs", workers: int = 4,
                    timestamp: str = "2024-01-01T00:00:00Z") -> tuple[Path, Path]:
    """Write ``run.toml``, ``judges.toml`` and keyed scripts under ``root``.

    Returns ``(run_config_path, judges_config_path)``.
    """
    from .runs import load_run_config

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    judges = dict(judges or {"judge-a": JudgeBehaviour(), "judge-b": JudgeBehaviour(flip_rate=0.3)})
    (root / "topics.json").write_text(json.dumps(list(topics), indent=1) + "\n", encoding="utf-8")
    (root / "combos.json").write_text(json.dumps(list(combos), indent=1) + "\n", encoding="utf-8")
    for name in ("p1", "p2"):
        (root / f"{name}.jsonl").write_text("", encoding="utf-8")
    cfg_path = root / "run.toml"
    cfg_path.write_text(f"""[run]
id = {_toml_str(run_id)}
timestamp = {_toml_str(timestamp)}
workers = {workers}
turns_per_participant = {turns_per_participant}

[topics]
file = "topics.json"

[traits]
file = "combos.json"
policy = {_toml_str(policy)}

[debaters]
p1 = "p1"
p2 = "p2"

[providers.p1]
kind = "scripted"
script = "p1.jsonl"

[providers.p2]
kind = "scripted"
script = "p2.jsonl"
""", encoding="utf-8")

    cfg = load_run_config(cfg_path)
    scripts = {Speaker.P1: [], Speaker.P2: []}
    verdicts = {j: [] for j in judges}
    for dc in cfg.matrix():
        did = dc.discourse_id
        for k in range(2 * turns_per_participant):
            scripts[Speaker.for_turn(k)].append({"discourse_id": did, "turn": k, "response": debater_line(did, k)})
        for jid, b in judges.items():
            # one reply per attempt: judges get a single retry on an invalid verdict
            for s in Speaker:
                for attempt in range(2):
                    verdicts[jid].append({"discourse_id": did, "turn": s.value, "response": judge_reply(
                        jid, did, s, dc.profile(s).to_dict(), b, attempt)})

    def dump(path: Path, rows):
        path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")

    dump(root / "p1.jsonl", scripts[Speaker.P1])
    dump(root / "p2.jsonl", scripts[Speaker.P2])
    jtoml = []
    for jid in judges:
        dump(root / f"{jid}.jsonl", verdicts[jid])
        jtoml.append(f'[judges.{_toml_str(jid)}]\nkind = "scripted"\nscript = {_toml_str(jid + ".jsonl")}\n')
    judges_path = root / "judges.toml"
    judges_path.write_text("\n".join(jtoml), encoding="utf-8")
    return cfg_path, judges_path
