"""Domain types for persona-conditioned debates and the experiment matrix."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

SCHEMA_VERSION = 1


class TraitName(str, Enum):
    # order is the one used in the debater prompt and everywhere traits are listed
    AGREEABLENESS = "Agreeableness"
    OPENNESS = "Openness"
    CONSCIENTIOUSNESS = "Conscientiousness"
    EXTRAVERSION = "Extraversion"
    NEUROTICISM = "Neuroticism"


TRAITS: tuple[TraitName, ...] = tuple(TraitName)


class TraitLevel(str, Enum):
    HIGH = "High"
    LOW = "Low"

    @classmethod
    def parse(cls, value: Any) -> "TraitLevel":
        if isinstance(value, TraitLevel):
            return value
        if isinstance(value, str):
            v = value.strip().lower()
            if v == "high":
                return cls.HIGH
            if v == "low":
                return cls.LOW
        raise InvalidLevel(value)

    def flipped(self) -> "TraitLevel":
        return TraitLevel.LOW if self is TraitLevel.HIGH else TraitLevel.HIGH


class Speaker(str, Enum):
    P1 = "P1"
    P2 = "P2"

    @classmethod
    def for_turn(cls, index: int) -> "Speaker":
        return cls.P1 if index % 2 == 0 else cls.P2


class ProfileError(ValueError):
    """Raised when a trait profile mapping cannot be parsed."""


class MissingTrait(ProfileError):
    def __init__(self, name: TraitName):
        self.name = name
        super().__init__(f"missing trait: {name.value}")


class UnknownTrait(ProfileError):
    def __init__(self, key: Any):
        self.key = key
        super().__init__(f"unknown trait key: {key!r}")


class InvalidLevel(ProfileError):
    def __init__(self, value: Any):
        self.value = value
        super().__init__(f"invalid trait level: {value!r} (expected High or Low)")


class EmptyInput(ValueError):
    pass


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class TraitProfile:
    """High/Low level for each of the five traits, stored in ``TRAITS`` order."""

    levels: tuple[TraitLevel, ...]

    def __post_init__(self):
        if len(self.levels) != len(TRAITS) or not all(isinstance(v, TraitLevel) for v in self.levels):
            raise ProfileError("a profile needs exactly one TraitLevel per trait")

    def __getitem__(self, trait: TraitName | str) -> TraitLevel:
        return self.levels[TRAITS.index(TraitName(trait))]

    def items(self) -> Iterable[tuple[TraitName, TraitLevel]]:
        return zip(TRAITS, self.levels)

    def to_dict(self) -> dict[str, str]:
        return {t.value: lvl.value for t, lvl in self.items()}

    @classmethod
    def from_levels(cls, levels: Mapping[TraitName, TraitLevel]) -> "TraitProfile":
        return cls(tuple(levels[t] for t in TRAITS))


def parse_trait_profile(raw: Mapping[str, Any]) -> TraitProfile:
    """Parse ``{"Agreeableness": "High", ...}`` into a complete profile.

    Keys must be the exact trait names; levels are case-insensitive.
    """
    if not isinstance(raw, Mapping):
        raise ProfileError(f"expected a mapping of trait -> level, got {type(raw).__name__}")
    known = {t.value: t for t in TRAITS}
    levels: dict[TraitName, TraitLevel] = {}
    for key, value in raw.items():
        if key not in known:
            raise UnknownTrait(key)
        levels[known[key]] = TraitLevel.parse(value)
    for t in TRAITS:
        if t not in levels:
            raise MissingTrait(t)
    return TraitProfile.from_levels(levels)


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug or "topic"


@dataclass(frozen=True)
class Topic:
    id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("topic text must be non-empty")
        if not self.id:
            raise ValueError("topic id must be non-empty")

    @classmethod
    def from_text(cls, text: str) -> "Topic":
        return cls(slugify(text), text)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.9
    max_tokens: int = 150
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenerationParams":
        return cls(
            temperature=float(d.get("temperature", 0.9)),
            max_tokens=int(d.get("max_tokens", 150)),
            seed=d.get("seed"),
        )


class PairingPolicy(str, Enum):
    PAIRS = "pairs"
    MIRROR = "mirror"


@dataclass(frozen=True)
class TraitCombo:
    """One entry of the combos file: a single profile or a (p1, p2) pair."""

    id: str
    p1: TraitProfile
    p2: TraitProfile | None = None

    @property
    def is_pair(self) -> bool:
        return self.p2 is not None


@dataclass(frozen=True)
class DebateConfig:
    topic: Topic
    profile_p1: TraitProfile
    profile_p2: TraitProfile
    combo_id: str = "combo-01"
    turns_per_participant: int = 4
    generation: GenerationParams = field(default_factory=GenerationParams)
    pairing_label: str = "p1_vs_p2"

    def __post_init__(self):
        if self.turns_per_participant < 1:
            raise ValueError("turns_per_participant must be >= 1")

    @property
    def discourse_id(self) -> str:
        return f"{self.pairing_label}__{self.topic.id}__{self.combo_id}"

    @property
    def item_key(self) -> tuple[str, str]:
        return (self.topic.id, self.combo_id)

    def profile(self, speaker: Speaker) -> TraitProfile:
        return self.profile_p1 if speaker is Speaker.P1 else self.profile_p2

    def to_dict(self) -> dict[str, Any]:
        return {
            "topic": {"id": self.topic.id, "text": self.topic.text},
            "combo_id": self.combo_id,
            "profile_p1": self.profile_p1.to_dict(),
            "profile_p2": self.profile_p2.to_dict(),
            "turns_per_participant": self.turns_per_participant,
            "generation": self.generation.to_dict(),
            "pairing_label": self.pairing_label,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DebateConfig":
        return cls(
            topic=Topic(d["topic"]["id"], d["topic"]["text"]),
            profile_p1=parse_trait_profile(d["profile_p1"]),
            profile_p2=parse_trait_profile(d["profile_p2"]),
            combo_id=d["combo_id"],
            turns_per_participant=int(d["turns_per_participant"]),
            generation=GenerationParams.from_dict(d["generation"]),
            pairing_label=d["pairing_label"],
        )


def load_experiment_matrix(
    topics: Sequence[Topic],
    combos: Sequence[TraitCombo],
    policy: PairingPolicy = PairingPolicy.PAIRS,
    *,
    turns_per_participant: int = 4,
    generation: GenerationParams | None = None,
    pairing_label: str = "p1_vs_p2",
) -> list[DebateConfig]:
    """Cross product of topics and trait combos, topics-major."""
    if not topics:
        raise EmptyInput("no topics given")
    if not combos:
        raise EmptyInput("no trait combinations given")
    ids = [t.id for t in topics]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate topic ids: {dup}")
    policy = PairingPolicy(policy)
    pairs = []
    for c in combos:
        if policy is PairingPolicy.PAIRS:
            if not c.is_pair:
                raise PairingError(
                    f"combo {c.id} has a single profile; use the mirror policy or give p1/p2"
                )
            pairs.append((c.id, c.p1, c.p2))
        else:
            if c.is_pair:
                raise PairingError(f"combo {c.id} is a p1/p2 pair but the policy is mirror")
            pairs.append((c.id, c.p1, c.p1))
    gen = generation or GenerationParams()
    return [
        DebateConfig(
            topic=t,
            profile_p1=p1,
            profile_p2=p2,
            combo_id=cid,
            turns_per_participant=turns_per_participant,
            generation=gen,
            pairing_label=pairing_label,
        )
        for t in topics
        for cid, p1, p2 in pairs
    ]


# --- file loaders -----------------------------------------------------------


def load_topics(path: str | Path) -> list[Topic]:
    """Topics file: JSON array of strings, or one topic per line."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        items = json.loads(text)
        if not all(isinstance(x, str) for x in items):
            raise ValueError(f"{path}: topics JSON must be an array of strings")
    else:
        items = [line.strip() for line in text.splitlines()]
    return topics_from_strings(items)


def topics_from_strings(items: Iterable[str]) -> list[Topic]:
    topics = [Topic.from_text(s.strip()) for s in items if s.strip()]
    seen: dict[str, int] = {}
    out = []
    for t in topics:
        # disambiguate colliding slugs deterministically
        n = seen.get(t.id, 0)
        seen[t.id] = n + 1
        out.append(t if n == 0 else Topic(f"{t.id}-{n + 1}", t.text))
    return out


def combos_from_json(items: Sequence[Any]) -> list[TraitCombo]:
    if not isinstance(items, list):
        raise ValueError("trait combos must be a JSON array")
    combos = []
    for i, item in enumerate(items, start=1):
        if not isinstance(item, Mapping):
            raise ValueError(f"combo #{i} is not an object")
        cid = str(item.get("id", f"combo-{i:02d}"))
        if "p1" in item or "p2" in item:
            if "p1" not in item or "p2" not in item:
                raise ValueError(f"combo #{i} needs both p1 and p2")
            combos.append(TraitCombo(cid, parse_trait_profile(item["p1"]), parse_trait_profile(item["p2"])))
        else:
            body = {k: v for k, v in item.items() if k != "id"}
            combos.append(TraitCombo(cid, parse_trait_profile(body)))
    return combos


def load_combos(path: str | Path) -> list[TraitCombo]:
    return combos_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# --- discourse records ------------------------------------------------------

WORD_LIMIT_EXCEEDED = "WordLimitExceeded"
EMPTY_AFTER_SANITIZE = "EmptyAfterSanitize"


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: Speaker
    raw_text: str
    clean_text: str
    violations: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()

    @property
    def word_count(self) -> int:
        return len(self.clean_text.split())

    @property
    def role(self) -> str:
        return "opening" if self.index == 0 else "response"

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "speaker": self.speaker.value,
            "role": self.role,
            "raw_text": self.raw_text,
            "clean_text": self.clean_text,
            "word_count": self.word_count,
            "violations": list(self.violations),
            "removed": list(self.removed),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Utterance":
        u = cls(
            index=int(d["index"]),
            speaker=Speaker(d["speaker"]),
            raw_text=d["raw_text"],
            clean_text=d["clean_text"],
            violations=tuple(d.get("violations", ())),
            removed=tuple(d.get("removed", ())),
        )
        if "word_count" in d and d["word_count"] != u.word_count:
            raise ValueError(f"utterance {u.index}: stored word_count does not match clean_text")
        return u


@dataclass(frozen=True)
class SimilarityReport:
    pair_scores: Mapping[tuple[int, int], float]
    threshold: float

    @property
    def max_score(self) -> float:
        return max(self.pair_scores.values(), default=0.0)

    @property
    def flagged_pairs(self) -> list[tuple[int, int]]:
        return sorted(p for p, s in self.pair_scores.items() if s >= self.threshold)

    def adjacent_flag_ratio(self) -> float:
        adjacent = [p for p in self.pair_scores if p[1] == p[0] + 1]
        if not adjacent:
            return 0.0
        return sum(self.pair_scores[p] >= self.threshold for p in adjacent) / len(adjacent)

    @property
    def degenerate(self) -> bool:
        return self.adjacent_flag_ratio() >= 0.3

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "max_score": self.max_score,
            "flagged_pairs": [list(p) for p in self.flagged_pairs],
            "degenerate": self.degenerate,
            "pair_scores": [[i, j, s] for (i, j), s in sorted(self.pair_scores.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimilarityReport":
        return cls({(int(i), int(j)): float(s) for i, j, s in d["pair_scores"]}, float(d["threshold"]))


@dataclass(frozen=True)
class ProviderFailure:
    turn: int
    kind: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"turn": self.turn, "kind": self.kind, "message": self.message}


@dataclass(frozen=True)
class Discourse:
    id: str
    config: DebateConfig
    utterances: tuple[Utterance, ...]
    created_at: str
    provider_ids: Mapping[str, str]
    similarity_report: SimilarityReport | None = None
    failure: ProviderFailure | None = None

    def __post_init__(self):
        check_turn_order(self.utterances)
        expected = 2 * self.config.turns_per_participant
        if len(self.utterances) > expected:
            raise ValueError(f"{self.id}: {len(self.utterances)} utterances exceed {expected}")
        if len(self.utterances) < expected and self.failure is None:
            raise ValueError(f"{self.id}: short discourse without a recorded provider failure")

    @property
    def truncated(self) -> bool:
        return self.failure is not None

    def texts(self, speaker: Speaker) -> list[str]:
        return [u.clean_text for u in self.utterances if u.speaker is speaker]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "config": self.config.to_dict(),
            "created_at": self.created_at,
            "provider_ids": dict(self.provider_ids),
            "truncated": self.truncated,
            "failure": self.failure.to_dict() if self.failure else None,
            "utterances": [u.to_dict() for u in self.utterances],
            "similarity_report": self.similarity_report.to_dict() if self.similarity_report else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Discourse":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported discourse schema_version: {d.get('schema_version')!r}")
        f = d.get("failure")
        sim = d.get("similarity_report")
        return cls(
            id=d["id"],
            config=DebateConfig.from_dict(d["config"]),
            utterances=tuple(Utterance.from_dict(u) for u in d["utterances"]),
            created_at=d["created_at"],
            provider_ids=dict(d["provider_ids"]),
            similarity_report=SimilarityReport.from_dict(sim) if sim else None,
            failure=ProviderFailure(f["turn"], f["kind"], f["message"]) if f else None,
        )


def check_turn_order(utterances: Sequence[Utterance]) -> None:
    for pos, u in enumerate(utterances):
        if u.index != pos:
            raise ValueError(f"utterance indices not contiguous at position {pos} (got {u.index})")
        if u.speaker is not Speaker.for_turn(pos):
            raise ValueError(f"speaker {u.speaker.value} out of turn at index {pos}")
