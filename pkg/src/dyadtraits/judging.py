"""Judge calls and verdict parsing.

``parse_verdict`` never raises: every input string becomes either a valid
``predicted_bfi`` profile or an ``InvalidReason`` with a stable code. The
codes feed the per-judge invalid rate.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    SCHEMA_VERSION,
    TRAITS,
    Discourse,
    Speaker,
    TraitLevel,
    TraitName,
    TraitProfile,
    parse_trait_profile,
)
from .prompting import JUDGE_LABELS, TemplateSet, render_judge_prompts
from .providers import Provider, ProviderError

log = logging.getLogger(__name__)

NO_JSON = "NoJsonFound"
UNBALANCED = "UnbalancedJson"
MALFORMED = "MalformedJson"
MISSING_KEY = "MissingKey"
INVALID_LEVEL = "InvalidLevel"
ECHOED_TEMPLATE = "EchoedTemplate"
TRANSPORT = "Transport"

LABELS = {Speaker.P1: JUDGE_LABELS[0], Speaker.P2: JUDGE_LABELS[1]}

# reasoning blocks whose content is dropped; other tags only lose their markers
_THINK = re.compile(r"<(think|thinking|reasoning|analysis|scratchpad)\b[^<>]*>.*?</\1\s*>", re.DOTALL | re.I)
_MARK = re.compile(r"</?[A-Za-z][A-Za-z0-9_:-]*(?:\s[^<>]*)?/?>")
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")
_ECHO = re.compile(r"^\s*high\s*/\s*low\s*$", re.I)


@dataclass(frozen=True)
class InvalidReason:
    code: str
    detail: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "detail": self.detail}


@dataclass(frozen=True)
class ParsedVerdict:
    predicted: TraitProfile | None
    consistency: Mapping[str, str] | None = None
    reason: InvalidReason | None = None

    @property
    def valid(self) -> bool:
        return self.reason is None


def _invalid(code: str, detail: str = "") -> ParsedVerdict:
    return ParsedVerdict(None, None, InvalidReason(code, detail))


def _balanced_end(text: str, start: int) -> int | None:
    """Index one past the brace closing ``text[start]``, or None if it never closes."""
    depth = 0
    in_str = False
    esc = False
    for i in range(start, len(text)):
        c = text[i]
        if in_str:
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_json_object(text: str) -> tuple[Any, str | None]:
    """First balanced ``{...}`` that decodes to a JSON object.

    Returns ``(obj, None)`` or ``(None, reason_code)``.
    """
    text = _MARK.sub("", _THINK.sub("", text))
    pos = text.find("{")
    if pos < 0:
        return None, NO_JSON
    saw_balanced = False
    while pos >= 0:
        end = _balanced_end(text, pos)
        if end is None:
            return None, (MALFORMED if saw_balanced else UNBALANCED)
        saw_balanced = True
        chunk = text[pos:end]
        for candidate in (chunk, _TRAILING_COMMA.sub(r"\1", chunk)):
            try:
                obj = json.loads(candidate)
            except (ValueError, RecursionError):
                continue
            if isinstance(obj, dict):
                return obj, None
        pos = text.find("{", pos + 1)
    return None, MALFORMED


def _lookup(d: Mapping[str, Any], name: str) -> tuple[bool, Any]:
    if name in d:
        return True, d[name]
    for k, v in d.items():
        if isinstance(k, str) and k.strip().lower() == name.lower():
            return True, v
    return False, None


def _consistency(obj: Mapping[str, Any]) -> dict[str, str] | None:
    found, raw = _lookup(obj, "consistency")
    if not found or not isinstance(raw, Mapping):
        return None
    out = {}
    for t in TRAITS:
        ok, v = _lookup(raw, t.value)
        if ok and isinstance(v, str) and v.strip().lower() in ("yes", "no"):
            out[t.value] = v.strip().capitalize()
    return out or None


def parse_verdict(raw: str) -> ParsedVerdict:
    if not isinstance(raw, str):
        return _invalid(NO_JSON, f"response is {type(raw).__name__}, not text")
    obj, err = extract_json_object(raw)
    if err:
        return _invalid(err)
    found, bfi = _lookup(obj, "predicted_bfi")
    if not found:
        return _invalid(MISSING_KEY, "predicted_bfi")
    if not isinstance(bfi, Mapping):
        return _invalid(MISSING_KEY, "predicted_bfi (not an object)")
    present = {t: _lookup(bfi, t.value) for t in TRAITS}
    if any(ok and isinstance(v, str) and _ECHO.match(v) for ok, v in present.values()):
        return _invalid(ECHOED_TEMPLATE, "High/Low placeholder returned")
    levels: dict[TraitName, TraitLevel] = {}
    for t, (ok, v) in present.items():
        if not ok:
            return _invalid(MISSING_KEY, f"predicted_bfi.{t.value}")
        try:
            levels[t] = TraitLevel.parse(v)
        except ValueError:
            return _invalid(INVALID_LEVEL, f"{t.value}={v!r}")
    return ParsedVerdict(TraitProfile.from_levels(levels), _consistency(obj))


def verdict_response_json(profile: TraitProfile, consistency: Mapping[str, str] | None = None) -> str:
    """Render a profile in the judge return shape (inverse of ``parse_verdict``)."""
    obj: dict[str, Any] = {"predicted_bfi": profile.to_dict()}
    if consistency:
        obj["consistency"] = dict(consistency)
    return json.dumps(obj)


@dataclass(frozen=True)
class JudgeVerdict:
    judge_id: str
    discourse_id: str
    participant: Speaker
    predicted: TraitProfile | None
    raw_response: str
    reason: InvalidReason | None = None
    consistency: Mapping[str, str] | None = None
    attempts: int = 1

    def __post_init__(self):
        if (self.predicted is None) == (self.reason is None):
            raise ValueError("a verdict is either valid with a profile or invalid with a reason")

    @property
    def valid(self) -> bool:
        return self.reason is None

    @property
    def status(self) -> str:
        return "Valid" if self.valid else "Invalid"

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.judge_id, self.discourse_id, self.participant.value)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "judge_id": self.judge_id,
            "discourse_id": self.discourse_id,
            "participant": self.participant.value,
            "status": self.status,
            "predicted": self.predicted.to_dict() if self.predicted else None,
            "consistency": dict(self.consistency) if self.consistency else None,
            "reason": self.reason.to_dict() if self.reason else None,
            "attempts": self.attempts,
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "JudgeVerdict":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported verdict schema_version: {d.get('schema_version')!r}")
        r = d.get("reason")
        return cls(
            judge_id=d["judge_id"],
            discourse_id=d["discourse_id"],
            participant=Speaker(d["participant"]),
            predicted=parse_trait_profile(d["predicted"]) if d.get("predicted") else None,
            raw_response=d["raw_response"],
            reason=InvalidReason(r["code"], r.get("detail", "")) if r else None,
            consistency=d.get("consistency"),
            attempts=int(d.get("attempts", 1)),
        )


def participant_text(discourse: Discourse, speaker: Speaker) -> str:
    return "\n".join(discourse.texts(speaker))


def judge_participant(judge: Provider, discourse: Discourse, speaker: Speaker,
                      templates: TemplateSet | None = None, retries_on_invalid: int = 1) -> JudgeVerdict:
    prompts = render_judge_prompts(LABELS[speaker], participant_text(discourse, speaker), templates)
    key = (discourse.id, speaker.value)
    raw = ""
    parsed = _invalid(TRANSPORT)
    attempts = 0
    for _ in range(1 + retries_on_invalid):
        attempts += 1
        try:
            raw = judge.complete(prompts.system, prompts.user, key=key)
        except ProviderError as e:
            log.warning("judge %s on %s/%s: %s", judge.id, discourse.id, speaker.value, e)
            # transport failures already went through the provider's own retries
            parsed = _invalid(TRANSPORT, f"{e.kind}: {e}")
            raw = ""
            break
        parsed = parse_verdict(raw)
        if parsed.valid:
            break
    return JudgeVerdict(judge.id, discourse.id, speaker, parsed.predicted, raw,
                        parsed.reason, parsed.consistency, attempts)


def judge_discourse(judge: Provider, discourse: Discourse, templates: TemplateSet | None = None,
                    retries_on_invalid: int = 1) -> tuple[JudgeVerdict, JudgeVerdict]:
    """One judge call per participant; both verdicts are always returned."""
    return tuple(  # type: ignore[return-value]
        judge_participant(judge, discourse, s, templates, retries_on_invalid) for s in Speaker
    )


def invalid_rate(verdicts: Iterable[JudgeVerdict]) -> float | None:
    vs = list(verdicts)
    if not vs:
        return None
    return sum(not v.valid for v in vs) / len(vs)


def invalid_summary(verdicts: Sequence[JudgeVerdict]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for v in verdicts:
        s = out.setdefault(v.judge_id, {"total": 0, "valid": 0, "invalid": 0, "reasons": {}})
        s["total"] += 1
        if v.valid:
            s["valid"] += 1
        else:
            s["invalid"] += 1
            s["reasons"][v.reason.code] = s["reasons"].get(v.reason.code, 0) + 1
    for s in out.values():
        s["invalid_rate"] = s["invalid"] / s["total"]
        s["reasons"] = dict(sorted(s["reasons"].items()))
    return dict(sorted(out.items()))
