"""Run one dyadic debate per config and screen it for repeated arguments."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    EMPTY_AFTER_SANITIZE,
    WORD_LIMIT_EXCEEDED,
    DebateConfig,
    Discourse,
    ProviderFailure,
    SimilarityReport,
    Speaker,
    Utterance,
)
from .prompting import TemplateSet, render_debater_system_prompt, render_debater_user_prompt
from .providers import Provider, ProviderError, SanitizeRules, sanitize_utterance

log = logging.getLogger(__name__)

WORD_LIMIT = 50
DEFAULT_THRESHOLD = 0.9


def word_count_check(utterance: Utterance, limit: int = WORD_LIMIT) -> str | None:
    """Return ``WordLimitExceeded`` when the text is not under ``limit`` words."""
    return WORD_LIMIT_EXCEEDED if utterance.word_count >= limit else None


def run_dialogue(
    config: DebateConfig,
    provider_p1: Provider,
    provider_p2: Provider,
    rules: SanitizeRules = SanitizeRules(),
    *,
    created_at: str,
    templates: TemplateSet | None = None,
    similarity_threshold: float | None = DEFAULT_THRESHOLD,
    stopwords: Iterable[str] | None = None,
) -> Discourse:
    """Alternate P1/P2 turns, threading each clean utterance into the next prompt.

    A provider failure ends the discourse early and is stored on the record;
    it is never raised.
    """
    did = config.discourse_id
    providers = {Speaker.P1: provider_p1, Speaker.P2: provider_p2}
    systems = {s: render_debater_system_prompt(config.topic, config.profile(s), templates) for s in Speaker}
    utterances: list[Utterance] = []
    failure = None
    previous: str | None = None
    for k in range(2 * config.turns_per_participant):
        speaker = Speaker.for_turn(k)
        provider = providers[speaker]
        user = render_debater_user_prompt(previous, templates)
        history = _history(utterances, speaker, templates) if provider.config.history else ()
        try:
            raw = provider.complete(systems[speaker], user, params=config.generation,
                                    key=(did, str(k)), history=history)
        except ProviderError as e:
            log.warning("%s: turn %d failed on %s: %s", did, k, provider.id, e)
            failure = ProviderFailure(turn=k, kind=e.kind, message=str(e))
            break
        cleaned = sanitize_utterance(raw, rules, (systems[speaker], user))
        violations = [EMPTY_AFTER_SANITIZE] if cleaned.empty else []
        u = Utterance(k, speaker, raw, cleaned.text, removed=cleaned.removed)
        v = word_count_check(u)
        if v:
            violations.append(v)
        utterances.append(Utterance(k, speaker, raw, cleaned.text, tuple(violations), cleaned.removed))
        previous = cleaned.text

    d = Discourse(
        id=did,
        config=config,
        utterances=tuple(utterances),
        created_at=created_at,
        provider_ids={"P1": provider_p1.id, "P2": provider_p2.id},
        failure=failure,
    )
    if similarity_threshold is not None:
        d = _with_report(d, similarity_screen(d, similarity_threshold, stopwords))
    return d


def _history(utterances: Sequence[Utterance], speaker: Speaker, templates) -> list[dict[str, str]]:
    # prior turns from the speaker's side: own turns as assistant, the other's as user
    msgs = []
    prev = None
    for u in utterances[:-1]:
        if u.speaker is speaker:
            msgs.append({"role": "user", "content": render_debater_user_prompt(prev, templates)})
            msgs.append({"role": "assistant", "content": u.clean_text})
        prev = u.clean_text
    return msgs


def _with_report(d: Discourse, report: SimilarityReport) -> Discourse:
    return Discourse(d.id, d.config, d.utterances, d.created_at, d.provider_ids, report, d.failure)


# --- similarity -------------------------------------------------------------

_TOKEN = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = (resources.files("dyadtraits") / "data" / "stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.split() if w.strip() and not w.startswith("#"))


def term_counts(text: str, stopwords: Iterable[str]) -> Counter[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return Counter(t for t in _TOKEN.findall(text.lower()) if t not in stop)


def cosine(a: Counter[str], b: Counter[str]) -> float:
    dot = sum(c * b[t] for t, c in a.items() if t in b)
    na = sum(c * c for c in a.values())
    nb = sum(c * c for c in b.values())
    if not na or not nb:
        return 0.0
    # integer products keep the score exactly symmetric
    return min(1.0, dot / math.sqrt(na * nb))


def text_similarity(x: str, y: str, stopwords: Iterable[str]) -> float:
    a, b = term_counts(x, stopwords), term_counts(y, stopwords)
    if not a and not b:
        # nothing but stopwords or punctuation on both sides
        same = " ".join(x.lower().split())
        return 1.0 if same and same == " ".join(y.lower().split()) else 0.0
    return cosine(a, b)


def similarity_screen(
    discourse: Discourse | Sequence[str],
    threshold: float = DEFAULT_THRESHOLD,
    stopwords: Iterable[str] | None = None,
) -> SimilarityReport:
    """TF-cosine over every utterance pair ``i < j``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    texts = [u.clean_text for u in discourse.utterances] if isinstance(discourse, Discourse) else list(discourse)
    stop = load_stopwords() if stopwords is None else frozenset(stopwords)
    scores = {(i, j): text_similarity(texts[i], texts[j], stop) for i, j in combinations(range(len(texts)), 2)}
    return SimilarityReport(scores, threshold)
