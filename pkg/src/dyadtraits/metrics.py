"""Trait-adherence metrics: HTA/LTA, Fleiss' kappa, lexicon alignment, corpus statistics."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import TRAITS, Discourse, Speaker, TraitLevel, TraitName, TraitProfile
from .judging import JudgeVerdict

# --- ground truth -----------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    pairing_label: str
    item_key: tuple[str, str]
    profiles: Mapping[Speaker, TraitProfile]


def assignments_from_discourses(discourses: Iterable[Discourse]) -> dict[str, Assignment]:
    return {
        d.id: Assignment(
            d.config.pairing_label,
            d.config.item_key,
            {Speaker.P1: d.config.profile_p1, Speaker.P2: d.config.profile_p2},
        )
        for d in discourses
    }


class JoinMiss(KeyError):
    def __init__(self, discourse_id: str):
        self.discourse_id = discourse_id
        super().__init__(f"verdict references unknown discourse {discourse_id!r}")


# --- HTA / LTA --------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionTally:
    judge_id: str
    pairing_label: str
    participant: Speaker
    trait: TraitName
    high_correct: int = 0
    high_total: int = 0
    low_correct: int = 0
    low_total: int = 0
    invalid_excluded: int = 0

    def __post_init__(self):
        if not (0 <= self.high_correct <= self.high_total and 0 <= self.low_correct <= self.low_total):
            raise ValueError(f"inconsistent tally counts: {self}")

    @property
    def scope(self) -> tuple[str, str, str, str]:
        return (self.judge_id, self.pairing_label, self.participant.value, self.trait.value)

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.high_correct, self.high_total, self.low_correct, self.low_total)


def confusion_tally(
    assignments: Mapping[str, Assignment],
    verdicts: Iterable[JudgeVerdict],
    *,
    judges: Iterable[str] | None = None,
    pairings: Iterable[str] | None = None,
    participants: Iterable[Speaker] | None = None,
) -> list[ConfusionTally]:
    """Count correct/total per assigned level for every (judge, pairing, participant, trait) cell.

    Invalid verdicts are skipped and counted in ``invalid_excluded``.
    """
    keep_j = set(judges) if judges is not None else None
    keep_p = set(pairings) if pairings is not None else None
    keep_s = set(participants) if participants is not None else None
    cells: dict[tuple, list[int]] = {}
    for v in verdicts:
        a = assignments.get(v.discourse_id)
        if a is None:
            raise JoinMiss(v.discourse_id)
        if (keep_j is not None and v.judge_id not in keep_j) or (keep_p is not None and a.pairing_label not in keep_p) \
                or (keep_s is not None and v.participant not in keep_s):
            continue
        truth = a.profiles[v.participant]
        for t in TRAITS:
            c = cells.setdefault((v.judge_id, a.pairing_label, v.participant, t), [0, 0, 0, 0, 0])
            if not v.valid:
                c[4] += 1
                continue
            hit = v.predicted[t] is truth[t]
            if truth[t] is TraitLevel.HIGH:
                c[0] += hit
                c[1] += 1
            else:
                c[2] += hit
                c[3] += 1
    return [
        ConfusionTally(j, p, s, t, *c)
        for (j, p, s, t), c in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value,
                                                                      TRAITS.index(kv[0][3])))
    ]


def classification_accuracy(tally: ConfusionTally) -> tuple[float | None, float | None]:
    """(HTA, LTA); ``None`` where the class has no cases."""
    hta = tally.high_correct / tally.high_total if tally.high_total else None
    lta = tally.low_correct / tally.low_total if tally.low_total else None
    return hta, lta


def level_precision_recall(tally: ConfusionTally) -> dict[str, float | None]:
    """Per-level precision and recall; recall equals HTA/LTA."""
    pred_high = tally.high_correct + (tally.low_total - tally.low_correct)
    pred_low = tally.low_correct + (tally.high_total - tally.high_correct)
    hta, lta = classification_accuracy(tally)
    return {
        "precision_high": tally.high_correct / pred_high if pred_high else None,
        "recall_high": hta,
        "precision_low": tally.low_correct / pred_low if pred_low else None,
        "recall_low": lta,
    }


# --- Fleiss' kappa ----------------------------------------------------------

CATEGORIES = (TraitLevel.HIGH, TraitLevel.LOW)


class NoRowsIncluded(ValueError):
    pass


class RaterCountMismatch(ValueError):
    def __init__(self, row: int, total: int, n: int):
        self.row = row
        super().__init__(f"row {row} sums to {total}, expected {n} raters")


class TooFewRaters(ValueError):
    pass


@dataclass(frozen=True)
class RatingMatrix:
    trait: TraitName
    participant: Speaker
    items: tuple[tuple[str, str], ...]
    counts: tuple[tuple[int, int], ...]  # (High, Low) per row
    n: int
    excluded: tuple[tuple[tuple[str, str], str], ...] = ()
    pairing_label: str | None = None

    @property
    def N(self) -> int:
        return len(self.counts)

    @property
    def excluded_rows(self) -> int:
        return len(self.excluded)


def build_rating_matrix(
    verdicts: Iterable[JudgeVerdict],
    trait: TraitName,
    participant: Speaker,
    required_judges: Iterable[str],
    items: Mapping[str, tuple[str, str]],
    pairing_label: str | None = None,
) -> RatingMatrix:
    """One row per item with High/Low vote counts over ``required_judges``.

    ``items`` maps discourse id to its (topic_id, combo_id) key. A row missing
    a valid verdict from any required judge is dropped (listwise deletion).
    """
    required = sorted(set(required_judges))
    if not required:
        raise ValueError("no required judges")
    by_key: dict[tuple[str, str], JudgeVerdict] = {}
    for v in verdicts:
        if v.participant is participant and v.discourse_id in items:
            by_key[(v.judge_id, v.discourse_id)] = v
    rows, keys, excluded = [], [], []
    for did in sorted(items, key=lambda d: (items[d], d)):
        item = items[did]
        votes = []
        reason = None
        for j in required:
            v = by_key.get((j, did))
            if v is None:
                reason = f"missing:{j}"
                break
            if not v.valid:
                reason = f"invalid:{j}"
                break
            votes.append(v.predicted[trait])
        if reason:
            excluded.append((item, reason))
            continue
        keys.append(item)
        rows.append((votes.count(TraitLevel.HIGH), votes.count(TraitLevel.LOW)))
    if not rows:
        raise NoRowsIncluded(f"every row excluded for {trait.value}/{participant.value}")
    return RatingMatrix(trait, participant, tuple(keys), tuple(rows), len(required), tuple(excluded), pairing_label)


def agreement_band(kappa: float | None) -> str:
    if kappa is None:
        return "undefined"
    if kappa <= 0:
        return "poor"
    if kappa <= 0.20:
        return "slight"
    if kappa <= 0.40:
        return "fair"
    if kappa <= 0.60:
        return "moderate"
    if kappa <= 0.80:
        return "substantial"
    return "almost-perfect"


@dataclass(frozen=True)
class KappaResult:
    kappa: float | None
    N: int
    n: int
    degenerate: bool = False
    trait: TraitName | None = None
    participant: Speaker | None = None
    pairing_label: str | None = None
    excluded_rows: int = 0

    @property
    def band(self) -> str:
        return agreement_band(self.kappa)


def fleiss_kappa_table(table: Sequence[Sequence[int]], n: int | None = None) -> tuple[float | None, bool]:
    """Fleiss' kappa of an N x k count table. Returns ``(kappa, degenerate)``.

    When every vote lands in a single category the chance agreement is 1;
    kappa is then reported as 1.0 (rows are necessarily unanimous) and the
    result is flagged degenerate.
    """
    if not table:
        raise NoRowsIncluded("empty rating table")
    if n is None:
        n = sum(table[0])
    if n < 2:
        raise TooFewRaters(f"need at least 2 raters per row, got {n}")
    k = len(table[0])
    for i, row in enumerate(table):
        if len(row) != k:
            raise ValueError(f"row {i} has {len(row)} categories, expected {k}")
        if any(c < 0 for c in row) or sum(row) != n:
            raise RaterCountMismatch(i, sum(row), n)
    N = len(table)
    p_bar = sum(sum(c * c for c in row) - n for row in table) / (N * n * (n - 1))
    shares = [sum(row[j] for row in table) / (N * n) for j in range(k)]
    p_e = sum(p * p for p in shares)
    if max(sum(row[j] for row in table) for j in range(k)) == N * n:
        return (1.0 if p_bar == 1 else None), True
    return (p_bar - p_e) / (1 - p_e), False


def fleiss_kappa(matrix: RatingMatrix) -> KappaResult:
    if matrix.n < 2:
        raise TooFewRaters(f"need at least 2 raters, got {matrix.n}")
    kappa, degenerate = fleiss_kappa_table(matrix.counts, matrix.n)
    return KappaResult(kappa, matrix.N, matrix.n, degenerate, matrix.trait, matrix.participant,
                       matrix.pairing_label, matrix.excluded_rows)


# --- text helpers -----------------------------------------------------------

_PUNCT_EDGE = re.compile(r"^[^\w]+|[^\w]+$")


def words(text: str) -> list[str]:
    """Whitespace tokens with edge punctuation trimmed; punctuation-only tokens dropped."""
    out = []
    for tok in text.split():
        w = _PUNCT_EDGE.sub("", tok)
        if w:
            out.append(w)
    return out


# --- lexicon alignment ------------------------------------------------------


class EmptyLexicon(ValueError):
    pass


@dataclass(frozen=True)
class TraitLexicon:
    categories: Mapping[str, frozenset[str]]
    markers: Mapping[TraitName, tuple[tuple[str, float], ...]]

    def __post_init__(self):
        for trait, ms in self.markers.items():
            for cat, w in ms:
                if cat not in self.categories:
                    raise ValueError(f"marker for {trait.value} names unknown category {cat!r}")
                if w == 0:
                    raise ValueError(f"marker weight for {trait.value}/{cat} must be nonzero")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TraitLexicon":
        cats = {
            name: frozenset(s.lower().rstrip("*") for s in stems if s.rstrip("*"))
            for name, stems in d.get("categories", {}).items()
        }
        markers = {
            TraitName(t): tuple((c, float(w)) for c, w in ms) for t, ms in d.get("markers", {}).items()
        }
        return cls(cats, markers)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TraitLexicon":
        if path is None:
            text = (resources.files("dyadtraits") / "data" / "demo_lexicon.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def negated(self) -> "TraitLexicon":
        return TraitLexicon(self.categories, {t: tuple((c, -w) for c, w in ms) for t, ms in self.markers.items()})


def category_counts(tokens: Sequence[str], lexicon: TraitLexicon) -> dict[str, int]:
    counts = {}
    for name, stems in lexicon.categories.items():
        counts[name] = sum(any(tok.startswith(s) for s in stems) for tok in tokens)
    return counts


def trait_score(tokens: Sequence[str], lexicon: TraitLexicon, trait: TraitName) -> float:
    """Weighted sum of category shares; > 0 points to High, < 0 to Low."""
    if not tokens:
        return 0.0
    counts = category_counts(tokens, lexicon)
    # exact shares so duplicating the text cannot move the score
    return float(sum(Fraction(w) * Fraction(counts[c], len(tokens)) for c, w in lexicon.markers.get(trait, ())))


@dataclass(frozen=True)
class AlignmentCell:
    pairing_label: str
    participant: Speaker
    trait: TraitName
    correct: int = 0
    scored: int = 0
    abstained: int = 0
    scored_trait: bool = True

    @property
    def total(self) -> int:
        return self.scored + self.abstained

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.scored if self.scored else None

    @property
    def abstention_rate(self) -> float | None:
        return self.abstained / self.total if self.total else None


def lexicon_alignment(discourses: Iterable[Discourse], lexicon: TraitLexicon) -> list[AlignmentCell]:
    """Per (pairing, participant, trait): how often the lexicon score points to the assigned level."""
    if not lexicon.categories or not any(lexicon.markers.values()):
        raise EmptyLexicon("lexicon has no categories or no markers")
    ds = list(discourses)
    if not ds:
        raise ValueError("no discourses to score")
    cells: dict[tuple[str, Speaker, TraitName], list[int]] = {}
    for d in ds:
        for s in Speaker:
            tokens = [w.lower() for w in words(" ".join(d.texts(s)))]
            truth = d.config.profile(s)
            for t in TRAITS:
                c = cells.setdefault((d.config.pairing_label, s, t), [0, 0, 0])
                if not lexicon.markers.get(t):
                    continue
                score = trait_score(tokens, lexicon, t)
                if score == 0:
                    c[2] += 1
                    continue
                predicted = TraitLevel.HIGH if score > 0 else TraitLevel.LOW
                c[0] += predicted is truth[t]
                c[1] += 1
    return [
        AlignmentCell(p, s, t, *c, scored_trait=bool(lexicon.markers.get(t)))
        for (p, s, t), c in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1].value, TRAITS.index(kv[0][2])))
    ]


# --- corpus statistics ------------------------------------------------------

DEFAULT_STANCE = ("is", "must", "should", "believe", "clearly", "argue", "cannot")
DEFAULT_CONNECTIVES = ("if", "then", "because", "therefore", "thus", "hence", "however")
DEFAULT_ABBREVIATIONS = ("e.g.", "i.e.", "etc.", "vs.")
_QUOTES = "\"'“”‘’«»"
_OPENERS = "([{" + _QUOTES
_CLOSERS = ")]}" + _QUOTES
# a terminator may be followed by closing quotes or brackets: He asked "why?" Then ...
_SENT_END = re.compile(r"[.!?]+[" + re.escape(_CLOSERS) + r"]*(?=\s|$)")


@dataclass(frozen=True)
class CorpusMarkers:
    stance: frozenset[str] = frozenset(DEFAULT_STANCE)
    connectives: frozenset[str] = frozenset(DEFAULT_CONNECTIVES)
    abbreviations: frozenset[str] = frozenset(DEFAULT_ABBREVIATIONS)

    @classmethod
    def from_files(cls, stance: str | Path | None = None, connectives: str | Path | None = None,
                   abbreviations: str | Path | None = None) -> "CorpusMarkers":
        def read(p, default):
            if p is None:
                return frozenset(default)
            return frozenset(w.strip().lower() for w in Path(p).read_text(encoding="utf-8").split() if w.strip())
        return cls(read(stance, DEFAULT_STANCE), read(connectives, DEFAULT_CONNECTIVES),
                   read(abbreviations, DEFAULT_ABBREVIATIONS))


def split_sentences(text: str, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS) -> list[str]:
    abbrevs = {a.lower() for a in abbreviations}
    out = []
    start = 0
    for m in _SENT_END.finditer(text):
        last = text[start:m.end()].split()
        if last and last[-1].lower().lstrip(_OPENERS).rstrip(_CLOSERS) in abbrevs:
            continue
        s = text[start:m.end()].strip()
        if s:
            out.append(s)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def _final_char(sentence: str) -> str:
    s = sentence.rstrip().rstrip(_CLOSERS)
    return s[-1] if s else ""


@dataclass(frozen=True)
class CorpusStats:
    total_sentences: int = 0
    total_words: int = 0
    assertions: int = 0
    questions: int = 0
    logical_structures: int = 0
    total_dialogues: int = 0
    total_utterances: int = 0

    @property
    def avg_words_per_sentence(self) -> float | None:
        return self.total_words / self.total_sentences if self.total_sentences else None

    @property
    def avg_utterance_length(self) -> float | None:
        return self.total_words / self.total_utterances if self.total_utterances else None

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["avg_words_per_sentence"] = self.avg_words_per_sentence
        d["avg_utterance_length"] = self.avg_utterance_length
        return d


def utterance_stats(text: str, markers: CorpusMarkers = CorpusMarkers()) -> CorpusStats:
    sentences = split_sentences(text, markers.abbreviations)
    questions = assertions = logical = 0
    for s in sentences:
        toks = {w.lower() for w in words(s)}
        end = _final_char(s)
        if end == "?":
            questions += 1
        elif end in ".!" and toks & markers.stance:
            assertions += 1
        if toks & markers.connectives:
            logical += 1
    return CorpusStats(len(sentences), len(words(text)), assertions, questions, logical, 0, 1)


def corpus_stats_for_texts(dialogues: Iterable[Sequence[str]], markers: CorpusMarkers = CorpusMarkers()) -> CorpusStats:
    total = CorpusStats()
    for utterances in dialogues:
        total = total + CorpusStats(total_dialogues=1)
        for u in utterances:
            total = total + utterance_stats(u, markers)
    return total


def corpus_stats(discourses: Iterable[Discourse], markers: CorpusMarkers = CorpusMarkers()) -> CorpusStats:
    return corpus_stats_for_texts(([u.clean_text for u in d.utterances] for d in discourses), markers)
