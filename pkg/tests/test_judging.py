import json

import pytest
from hypothesis import given, settings, strategies as st

from dyadtraits.core import TRAITS, DebateConfig, Discourse, Speaker, TraitLevel, TraitProfile, Utterance
from dyadtraits.judging import (
    ECHOED_TEMPLATE,
    INVALID_LEVEL,
    MISSING_KEY,
    NO_JSON,
    TRANSPORT,
    UNBALANCED,
    JudgeVerdict,
    invalid_rate,
    invalid_summary,
    judge_discourse,
    parse_verdict,
    verdict_response_json,
)
from dyadtraits.providers import ProviderConfig, ReplayProvider

from conftest import SAMPLE_COMBOS, load_judge_fixture, scripted

SAMPLE = json.dumps({"predicted_bfi": SAMPLE_COMBOS[0]})
profiles = st.lists(st.sampled_from(list(TraitLevel)), min_size=5, max_size=5).map(lambda l: TraitProfile(tuple(l)))


def test_clean_schema_object(combo1):
    v = parse_verdict(SAMPLE)
    assert v.valid and v.predicted == combo1


def test_fenced_with_leading_prose(combo1):
    raw = "Here is my analysis:\n```json\n" + SAMPLE + "\n```"
    assert parse_verdict(raw) == parse_verdict(SAMPLE)


def test_echoed_placeholder():
    raw = json.dumps({"predicted_bfi": {t.value: "High/Low" for t in TRAITS}})
    assert parse_verdict(raw).reason.code == ECHOED_TEMPLATE


@pytest.mark.parametrize("raw,code", [
    ("no json here", NO_JSON),
    ('{"predicted_bfi": {"Agreeableness": "High"', UNBALANCED),
    ('{"something": 1}', MISSING_KEY),
    (json.dumps({"predicted_bfi": dict(SAMPLE_COMBOS[0], Openness="Medium")}), INVALID_LEVEL),
])
def test_specific_reasons(raw, code):
    assert parse_verdict(raw).reason.code == code


def test_missing_key_names_path():
    bfi = dict(SAMPLE_COMBOS[0])
    del bfi["Neuroticism"]
    r = parse_verdict(json.dumps({"predicted_bfi": bfi})).reason
    assert r.code == MISSING_KEY and r.detail == "predicted_bfi.Neuroticism"


def test_brace_in_prose_before_object(combo1):
    raw = "Scores {approximate}: " + SAMPLE
    assert parse_verdict(raw).predicted == combo1


def test_consistency_is_kept_but_optional(combo1):
    obj = {"predicted_bfi": SAMPLE_COMBOS[0], "consistency": {"Openness": "yes"}}
    v = parse_verdict(json.dumps(obj))
    assert v.predicted == combo1 and v.consistency == {"Openness": "Yes"}
    assert parse_verdict(json.dumps(dict(obj, consistency="n/a"))).consistency is None


def test_fixture_corpus_matches_design():
    items = load_judge_fixture()
    for it in items:
        v = parse_verdict(it["response"])
        assert ("Valid" if v.valid else "Invalid") == it["expected_status"], it["kind"]
        if v.valid:
            assert v.predicted.to_dict() == it["expected_profile"]
        else:
            assert v.reason.code == it["expected_code"], it


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_never_raises_on_bytes(data):
    v = parse_verdict(data.decode("utf-8", errors="replace"))
    assert v.valid or v.reason.code


@settings(max_examples=300)
@given(st.lists(st.sampled_from(list('{}[]":,\\ ') + ["High", "Low", "predicted_bfi", "<think>", "```"]),
                max_size=60).map("".join))
def test_never_raises_on_jsonish_text(raw):
    v = parse_verdict(raw)
    assert (v.predicted is None) == (v.reason is not None)


@given(profiles)
def test_valid_verdicts_round_trip(profile):
    assert parse_verdict(verdict_response_json(profile)).predicted == profile
    v = JudgeVerdict("j", "d", Speaker.P1, profile, verdict_response_json(profile))
    assert JudgeVerdict.from_dict(json.loads(json.dumps(v.to_dict()))) == v


def _discourse(nuclear, combo1, combo2):
    cfg = DebateConfig(nuclear, combo1, combo2, turns_per_participant=2, pairing_label="x_vs_y")
    us = tuple(Utterance(i, Speaker.for_turn(i), t, t) for i, t in enumerate(["A1.", "B1.", "A2.", "B2."]))
    return Discourse(cfg.discourse_id, cfg, us, "t", {"P1": "gpt-4o", "P2": "llama"})


def test_judge_discourse_two_valid(nuclear, combo1, combo2):
    d = _discourse(nuclear, combo1, combo2)
    j = scripted("judge", [verdict_response_json(combo1), verdict_response_json(combo2)])
    v1, v2 = judge_discourse(j, d)
    assert (v1.judge_id, v1.discourse_id, v1.participant) == ("judge", d.id, Speaker.P1)
    assert v1.predicted == combo1 and v2.predicted == combo2 and v2.participant is Speaker.P2
    # anonymity: only labels and participant text reach the judge
    assert j.calls[0]["user"] == "Analyze Person One's text:\nA1.\nA2."
    assert j.calls[1]["user"] == "Analyze Person Two's text:\nB1.\nB2."
    for c in j.calls:
        for leak in ("gpt-4o", "llama", "x_vs_y", "High", "Low"):
            assert leak not in c["user"]


def test_participants_judged_independently(nuclear, combo1, combo2):
    d = _discourse(nuclear, combo1, combo2)
    j = scripted("judge", [SAMPLE, "I refuse.", "Still no."])
    v1, v2 = judge_discourse(j, d)
    assert v1.valid and not v2.valid and v2.reason.code == NO_JSON and v2.attempts == 2


def test_retry_once_on_invalid(nuclear, combo1, combo2):
    d = _discourse(nuclear, combo1, combo2)
    j = scripted("judge", ["garbage", SAMPLE, SAMPLE])
    v1, v2 = judge_discourse(j, d)
    assert v1.valid and v1.attempts == 2 and v2.attempts == 1


def test_transport_failure_is_recorded(nuclear, combo1, combo2, tmp_path):
    d = _discourse(nuclear, combo1, combo2)
    f = tmp_path / "r.jsonl"
    f.write_text(json.dumps({"discourse_id": d.id, "turn": "P1", "response": SAMPLE}) + "\n", encoding="utf-8")
    j = ReplayProvider(ProviderConfig(id="rj", kind="replay", transcript=str(f)))
    v1, v2 = judge_discourse(j, d)
    assert v1.valid and v2.reason.code == TRANSPORT


def test_invalid_rate_over_ten_responses(nuclear, combo1, combo2):
    # 10 responses, 4 malformed; retries disabled so each response is one verdict
    good = verdict_response_json(combo1)
    responses = [good, "nope", good, good, '{"predicted_bfi": {', good,
                 json.dumps({"predicted_bfi": {t.value: "High/Low" for t in TRAITS}}), good, good, "{}"]
    d = _discourse(nuclear, combo1, combo2)
    j = scripted("deepseek", responses)
    verdicts = [v for _ in range(5) for v in judge_discourse(j, d, retries_on_invalid=0)]
    assert invalid_rate(verdicts) == 0.4
    assert invalid_summary(verdicts)["deepseek"]["invalid_rate"] == 0.4
