import json
from pathlib import Path

import pytest

from dyadtraits.core import Topic, parse_trait_profile
from dyadtraits.providers import ProviderConfig, ScriptedProvider

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
FIXTURES = HERE / "fixtures"

# five sample trait combinations, reused across the suite
SAMPLE_COMBOS = [
    {"Agreeableness": "High", "Openness": "Low", "Conscientiousness": "High", "Extraversion": "Low", "Neuroticism": "High"},
    {"Agreeableness": "Low", "Openness": "High", "Conscientiousness": "Low", "Extraversion": "High", "Neuroticism": "Low"},
    {"Agreeableness": "High", "Openness": "High", "Conscientiousness": "Low", "Extraversion": "High", "Neuroticism": "High"},
    {"Agreeableness": "Low", "Openness": "Low", "Conscientiousness": "High", "Extraversion": "Low", "Neuroticism": "Low"},
    {"Agreeableness": "High", "Openness": "High", "Conscientiousness": "High", "Extraversion": "Low", "Neuroticism": "Low"},
]


def scripted(pid, responses):
    return ScriptedProvider(ProviderConfig(id=pid, kind="scripted", responses=tuple(responses)))


@pytest.fixture
def nuclear():
    return Topic.from_text("Is the use of nuclear energy justified?")


@pytest.fixture
def combo1():
    return parse_trait_profile(SAMPLE_COMBOS[0])


@pytest.fixture
def combo2():
    return parse_trait_profile(SAMPLE_COMBOS[1])


def load_judge_fixture():
    with open(FIXTURES / "judge_responses.jsonl", encoding="utf-8") as f:
        return [json.loads(line) for line in f]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
