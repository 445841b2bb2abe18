import csv
import json
import socket
from fractions import Fraction

import pytest

from dyadtraits.cli import main
from dyadtraits.core import Speaker, TraitName, parse_trait_profile
from dyadtraits.demo import JudgeBehaviour, write_workspace
from dyadtraits.judging import JudgeVerdict, verdict_response_json
from dyadtraits.runs import load_discourses, read_jsonl

from conftest import SAMPLE_COMBOS
from oracles import fleiss_kappa_exact

PAIRS = [{"p1": SAMPLE_COMBOS[0], "p2": SAMPLE_COMBOS[1]}, {"p1": SAMPLE_COMBOS[2], "p2": SAMPLE_COMBOS[3]}]
TOPICS = ["Is the use of nuclear energy justified?", "Should governments impose strict regulations on AI?"]


def _generate(tmp_path, **kw):
    cfg, judges = write_workspace(tmp_path / "ws", kw.pop("topics", TOPICS), kw.pop("combos", PAIRS), **kw)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "runs")]) == 0
    return tmp_path / "runs" / "demo", judges


def _csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_generate_two_by_two(tmp_path):
    run, _ = _generate(tmp_path)
    ds = load_discourses(run)
    assert len(ds) == 4 and all(len(d.utterances) == 8 for d in ds)
    m = json.loads((run / "manifest.json").read_text())
    assert (m["discourse_count"], m["topic_count"], m["combo_count"], m["truncated_count"]) == (4, 2, 2, 0)


def test_generate_rerun_is_byte_identical(tmp_path):
    run, _ = _generate(tmp_path / "a")
    again, _ = _generate(tmp_path / "b")
    assert (run / "discourses.jsonl").read_bytes() == (again / "discourses.jsonl").read_bytes()


def _closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_unreachable_endpoint_truncates_everything(tmp_path, caplog):
    ws = tmp_path / "ws"
    ws.mkdir()
    cfg = ws / "run.toml"
    cfg.write_text(f"""[run]
id = "down"
[topics]
items = ["Is X good?", "Is Y bad?"]
[traits]
policy = "mirror"
combos = [{json.dumps(SAMPLE_COMBOS[0]).replace('":', '" =')}]
[debaters]
p1 = "remote"
p2 = "remote"
[providers.remote]
kind = "http"
endpoint = "http://127.0.0.1:{_closed_port()}/v1"
model = "m"
timeout = 2
""")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "runs")]) == 0
    run = tmp_path / "runs" / "down"
    ds = load_discourses(run)
    assert ds and all(d.truncated and d.failure.turn == 0 and not d.utterances for d in ds)
    m = json.loads((run / "manifest.json").read_text())
    assert m["truncated_count"] == m["discourse_count"] == 2
    assert "truncated" in caplog.text


def test_judge_sixteen_records_and_idempotent_rejudge(tmp_path):
    run, judges = _generate(tmp_path)
    assert main(["judge", "--run", str(run), "--judges", str(judges)]) == 0
    first = (run / "verdicts.jsonl").read_bytes()
    assert len(read_jsonl(run / "verdicts.jsonl")) == 16
    m = json.loads((run / "manifest.json").read_text())
    assert set(m["judges"]) == {"judge-a", "judge-b"} and m["verdict_count"] == 16

    # second pass: every key already exists, so no provider call can happen
    for script in ("judge-a.jsonl", "judge-b.jsonl"):
        (judges.parent / script).write_text("")
    assert main(["judge", "--run", str(run), "--judges", str(judges)]) == 0
    assert (run / "verdicts.jsonl").read_bytes() == first

    # --force re-asks, and the emptied scripts now yield transport failures
    assert main(["judge", "--run", str(run), "--judges", str(judges), "--force"]) == 0
    assert all(r["status"] == "Invalid" for r in read_jsonl(run / "verdicts.jsonl"))


def test_fully_invalid_judge(tmp_path, caplog):
    run, judges = _generate(tmp_path, judges={"broken": JudgeBehaviour(invalid_rate=1.0)})
    assert main(["judge", "--run", str(run), "--judges", str(judges)]) == 0
    recs = read_jsonl(run / "verdicts.jsonl")
    assert len(recs) == 8 and not any(r["status"] == "Valid" for r in recs)
    assert all(r["attempts"] == 2 and r["reason"]["code"] != "Transport" for r in recs)
    assert json.loads((run / "manifest.json").read_text())["judges"]["broken"]["invalid_rate"] == 1.0
    assert "invalid rate" in caplog.text
    # metrics still run and report the exclusions
    assert main(["metrics", "--run", str(run), "--hta-lta"]) == 0
    rows = _csv(run / "reports" / "hta_lta.csv")
    assert rows and all(r["HTA"] == "" and r["LTA"] == "" and r["invalid_excluded"] == "4" for r in rows)


def test_kappa_report_matches_oracle(tmp_path):
    run, _ = _generate(tmp_path, topics=TOPICS[:1])
    ds = load_discourses(run)
    assert len(ds) == 2
    # Extraversion for P1: item 1 split (High, Low), item 2 unanimous High -> [[1,1],[2,0]]
    votes = {("a", 0): "High", ("b", 0): "Low", ("a", 1): "High", ("b", 1): "High"}
    recs = []
    for (j, i), level in votes.items():
        d = ds[i]
        for s in Speaker:
            prof = d.config.profile(s).to_dict()
            if s is Speaker.P1:
                prof[TraitName.EXTRAVERSION.value] = level
            recs.append(JudgeVerdict(j, d.id, s, parse_trait_profile(prof), verdict_response_json(
                parse_trait_profile(prof))).to_dict())
    (run / "verdicts.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert main(["metrics", "--run", str(run), "--kappa"]) == 0
    row = next(r for r in _csv(run / "reports" / "kappa.csv")
               if r["trait"] == "Extraversion" and r["participant"] == "P1")
    assert fleiss_kappa_exact([[1, 1], [2, 0]]) == Fraction(-1, 3)
    assert float(row["kappa"]) == pytest.approx(-1 / 3, abs=1e-12)
    assert (row["N"], row["n"], row["band"], row["excluded_rows"]) == ("2", "2", "poor", "0")


def test_corpus_stats_on_empty_run(tmp_path):
    run = tmp_path / "empty"
    run.mkdir()
    (run / "discourses.jsonl").write_text("")
    assert main(["metrics", "--run", str(run), "--corpus-stats"]) == 0
    data = json.loads((run / "reports" / "corpus_stats.json").read_text())
    assert data["ALL"]["total_words"] == 0 and data["ALL"]["total_sentences"] == 0
    assert data["ALL"]["avg_words_per_sentence"] is None


def test_alignment_without_lexicon_is_missing_input(tmp_path, capsys):
    run, _ = _generate(tmp_path)
    assert main(["metrics", "--run", str(run), "--alignment"]) == 3
    assert "MissingInput(alignment)" in capsys.readouterr().err


def test_alignment_with_demo_lexicon(tmp_path):
    from importlib import resources
    run, _ = _generate(tmp_path)
    lex = resources.files("dyadtraits") / "data" / "demo_lexicon.json"
    assert main(["metrics", "--run", str(run), "--alignment", "--lexicon", str(lex)]) == 0
    rows = _csv(run / "reports" / "alignment.csv")
    assert len(rows) == 2 * 5
    assert all(int(r["scored"]) + int(r["abstained"]) == 4 for r in rows)


def test_metrics_before_judge_is_missing_input(tmp_path, capsys):
    run, _ = _generate(tmp_path)
    assert main(["metrics", "--run", str(run), "--hta-lta"]) == 3
    assert "MissingInput(hta-lta)" in capsys.readouterr().err


def test_missing_run_and_bad_config(tmp_path):
    assert main(["judge", "--run", str(tmp_path / "nope"), "--judges", "x.toml"]) == 3
    assert main(["validate", "--run", str(tmp_path / "nope")]) == 3
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\n")
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text('[providers.x]\nkind = "http"\napi_key = "sk-123"\n')
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["generate", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_validate_flags_duplicates_and_samples(tmp_path):
    run, _ = _generate(tmp_path)
    lines = (run / "discourses.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    for u in rec["utterances"][1:]:
        u["clean_text"] = u["raw_text"] = rec["utterances"][0]["clean_text"]
        u.pop("word_count", None)
    lines[0] = json.dumps(rec)
    (run / "discourses.jsonl").write_text("\n".join(lines) + "\n")

    assert main(["validate", "--run", str(run), "--seed", "7"]) == 0
    rep = json.loads((run / "reports" / "validation.json").read_text())
    assert rep["flagged"] == [rec["id"]] and rep["degenerate"] == [rec["id"]]
    assert len(rep["review_sample"]) == 4  # min(15, 4)
    sample = (run / "review_sample.txt").read_bytes()
    assert main(["validate", "--run", str(run), "--seed", "7"]) == 0
    assert (run / "review_sample.txt").read_bytes() == sample
    assert json.loads((run / "manifest.json").read_text())["validation"]["flagged_count"] == 1


def test_sample_size_clamped_to_fifteen(tmp_path):
    run, _ = _generate(tmp_path, topics=[f"Is topic {i} sound?" for i in range(9)], turns_per_participant=1)
    assert main(["validate", "--run", str(run), "--seed", "1"]) == 0
    assert len(json.loads((run / "reports" / "validation.json").read_text())["review_sample"]) == 15


def test_report(tmp_path, capsys):
    run, judges = _generate(tmp_path)
    assert main(["judge", "--run", str(run), "--judges", str(judges)]) == 0
    assert main(["metrics", "--run", str(run)]) == 0
    capsys.readouterr()
    assert main(["report", "--run", str(run)]) == 0
    out = capsys.readouterr().out
    assert "## Fleiss' kappa" in out and "## HTA / LTA by judge" in out
    assert (run / "reports" / "summary.md").read_text() == out
