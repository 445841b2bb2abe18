"""Run configuration, run-directory persistence and the pipeline commands.

Layout of one run::

    <runs root>/<run_id>/
        manifest.json
        discourses.jsonl
        verdicts.jsonl
        review_sample.txt
        reports/
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import random
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .core import (
    TRAITS,
    DebateConfig,
    Discourse,
    GenerationParams,
    PairingPolicy,
    Speaker,
    TraitCombo,
    combos_from_json,
    load_combos,
    load_experiment_matrix,
    load_topics,
    topics_from_strings,
)
from .dialogue import DEFAULT_THRESHOLD, load_stopwords, run_dialogue, similarity_screen
from .judging import JudgeVerdict, invalid_summary, judge_participant
from .metrics import (
    CorpusMarkers,
    CorpusStats,
    NoRowsIncluded,
    TooFewRaters,
    TraitLexicon,
    assignments_from_discourses,
    build_rating_matrix,
    classification_accuracy,
    confusion_tally,
    corpus_stats,
    fleiss_kappa,
    level_precision_recall,
    lexicon_alignment,
)
from .prompting import TemplateSet
from .providers import Provider, ProviderConfig, ProviderConfigError, SanitizeRules, make_provider

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DISCOURSES = "discourses.jsonl"
VERDICTS = "verdicts.jsonl"
REVIEW_SAMPLE = "review_sample.txt"
REPORTS = "reports"


class ConfigError(ValueError):
    """Bad or inconsistent configuration (exit code 2)."""


class MissingInput(FileNotFoundError):
    """A phase's inputs are absent (exit code 3)."""

    def __init__(self, family: str, hint: str):
        self.family = family
        super().__init__(f"MissingInput({family}): {hint}")


# --- persistence ------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(records: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _cell(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    return v


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def load_discourses(run_dir: Path) -> list[Discourse]:
    path = run_dir / DISCOURSES
    if not path.exists():
        raise MissingInput("discourses", f"{path} not found; run `generate` first")
    return [Discourse.from_dict(r) for r in read_jsonl(path)]


def load_verdicts(run_dir: Path, required: bool = True) -> list[JudgeVerdict]:
    path = run_dir / VERDICTS
    if not path.exists():
        if required:
            raise MissingInput("verdicts", f"{path} not found; run `judge` first")
        return []
    return [JudgeVerdict.from_dict(r) for r in read_jsonl(path)]


def read_manifest(run_dir: Path) -> dict[str, Any]:
    path = run_dir / MANIFEST
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


# --- configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    topics: list
    combos: list[TraitCombo]
    debater_p1: ProviderConfig
    debater_p2: ProviderConfig
    policy: PairingPolicy = PairingPolicy.PAIRS
    run_id: str | None = None
    timestamp: str | None = None
    workers: int = 4
    turns_per_participant: int = 4
    generation: GenerationParams = field(default_factory=GenerationParams)
    pairing_label: str | None = None
    sanitize: SanitizeRules = field(default_factory=SanitizeRules)
    similarity_threshold: float = DEFAULT_THRESHOLD
    stopwords: str | None = None
    templates: str | None = None
    judges: list[ProviderConfig] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.pairing_label or f"{self.debater_p1.id}_vs_{self.debater_p2.id}"

    def matrix(self) -> list[DebateConfig]:
        return load_experiment_matrix(
            self.topics, self.combos, self.policy,
            turns_per_participant=self.turns_per_participant,
            generation=self.generation,
            pairing_label=self.label,
        )

    def config_hash(self) -> str:
        desc = {
            "topics": [[t.id, t.text] for t in self.topics],
            "combos": [[c.id, c.p1.to_dict(), c.p2.to_dict() if c.p2 else None] for c in self.combos],
            "policy": self.policy.value,
            "turns_per_participant": self.turns_per_participant,
            "generation": self.generation.to_dict(),
            "pairing_label": self.label,
            "debaters": [self.debater_p1.describe(), self.debater_p2.describe()],
            "sanitize": [self.sanitize.strip_inline_tags, self.sanitize.strip_prompt_echo,
                         self.sanitize.trim_whitespace, list(self.sanitize.drop_role_prefixes)],
            "similarity_threshold": self.similarity_threshold,
        }
        return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()


def _read_toml(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _providers(table: Mapping[str, Any], base: Path, gen: GenerationParams) -> dict[str, ProviderConfig]:
    out = {}
    for pid, spec in table.items():
        if not isinstance(spec, Mapping):
            raise ConfigError(f"provider {pid} must be a table")
        try:
            out[pid] = ProviderConfig.from_mapping(pid, spec, base, gen)
        except (ProviderConfigError, ValueError) as e:
            raise ConfigError(str(e)) from None
    return out


def load_judges(path: str | Path) -> list[ProviderConfig]:
    """``[judges.<id>]`` tables, each a provider definition (temperature defaults to 0)."""
    path = Path(path)
    data = _read_toml(path)
    table = data.get("judges")
    if not isinstance(table, Mapping) or not table:
        raise ConfigError(f"{path}: no [judges.<id>] tables")
    return list(_providers(table, path.parent, GenerationParams(temperature=0.0)).values())


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    data = _read_toml(path)
    base = path.parent
    run = data.get("run", {})
    try:
        gen = GenerationParams.from_dict(data.get("generation", {}))
        topics_t = data.get("topics", {})
        if "file" in topics_t:
            topics = load_topics(base / topics_t["file"])
        else:
            topics = topics_from_strings(topics_t.get("items", []))
        traits_t = data.get("traits", {})
        if "file" in traits_t:
            combos = load_combos(base / traits_t["file"])
        else:
            combos = combos_from_json(list(traits_t.get("combos", [])))
        policy = PairingPolicy(traits_t.get("policy", "pairs"))
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"{path}: {e}") from None

    providers = _providers(data.get("providers", {}), base, gen)
    debaters = data.get("debaters", {})
    try:
        p1, p2 = providers[debaters["p1"]], providers[debaters["p2"]]
    except KeyError as e:
        raise ConfigError(f"{path}: [debaters] p1/p2 must name a [providers.<id>] table ({e})") from None
    judges_t = data.get("judges", {})
    judges = list(_providers(judges_t, base, GenerationParams(temperature=0.0)).values()) if judges_t else []

    san = data.get("sanitize", {})
    metrics = data.get("metrics", {})
    try:
        cfg = RunConfig(
            topics=topics,
            combos=combos,
            debater_p1=p1,
            debater_p2=p2,
            policy=policy,
            run_id=run.get("id"),
            timestamp=run.get("timestamp"),
            workers=int(run.get("workers", 4)),
            turns_per_participant=int(run.get("turns_per_participant", 4)),
            generation=gen,
            pairing_label=run.get("pairing_label"),
            sanitize=SanitizeRules(
                strip_inline_tags=bool(san.get("strip_inline_tags", True)),
                strip_prompt_echo=bool(san.get("strip_prompt_echo", True)),
                trim_whitespace=bool(san.get("trim_whitespace", True)),
                drop_role_prefixes=tuple(san.get("drop_role_prefixes", ("Assistant:",))),
            ),
            similarity_threshold=float(metrics.get("similarity_threshold", DEFAULT_THRESHOLD)),
            stopwords=str(base / metrics["stopwords"]) if "stopwords" in metrics else None,
            templates=str(base / run["templates"]) if "templates" in run else None,
            judges=judges,
        )
        cfg.matrix()  # validates topics/combos/policy up front
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    if cfg.workers < 1:
        raise ConfigError(f"{path}: workers must be >= 1")
    return cfg


def _build(cfg: ProviderConfig) -> Provider:
    try:
        return make_provider(cfg)
    except (OSError, ValueError) as e:
        raise ConfigError(f"provider {cfg.id}: {e}") from None


def _workers(requested: int, providers: Sequence[Provider]) -> int:
    if requested > 1 and any(p.order_sensitive for p in providers):
        log.warning("unkeyed scripted responses depend on call order; running with 1 worker")
        return 1
    return requested


# --- generate ---------------------------------------------------------------


def _fixed_timestamp(cfg: RunConfig) -> str | None:
    # a pinned clock keeps discourses.jsonl byte-identical across reruns
    if cfg.timestamp:
        return str(cfg.timestamp)
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.fromtimestamp(int(epoch), timezone.utc).isoformat().replace("+00:00", "Z")
    return None


def cmd_generate(config_path: str | Path, out_root: str | Path, workers: int | None = None) -> Path:
    cfg = load_run_config(config_path)
    matrix = cfg.matrix()
    templates = TemplateSet.load(cfg.templates) if cfg.templates else None
    stop = load_stopwords(cfg.stopwords)
    chash = cfg.config_hash()
    run_id = cfg.run_id or f"run-{chash[:12]}"
    run_dir = Path(out_root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    stamp = _fixed_timestamp(cfg)

    p1 = _build(cfg.debater_p1)
    p2 = p1 if cfg.debater_p2 is cfg.debater_p1 else _build(cfg.debater_p2)
    n_workers = _workers(workers or cfg.workers, [p1, p2])

    def one(dc: DebateConfig) -> Discourse:
        return run_dialogue(dc, p1, p2, cfg.sanitize, created_at=stamp or _now(), templates=templates,
                            similarity_threshold=cfg.similarity_threshold, stopwords=stop)

    try:
        if n_workers == 1:
            discourses = [one(dc) for dc in matrix]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                discourses = list(pool.map(one, matrix))
    finally:
        p1.close()
        p2.close()

    atomic_write_text(run_dir / DISCOURSES, dumps_jsonl(d.to_dict() for d in discourses))
    truncated = [d.id for d in discourses if d.truncated]
    if truncated:
        log.warning("%d of %d discourses truncated by provider failures", len(truncated), len(discourses))
    manifest = {
        "run_id": run_id,
        "tool_version": __version__,
        "config_hash": chash,
        "pairing_label": cfg.label,
        "topic_count": len(cfg.topics),
        "combo_count": len(cfg.combos),
        "pairing_policy": cfg.policy.value,
        "discourse_count": len(discourses),
        "truncated_count": len(truncated),
        "truncated": truncated,
        "degenerate_count": sum(bool(d.similarity_report and d.similarity_report.degenerate) for d in discourses),
        "providers": {"P1": cfg.debater_p1.describe(), "P2": cfg.debater_p2.describe()},
        "workers": n_workers,
        "started_at": started,
        "finished_at": _now(),
    }
    write_json(run_dir / MANIFEST, manifest)
    return run_dir


# --- judge ------------------------------------------------------------------


def _verdict_order(discourses: Sequence[Discourse]):
    pos = {d.id: i for i, d in enumerate(discourses)}

    def key(v: JudgeVerdict):
        return (v.judge_id, pos.get(v.discourse_id, len(pos)), v.discourse_id, v.participant.value)
    return key


def cmd_judge(run_dir: str | Path, judges_path: str | Path, force: bool = False,
              workers: int = 4, templates_dir: str | None = None) -> dict[str, Any]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInput("run", f"run directory {run_dir} does not exist")
    discourses = load_discourses(run_dir)
    judge_cfgs = load_judges(judges_path)
    templates = TemplateSet.load(templates_dir) if templates_dir else None
    existing = {v.key: v for v in load_verdicts(run_dir, required=False)}

    judges = [_build(c) for c in judge_cfgs]
    tasks, skipped_empty = [], []
    for j in judges:
        for d in discourses:
            for s in Speaker:
                if not force and (j.id, d.id, s.value) in existing:
                    continue
                if not d.texts(s):
                    skipped_empty.append([j.id, d.id, s.value])
                    continue
                tasks.append((j, d, s))

    n_workers = _workers(workers, judges)
    try:
        if n_workers == 1:
            fresh = [judge_participant(j, d, s, templates) for j, d, s in tasks]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                fresh = list(pool.map(lambda t: judge_participant(t[0], t[1], t[2], templates), tasks))
    finally:
        for j in judges:
            j.close()

    for v in fresh:
        existing[v.key] = v
    ordered = sorted(existing.values(), key=_verdict_order(discourses))
    atomic_write_text(run_dir / VERDICTS, dumps_jsonl(v.to_dict() for v in ordered))

    summary = invalid_summary(ordered)
    for jid, s in summary.items():
        if s["invalid_rate"] >= 0.4:
            log.warning("judge %s: invalid rate %.0f%% (%d/%d)", jid, 100 * s["invalid_rate"], s["invalid"], s["total"])
    manifest = read_manifest(run_dir)
    manifest["judges"] = summary
    manifest["judge_skipped_empty"] = skipped_empty
    manifest["verdict_count"] = len(ordered)
    manifest["judged_at"] = _now()
    write_json(run_dir / MANIFEST, manifest)
    return {"new": len(fresh), "total": len(ordered), "judges": summary}


# --- metrics ----------------------------------------------------------------

FAMILIES = ("hta-lta", "kappa", "alignment", "corpus-stats")


def _hta_lta(discourses, verdicts, out: Path) -> None:
    tallies = confusion_tally(assignments_from_discourses(discourses), verdicts)
    rows, grid = [], {}
    for t in tallies:
        hta, lta = classification_accuracy(t)
        pr = level_precision_recall(t)
        rows.append([t.judge_id, t.pairing_label, t.participant.value, t.trait.value,
                     t.high_correct, t.high_total, t.low_correct, t.low_total, hta, lta,
                     pr["precision_high"], pr["precision_low"], t.invalid_excluded])
        grid.setdefault(t.judge_id, {}).setdefault(t.pairing_label, {}).setdefault(t.participant.value, {})[
            t.trait.value] = {"HTA": hta, "LTA": lta, "high_correct": t.high_correct, "high_total": t.high_total,
                              "low_correct": t.low_correct, "low_total": t.low_total,
                              "invalid_excluded": t.invalid_excluded}
    write_csv(out / "hta_lta.csv",
              ["judge_id", "pairing_label", "participant", "trait", "high_correct", "high_total", "low_correct",
               "low_total", "HTA", "LTA", "precision_high", "precision_low", "invalid_excluded"], rows)
    write_json(out / "hta_lta.json", grid)


def _pairings(discourses: Sequence[Discourse]) -> list[str]:
    return sorted({d.config.pairing_label for d in discourses})


def _kappa(discourses, verdicts, out: Path, required: Sequence[str] | None) -> None:
    rows, table = [], {}
    for pairing in _pairings(discourses):
        items = {d.id: d.config.item_key for d in discourses if d.config.pairing_label == pairing}
        vs = [v for v in verdicts if v.discourse_id in items]
        judges = sorted(required) if required else sorted({v.judge_id for v in vs})
        for trait in TRAITS:
            for s in Speaker:
                entry: dict[str, Any] = {"judges": judges}
                try:
                    m = build_rating_matrix(vs, trait, s, judges, items, pairing)
                    r = fleiss_kappa(m)
                    entry.update(kappa=r.kappa, band=r.band, N=r.N, n=r.n, excluded_rows=r.excluded_rows,
                                 degenerate=r.degenerate, note="")
                except (NoRowsIncluded, TooFewRaters, ValueError) as e:
                    entry.update(kappa=None, band="undefined", N=0, n=len(judges),
                                 excluded_rows=len(items), degenerate=False, note=str(e))
                rows.append([pairing, s.value, trait.value, entry["kappa"], entry["band"], entry["N"], entry["n"],
                             entry["excluded_rows"], entry["degenerate"], entry["note"]])
                table.setdefault(pairing, {}).setdefault(trait.value, {})[s.value] = entry
    write_csv(out / "kappa.csv", ["pairing_label", "participant", "trait", "kappa", "band", "N", "n",
                                  "excluded_rows", "degenerate", "note"], rows)
    write_json(out / "kappa.json", table)


def _alignment(discourses, lexicon_path: str, out: Path) -> None:
    cells = lexicon_alignment(discourses, TraitLexicon.load(lexicon_path))
    rows, fig = [], {}
    for c in cells:
        rows.append([c.pairing_label, c.participant.value, c.trait.value, c.accuracy, c.correct, c.scored,
                     c.abstained, c.abstention_rate, c.scored_trait])
        fig.setdefault(c.pairing_label, {}).setdefault(c.participant.value, {})[c.trait.value] = {
            "accuracy": c.accuracy, "correct": c.correct, "scored": c.scored, "abstained": c.abstained,
            "abstention_rate": c.abstention_rate, "scored_trait": c.scored_trait}
    write_csv(out / "alignment.csv", ["pairing_label", "participant", "trait", "accuracy", "correct", "scored",
                                      "abstained", "abstention_rate", "scored_trait"], rows)
    write_json(out / "alignment.json", fig)


_STAT_FIELDS = ["total_sentences", "total_words", "assertions", "questions", "logical_structures",
                "total_dialogues", "total_utterances", "avg_words_per_sentence", "avg_utterance_length"]


def _corpus(discourses, out: Path, markers: CorpusMarkers) -> None:
    per = {p: corpus_stats([d for d in discourses if d.config.pairing_label == p], markers)
           for p in _pairings(discourses)}
    total = sum(per.values(), CorpusStats())
    data = {p: s.to_dict() for p, s in per.items()}
    data["ALL"] = total.to_dict()
    write_csv(out / "corpus_stats.csv", ["pairing_label"] + _STAT_FIELDS,
              [[p] + [d[f] for f in _STAT_FIELDS] for p, d in data.items()])
    write_json(out / "corpus_stats.json", data)


def cmd_metrics(run_dir: str | Path, families: Iterable[str] = (), lexicon: str | None = None,
                required_judges: Sequence[str] | None = None, markers: CorpusMarkers = CorpusMarkers()) -> list[str]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInput("run", f"run directory {run_dir} does not exist")
    selected = list(families) or ["hta-lta", "kappa", "corpus-stats"] + (["alignment"] if lexicon else [])
    unknown = set(selected) - set(FAMILIES)
    if unknown:
        raise ConfigError(f"unknown metric families: {sorted(unknown)}")
    if "alignment" in selected and not lexicon:
        raise MissingInput("alignment", "pass --lexicon <file> (see data/demo_lexicon.json for the format)")
    out = run_dir / REPORTS
    discourses = load_discourses(run_dir)
    verdicts = None
    if {"hta-lta", "kappa"} & set(selected):
        try:
            verdicts = load_verdicts(run_dir)
        except MissingInput:
            fam = "hta-lta" if "hta-lta" in selected else "kappa"
            raise MissingInput(fam, f"{run_dir / VERDICTS} not found; run `judge` first") from None
    done = []
    for fam in FAMILIES:
        if fam not in selected:
            continue
        if fam == "hta-lta":
            _hta_lta(discourses, verdicts, out)
        elif fam == "kappa":
            _kappa(discourses, verdicts, out, required_judges)
        elif fam == "alignment":
            if not discourses:
                raise MissingInput("alignment", "no discourses in run")
            _alignment(discourses, lexicon, out)
        else:
            _corpus(discourses, out, markers)
        done.append(fam)
    return done


# --- validate ---------------------------------------------------------------


def _transcript(d: Discourse) -> str:
    lines = [f"=== {d.id}", f"topic: {d.config.topic.text}",
             f"P1: {json.dumps(d.config.profile_p1.to_dict())}", f"P2: {json.dumps(d.config.profile_p2.to_dict())}"]
    if d.truncated:
        lines.append(f"truncated at turn {d.failure.turn}: {d.failure.kind}")
    lines += [f"[{u.index}] {u.speaker.value}: {u.clean_text}" for u in d.utterances]
    return "\n".join(lines) + "\n"


def cmd_validate(run_dir: str | Path, seed: int = 0, threshold: float = DEFAULT_THRESHOLD,
                 sample_size: int = 15, stopwords: str | None = None) -> dict[str, Any]:
    run_dir = Path(run_dir)
    discourses = load_discourses(run_dir)
    stop = load_stopwords(stopwords)
    entries = []
    for d in discourses:
        r = similarity_screen(d, threshold, stop)
        entries.append({"discourse_id": d.id, "utterances": len(d.utterances), "truncated": d.truncated,
                        "max_score": r.max_score, "flagged_pairs": [list(p) for p in r.flagged_pairs],
                        "degenerate": r.degenerate})
    k = min(sample_size, len(discourses))
    sample = random.Random(seed).sample(sorted(d.id for d in discourses), k)
    by_id = {d.id: d for d in discourses}
    report = {
        "threshold": threshold,
        "seed": seed,
        "discourse_count": len(discourses),
        "flagged": [e["discourse_id"] for e in entries if e["flagged_pairs"]],
        "degenerate": [e["discourse_id"] for e in entries if e["degenerate"]],
        "review_sample": sample,
        "discourses": entries,
    }
    out = run_dir / REPORTS
    write_json(out / "validation.json", report)
    write_csv(out / "validation.csv", ["discourse_id", "utterances", "truncated", "max_score", "flagged_pairs",
                                       "degenerate"],
              [[e["discourse_id"], e["utterances"], e["truncated"], e["max_score"], len(e["flagged_pairs"]),
                e["degenerate"]] for e in entries])
    atomic_write_text(run_dir / REVIEW_SAMPLE, "\n".join(_transcript(by_id[i]) for i in sample))
    manifest = read_manifest(run_dir)
    if manifest:
        manifest["validation"] = {"threshold": threshold, "seed": seed, "flagged_count": len(report["flagged"]),
                                  "degenerate_count": len(report["degenerate"]), "sample_size": k}
        write_json(run_dir / MANIFEST, manifest)
    return report


# --- report -----------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def cmd_report(run_dir: str | Path) -> str:
    """Markdown summary of whatever reports exist: HTA/LTA grids, kappa table, alignment and corpus stats."""
    run_dir = Path(run_dir)
    rep = run_dir / REPORTS
    manifest = read_manifest(run_dir)
    if not manifest and not rep.exists():
        raise MissingInput("report", f"{run_dir} has no manifest or reports")
    out = [f"# Run {manifest.get('run_id', run_dir.name)}", ""]
    if manifest:
        out += [f"- discourses: {manifest.get('discourse_count')}",
                f"- truncated: {manifest.get('truncated_count')}",
                f"- degenerate: {manifest.get('degenerate_count')}"]
        for jid, s in manifest.get("judges", {}).items():
            out.append(f"- judge {jid}: invalid rate {_fmt(s['invalid_rate'])} ({s['invalid']}/{s['total']})")
        out.append("")
    traits = [t.value for t in TRAITS]
    if (rep / "hta_lta.json").exists():
        grid = json.loads((rep / "hta_lta.json").read_text(encoding="utf-8"))
        out.append("## HTA / LTA by judge")
        for judge, pairings in grid.items():
            for pairing, parts in pairings.items():
                out += ["", f"### {judge} on {pairing}", "", "| trait | P1 HTA | P1 LTA | P2 HTA | P2 LTA |",
                        "|---|---|---|---|---|"]
                for t in traits:
                    c1, c2 = parts.get("P1", {}).get(t, {}), parts.get("P2", {}).get(t, {})
                    out.append(f"| {t} | {_fmt(c1.get('HTA'))} | {_fmt(c1.get('LTA'))} | "
                               f"{_fmt(c2.get('HTA'))} | {_fmt(c2.get('LTA'))} |")
        out.append("")
    if (rep / "kappa.json").exists():
        table = json.loads((rep / "kappa.json").read_text(encoding="utf-8"))
        pairings = list(table)
        out += ["## Fleiss' kappa", "", "| trait | " + " | ".join(f"{p} P1 | {p} P2" for p in pairings) + " |",
                "|---|" + "---|" * (2 * len(pairings))]
        for t in traits:
            cells = []
            for p in pairings:
                for s in ("P1", "P2"):
                    e = table[p].get(t, {}).get(s, {})
                    cells.append(f"{_fmt(e.get('kappa'))} ({e.get('band', 'n/a')})")
            out.append(f"| {t} | " + " | ".join(cells) + " |")
        out.append("")
    if (rep / "alignment.json").exists():
        fig = json.loads((rep / "alignment.json").read_text(encoding="utf-8"))
        out += ["## Lexicon alignment accuracy", ""]
        for pairing, parts in fig.items():
            out += [f"### {pairing}", "", "| trait | P1 | P2 |", "|---|---|---|"]
            for t in traits:
                out.append(f"| {t} | {_fmt(parts.get('P1', {}).get(t, {}).get('accuracy'))} | "
                           f"{_fmt(parts.get('P2', {}).get(t, {}).get('accuracy'))} |")
            out.append("")
    if (rep / "corpus_stats.json").exists():
        stats = json.loads((rep / "corpus_stats.json").read_text(encoding="utf-8"))
        out += ["## Corpus statistics", ""]
        for pairing, s in stats.items():
            out += [f"### {pairing}", "", "| metric | value |", "|---|---|"]
            out += [f"| {f} | {_fmt(s.get(f))} |" for f in _STAT_FIELDS]
            out.append("")
    text = "\n".join(out).rstrip() + "\n"
    atomic_write_text(rep / "summary.md", text)
    return text
