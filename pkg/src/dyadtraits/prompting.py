"""Debater and judge prompt rendering from plain-text templates.

Templates use ``{name}`` slots. Allowed slots are ``{topic}``,
``{trait:<Name>}``, ``{previous}``, ``{label}`` and ``{text}``; any other
``{identifier}`` in a template file is rejected when the set is loaded.
Braces not followed by an identifier (the JSON block in the judge
prompt) are literal text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .core import TRAITS, TraitProfile, Topic

_SLOT = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*(?::[A-Za-z_][A-Za-z0-9_]*)?)\}")

JUDGE_LABELS = ("Person One", "Person Two")

# slots each template may use
_ALLOWED = {
    "debater_system": {"topic"} | {f"trait:{t.value}" for t in TRAITS},
    "debater_user": {"previous"},
    "judge_system": set(),
    "judge_user": {"label", "text"},
}


class TemplateError(ValueError):
    pass


class EmptyText(ValueError):
    pass


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str

    def __post_init__(self):
        if not self.system or not self.user:
            raise ValueError("rendered prompts must be non-empty")


def _fill(template: str, values: Mapping[str, str]) -> str:
    # single pass: substituted text is never re-scanned for slots
    return _SLOT.sub(lambda m: values[m.group(1)], template)


@dataclass(frozen=True)
class TemplateSet:
    debater_system: str
    debater_user: str
    judge_system: str
    judge_user: str

    def __post_init__(self):
        for name, allowed in _ALLOWED.items():
            text = getattr(self, name)
            if not text:
                raise TemplateError(f"template {name} is empty")
            unknown = sorted({m.group(1) for m in _SLOT.finditer(text)} - allowed)
            if unknown:
                raise TemplateError(f"template {name} has unknown placeholders: {unknown}")

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "TemplateSet":
        """Load ``<name>.txt`` files from ``directory`` (bundled set by default)."""
        texts = {}
        for name in _ALLOWED:
            if directory is None:
                texts[name] = (resources.files("dyadtraits") / "templates" / f"{name}.txt").read_text(
                    encoding="utf-8"
                )
            else:
                path = Path(directory) / f"{name}.txt"
                if not path.exists():
                    raise TemplateError(f"missing template file: {path}")
                texts[name] = path.read_text(encoding="utf-8")
        return cls(**texts)


_default: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _default
    if _default is None:
        _default = TemplateSet.load()
    return _default


def render_debater_system_prompt(
    topic: Topic, profile: TraitProfile, templates: TemplateSet | None = None
) -> str:
    t = templates or default_templates()
    values = {"topic": topic.text}
    values.update({f"trait:{name.value}": level.value for name, level in profile.items()})
    return _fill(t.debater_system, values)


def render_debater_user_prompt(previous: str | None = None, templates: TemplateSet | None = None) -> str:
    """Wrap the other speaker's last utterance; the opening turn gets ``""``."""
    t = templates or default_templates()
    return _fill(t.debater_user, {"previous": previous or ""})


def render_judge_prompts(
    participant_label: str, participant_text: str, templates: TemplateSet | None = None
) -> PromptPair:
    if participant_label not in JUDGE_LABELS:
        raise ValueError(f"judge label must be one of {JUDGE_LABELS}, got {participant_label!r}")
    if not participant_text:
        raise EmptyText(f"no text to judge for {participant_label}")
    t = templates or default_templates()
    return PromptPair(
        system=t.judge_system,
        user=_fill(t.judge_user, {"label": participant_label, "text": participant_text}),
    )
