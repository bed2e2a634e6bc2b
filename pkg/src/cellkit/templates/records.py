"""Template records, filtering rules, filling and JSON-lines storage."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ParseError, ValidationError
from ..expr.preprocess import assign_splits
from ..numkit.rng import RngStream
from .rouge import tokenize

TASKS = ("CTA", "DSP", "CPCG")
REQUIRED = {"CTA": ("input",), "DSP": ("input", "drug"), "CPCG": ("cell_type",)}
OPTIONAL = ("species", "tissue")
CELL_PLACEHOLDER = "input"
OPTION_PLACEHOLDER = "option"
OUTPUT_PLACEHOLDER = "output"
MAX_WORDS = 70
BANNED_ENTITIES = (re.compile(r"\bgene [a-z]\b", re.I), re.compile(r"\bgene [0-9]+\b", re.I))
_FIELD = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class TemplateRecord:
    task: str
    instruction: str
    response: str
    traits: dict = field(default_factory=dict)
    has_options: bool = False
    split: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}; expected one of {TASKS}")

    def to_dict(self) -> dict:
        return {"task": self.task, "instruction": self.instruction, "response": self.response,
                "traits": dict(self.traits), "has_options": self.has_options, "split": self.split}


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    reason: str | None = None

    def __bool__(self):
        return self.accepted


def placeholders(text: str) -> set:
    return set(_FIELD.findall(text))


def word_count(text: str) -> int:
    return len(tokenize(text))


def required_placeholders(task: str, has_options: bool = False) -> tuple:
    req = REQUIRED[task]
    return req + (OPTION_PLACEHOLDER,) if has_options else req


def filter_template(text: str, task: str, has_options: bool = False, max_words: int = MAX_WORDS) -> FilterDecision:
    """Reject instructions over ``max_words`` words or missing a required placeholder."""
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}")
    if word_count(text) > max_words:
        return FilterDecision(False, "length")
    missing = [p for p in required_placeholders(task, has_options) if p not in placeholders(text)]
    if missing:
        return FilterDecision(False, "placeholder:" + ",".join(missing))
    return FilterDecision(True)


def filter_response(text: str, task: str, max_words: int = MAX_WORDS) -> FilterDecision:
    """Responses need ``{output}``; CPCG responses must end with it and avoid placeholder gene names."""
    if word_count(text) > max_words:
        return FilterDecision(False, "length")
    if OUTPUT_PLACEHOLDER not in placeholders(text):
        return FilterDecision(False, "placeholder:output")
    if task == "CPCG":
        if not text.rstrip().endswith("{output}"):
            return FilterDecision(False, "ending")
        if any(p.search(text) for p in BANNED_ENTITIES):
            return FilterDecision(False, "entity")
    return FilterDecision(True)


def _elide(text: str, name: str) -> str:
    text = text.replace("{" + name + "}", "")
    text = re.sub(r"[ \t]{2,}", " ", text)
    text = re.sub(r" +([,.;:!?])", r"\1", text)
    text = re.sub(r"\(\s*\)", "", text)
    return re.sub(r"[ \t]{2,}", " ", text).strip()


def _render(text: str, values: dict, what: str) -> str:
    for name in sorted(placeholders(text)):
        if name in values:
            text = text.replace("{" + name + "}", str(values[name]))
        elif name in OPTIONAL:
            text = _elide(text, name)
        else:
            raise ValidationError(f"{what} placeholder {{{name}}} has no value")
    return text


def fill_template(t: TemplateRecord, record: dict, cell_marker: str = "<CELL>", seed: int = 0) -> tuple:
    """Substitute attributes into a template pair.

    The cell placeholder becomes ``cell_marker``; ``record["options"]`` (a
    list of labels) is shuffled under ``seed`` and joined with ", ".
    Missing optional attributes are removed together with surplus spaces.
    """
    values = {k: v for k, v in record.items() if k != "options" and v is not None}
    values[CELL_PLACEHOLDER] = cell_marker
    if "options" in record and record["options"] is not None:
        opts = list(record["options"])
        order = RngStream(seed).permutation(len(opts))
        values[OPTION_PLACEHOLDER] = ", ".join(str(opts[i]) for i in order)
    return _render(t.instruction, values, "instruction"), _render(t.response, values, "response")


def split_templates(records, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list:
    records = list(records)
    tags = assign_splits(len(records), ratios, seed)
    return [replace(r, split=s) for r, s in zip(records, tags)]


def load_templates(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(TemplateRecord(obj["task"], obj["instruction"], obj["response"], obj.get("traits") or {},
                                          bool(obj.get("has_options", False)), obj.get("split")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad template record: {exc}", line=line_no, offset=0) from None
    return out


def save_templates(records, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
