"""Parsing of VP/CP/IC-labelled reasoning output into structured traces."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

GARBAGE_WARN_THRESHOLD = 0.2
REFUSAL_WINDOW = 200


class Tag(str, enum.Enum):
    VP = "VP"
    CP = "CP"
    IC = "IC"
    OTHER = "OTHER"


@dataclass(frozen=True)
class ReasoningStep:
    tag: Tag
    index: int
    text: str

    @property
    def label(self) -> str:
        return f"{self.tag.value}{self.index}"


@dataclass
class ReasoningTrace:
    steps: list[ReasoningStep]
    final_conclusion: str | None
    raw_text: str
    warnings: list[str] = field(default_factory=list)
    refusal: bool = False
    garbage_score: float = 0.0


_BULLET = r"(?:[-*•–—>]+|\d+[.)])?"
_STEP_RE = re.compile(
    rf"^\s*{_BULLET}\s*[*_]*\s*(VP|CP|IC)\s*(\d+)\s*[*_]*\s*:\s*[*_]*\s*(.*)$",
    re.IGNORECASE,
)
_FINAL_RE = re.compile(
    rf"^\s*{_BULLET}\s*[*_#]*\s*final\s+conclusion\s*[*_]*\s*:\s*[*_]*\s*(.*)$",
    re.IGNORECASE,
)
_LABEL_ANYWHERE_RE = re.compile(r"\b(VP|CP|IC)\s*\d+\s*[*_]*\s*:", re.IGNORECASE)
# section headings such as "Reasoning:" or "Visual Premises (VP):" carry no content
_HEADING_RE = re.compile(r"^\s*[#*_\s]*[A-Za-z][A-Za-z /&()\-]{0,60}:[*_\s]*$")


def _clean(text: str) -> str:
    text = re.sub(r"\s+", " ", text).strip()
    return text.strip("*_ ").strip()


def parse_trace(raw: str, *, lexicon: Iterable[str] | None = None) -> ReasoningTrace:
    """Split raw model output into labelled steps and a final conclusion.

    Never raises; irregularities are reported in ``warnings``.
    """
    if not isinstance(raw, str):
        raw = str(raw)
    trace = ReasoningTrace(steps=[], final_conclusion=None, raw_text=raw)
    if not raw.strip():
        trace.warnings.append("empty-output")
        return trace

    # each pending step is [tag, index, [text parts]]
    pending: list[list] = []
    leading: list[list[str]] = [[]]
    final_parts: list[str] | None = None
    in_final = False
    duplicate_final = False

    for line in raw.splitlines():
        m = _STEP_RE.match(line)
        if m:
            in_final = False
            pending.append([Tag(m.group(1).upper()), int(m.group(2)), [m.group(3)]])
            continue
        f = _FINAL_RE.match(line)
        if f:
            if final_parts is None:
                final_parts = [f.group(1)]
                in_final = True
            else:
                duplicate_final = True
                in_final = False
            continue
        if not line.strip():
            if not pending and not in_final and leading[-1]:
                leading.append([])
            continue
        if _HEADING_RE.match(line):
            continue
        if in_final and final_parts is not None:
            final_parts.append(line)
        elif pending:
            pending[-1][2].append(line)
        else:
            leading[-1].append(line)

    other_index = 0
    for block in leading:
        text = _clean(" ".join(block))
        if text:
            other_index += 1
            trace.steps.append(ReasoningStep(Tag.OTHER, other_index, text))
    for tag, index, parts in pending:
        text = _clean(" ".join(parts))
        if text:
            trace.steps.append(ReasoningStep(tag, index, text))
        else:
            trace.warnings.append(f"empty-step:{tag.value}{index}")

    if final_parts is not None:
        final = _clean(" ".join(final_parts))
        trace.final_conclusion = final or None
        if not final:
            trace.warnings.append("empty-final")
    else:
        trace.warnings.append("missing-final")
    if duplicate_final:
        trace.warnings.append("duplicate-final")
    if not any(s.tag is not Tag.OTHER for s in trace.steps):
        trace.warnings.append("no-labelled-steps")

    trace.refusal = detect_refusal(raw, lexicon=lexicon)
    if trace.refusal:
        trace.warnings.append("refusal")
    trace.garbage_score = garbage_score(raw)
    if trace.garbage_score > GARBAGE_WARN_THRESHOLD:
        trace.warnings.append("garbage")
    return trace


def _read_wordlist(text: str) -> tuple[str, ...]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(_normalize_quotes(line.lower()))
    return tuple(out)


def _normalize_quotes(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'")


@lru_cache(maxsize=None)
def default_lexicon() -> tuple[str, ...]:
    return _read_wordlist(resources.files("crm").joinpath("data/refusal_lexicon.txt").read_text("utf-8"))


def load_lexicon(path: str | Path) -> tuple[str, ...]:
    return _read_wordlist(Path(path).read_text(encoding="utf-8"))


def detect_refusal(raw: str, *, lexicon: Iterable[str] | None = None) -> bool:
    """True when the opening of ``raw`` contains a refusal phrase and no step labels appear anywhere."""
    if not raw or _LABEL_ANYWHERE_RE.search(raw):
        return False
    phrases = default_lexicon() if lexicon is None else tuple(lexicon)
    head = _normalize_quotes(raw.lower())
    for phrase in phrases:
        pos = head.find(phrase)
        if 0 <= pos < REFUSAL_WINDOW:
            return True
    return False


@lru_cache(maxsize=None)
def _dictionary() -> frozenset[str]:
    return frozenset(_read_wordlist(resources.files("crm").joinpath("data/vowelless_words.txt").read_text("utf-8")))


_VOWELS = set("aeiou")
_RUN4 = re.compile(r"(.)\1{3,}")
_EDGE_PUNCT = "\"'`.,;:!?()[]{}<>*_-“”‘’"


def is_garbage_token(token: str) -> bool:
    t = token.strip(_EDGE_PUNCT).lower()
    if len(t) < 6 or t in _dictionary():
        return False
    if any(c.isdigit() for c in t) or not any(c.isalpha() for c in t):
        return False
    return not (_VOWELS & set(t)) or bool(_RUN4.search(t))


def garbage_score(raw: str) -> float:
    """Fraction of whitespace-separated tokens that look like random letter runs."""
    tokens = raw.split()
    if not tokens:
        return 0.0
    return sum(is_garbage_token(t) for t in tokens) / len(tokens)
