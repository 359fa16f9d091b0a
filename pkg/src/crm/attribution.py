"""Contrast baseline and masked reasoning: step alignment and per-item verdicts."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset import DatasetItem
from .masking import Condition
from .prompts import build_judge_prompt
from .similarity import SimilarityBackend, backend_id, similarity, similarity_matrix, tokenize
from .trace import ReasoningTrace, Tag

EXACT_MATCHING_LIMIT = 25
SIM_DECIMALS = 6


class HallucinationMode(str, enum.Enum):
    HEURISTIC = "heuristic"
    JUDGE = "judge"


class StepStatus(str, enum.Enum):
    UNCHANGED = "Unchanged"
    MODIFIED = "Modified"
    DISAPPEARED = "Disappeared"
    NEW = "New"


class RegionAttribution(str, enum.Enum):
    CORRECT = "Correct"
    PARTIAL = "Partial"
    INCORRECT = "Incorrect"
    NOT_APPLICABLE = "NotApplicable"


class JudgeUnavailableError(Exception):
    pass


@dataclass(frozen=True)
class ScoringConfig:
    step_threshold: float = 0.80
    answer_threshold: float = 0.90
    match_floor: float = 0.30
    hallucination_mode: HallucinationMode = HallucinationMode.HEURISTIC

    def __post_init__(self):
        if not 0.0 <= self.match_floor <= self.step_threshold <= 1.0:
            raise ValueError("need 0 <= match_floor <= step_threshold <= 1")
        if not 0.0 <= self.answer_threshold <= 1.0:
            raise ValueError("answer_threshold must lie in [0, 1]")

    def snapshot(self) -> dict[str, Any]:
        return {
            "step_threshold": self.step_threshold,
            "answer_threshold": self.answer_threshold,
            "match_floor": self.match_floor,
            "hallucination_mode": self.hallucination_mode.value,
        }

    @classmethod
    def from_snapshot(cls, d: dict[str, Any]) -> ScoringConfig:
        return cls(d["step_threshold"], d["answer_threshold"], d["match_floor"],
                   HallucinationMode(d["hallucination_mode"]))


@dataclass
class StepAlignment:
    pairs: list[tuple[int, int, float]]
    baseline_statuses: list[StepStatus]
    masked_statuses: list[StepStatus]

    def partner_of_baseline(self, i: int) -> tuple[int, float] | None:
        for b, m, s in self.pairs:
            if b == i:
                return m, s
        return None

    @property
    def total(self) -> float:
        return float(sum(s for _, _, s in self.pairs))

    def to_dict(self) -> dict[str, Any]:
        return {
            "pairs": [[b, m, round(s, SIM_DECIMALS)] for b, m, s in self.pairs],
            "baseline_statuses": [s.value for s in self.baseline_statuses],
            "masked_statuses": [s.value for s in self.masked_statuses],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StepAlignment:
        return cls(
            [(int(b), int(m), float(s)) for b, m, s in d["pairs"]],
            [StepStatus(s) for s in d["baseline_statuses"]],
            [StepStatus(s) for s in d["masked_statuses"]],
        )


@dataclass
class HallucinationVerdict:
    hallucinated: bool
    assessable: bool = True
    judge_output: str | None = None


@dataclass
class ItemAttribution:
    item_id: str
    condition: Condition
    answer_flipped: bool
    answer_similarity: float
    step_disrupted: bool
    hallucinated: bool
    region_attribution: RegionAttribution
    alignment: StepAlignment
    refusal: bool
    baseline_refusal: bool = False
    hallucination_assessable: bool = True
    gt_step_index: int | None = None
    gt_step_similarity: float | None = None
    judge_output: str | None = None
    backend: str = ""
    scoring: dict[str, Any] = field(default_factory=dict)
    baseline_answer: str = ""
    masked_answer: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "item_id": self.item_id,
            "condition": self.condition.value,
            "answer_flipped": self.answer_flipped,
            "answer_similarity": round(self.answer_similarity, SIM_DECIMALS),
            "step_disrupted": self.step_disrupted,
            "hallucinated": self.hallucinated,
            "region_attribution": self.region_attribution.value,
            "alignment": self.alignment.to_dict(),
            "refusal": self.refusal,
            "baseline_refusal": self.baseline_refusal,
            "hallucination_assessable": self.hallucination_assessable,
            "gt_step_index": self.gt_step_index,
            "gt_step_similarity": (None if self.gt_step_similarity is None
                                   else round(self.gt_step_similarity, SIM_DECIMALS)),
            "judge_output": self.judge_output,
            "backend": self.backend,
            "scoring": self.scoring,
            "baseline_answer": self.baseline_answer,
            "masked_answer": self.masked_answer,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ItemAttribution:
        return cls(
            item_id=d["item_id"],
            condition=Condition(d["condition"]),
            answer_flipped=d["answer_flipped"],
            answer_similarity=d["answer_similarity"],
            step_disrupted=d["step_disrupted"],
            hallucinated=d["hallucinated"],
            region_attribution=RegionAttribution(d["region_attribution"]),
            alignment=StepAlignment.from_dict(d["alignment"]),
            refusal=d["refusal"],
            baseline_refusal=d.get("baseline_refusal", False),
            hallucination_assessable=d.get("hallucination_assessable", True),
            gt_step_index=d.get("gt_step_index"),
            gt_step_similarity=d.get("gt_step_similarity"),
            judge_output=d.get("judge_output"),
            backend=d.get("backend", ""),
            scoring=d.get("scoring", {}),
            baseline_answer=d.get("baseline_answer", ""),
            masked_answer=d.get("masked_answer", ""),
        )


# --- matching -------------------------------------------------------------


def max_weight_matching(weights: np.ndarray, floor: float) -> list[tuple[int, int, float]]:
    """One-to-one pairs maximising total weight, using only entries >= floor.

    Exact (Hungarian) up to EXACT_MATCHING_LIMIT per side, greedy beyond.
    """
    n, m = weights.shape
    if n == 0 or m == 0:
        return []
    eligible = weights >= floor
    if max(n, m) <= EXACT_MATCHING_LIMIT:
        # ineligible entries weigh 0, so they never raise the total; any the
        # solver still assigns are dropped afterwards
        w = np.where(eligible, weights, 0.0)
        rows, cols = linear_sum_assignment(w, maximize=True)
        pairs = [(int(r), int(c), float(weights[r, c])) for r, c in zip(rows, cols) if eligible[r, c]]
    else:
        order = sorted(
            ((float(weights[i, j]), i, j) for i in range(n) for j in range(m) if eligible[i, j]),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        used_r, used_c, pairs = set(), set(), []
        for s, i, j in order:
            if i not in used_r and j not in used_c:
                used_r.add(i)
                used_c.add(j)
                pairs.append((i, j, s))
    return sorted(pairs)


def classify_pair(sim: float, config: ScoringConfig) -> StepStatus:
    return StepStatus.UNCHANGED if sim >= config.step_threshold else StepStatus.MODIFIED


def align_steps(base: ReasoningTrace, masked: ReasoningTrace, backend: SimilarityBackend,
                config: ScoringConfig = ScoringConfig()) -> StepAlignment:
    sims = similarity_matrix(backend, [s.text for s in base.steps], [s.text for s in masked.steps])
    return alignment_from_matrix(sims, config)


def alignment_from_matrix(sims: np.ndarray, config: ScoringConfig) -> StepAlignment:
    n, m = sims.shape
    pairs = max_weight_matching(sims, config.match_floor)
    base_status = [StepStatus.DISAPPEARED] * n
    masked_status = [StepStatus.NEW] * m
    for i, j, s in pairs:
        base_status[i] = masked_status[j] = classify_pair(s, config)
    return StepAlignment(pairs, base_status, masked_status)


# --- verdicts -------------------------------------------------------------


def score_step_disruption(alignment: StepAlignment) -> bool:
    return any(s in (StepStatus.MODIFIED, StepStatus.DISAPPEARED) for s in alignment.baseline_statuses)


def answer_flipped(sim: float, config: ScoringConfig) -> bool:
    return sim < config.answer_threshold


def score_answer_flip(base_answer: str, masked_answer: str, backend: SimilarityBackend,
                      config: ScoringConfig = ScoringConfig()) -> tuple[bool, float]:
    if not base_answer.strip() or not masked_answer.strip():
        sim = 1.0 if base_answer.strip() == masked_answer.strip() else 0.0
    else:
        sim = similarity(backend, base_answer.strip(), masked_answer.strip())
    return answer_flipped(sim, config), sim


_STOPWORDS = frozenset(
    """a an the and or of to in on at by for with from into onto over under is are was were be been
    being this that these those it its as step region box masked mask image picture shown showing
    which what who whom there here vp cp ic""".split()
)


def stem(word: str) -> str:
    for suffix in ("ing", "ed", "es", "s"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            word = word[: -len(suffix)]
            break
    # pouring -> pour, poured -> pour; doubled consonants (dripping -> drip)
    if len(word) >= 4 and word[-1] == word[-2] and word[-1] not in "aeiouls":
        word = word[:-1]
    return word


def region_terms(hint: str | None) -> list[str]:
    """Content words from a ground-truth step description, in first-seen order."""
    if not hint:
        return []
    out: list[str] = []
    for tok in tokenize(hint):
        if tok in _STOPWORDS or len(tok) < 3 or tok.isdigit() or re.fullmatch(r"(vp|cp|ic)\d+", tok):
            continue
        if tok not in out:
            out.append(tok)
    return out


def _stems(text: str) -> set[str]:
    return {stem(t) for t in tokenize(text)}


def mentions(text: str, term: str) -> bool:
    words = _stems(text)
    return all(stem(t) in words for t in tokenize(term))


def detect_hallucination(alignment: StepAlignment, masked: ReasoningTrace, masked_region_terms: Sequence[str],
                         mode: HallucinationMode = HallucinationMode.HEURISTIC, *,
                         judge: Callable[[str], str] | None = None, baseline: ReasoningTrace | None = None,
                         hint: str | None = None) -> HallucinationVerdict:
    """Does the masked trace assert content that was masked out?

    Heuristic: some New or Modified masked step mentions a region term.
    Judge: ask ``judge`` (prompt -> reply) for a yes/no verdict.
    """
    if mode is HallucinationMode.JUDGE:
        if judge is None:
            raise JudgeUnavailableError("judge mode selected without a judge client")
        prompt = build_judge_prompt(hint or ", ".join(masked_region_terms),
                                    [s.text for s in (baseline.steps if baseline else [])],
                                    [s.text for s in masked.steps])
        try:
            reply = judge(prompt)
        except Exception as exc:
            raise JudgeUnavailableError(f"judge call failed: {exc}") from exc
        first = tokenize(reply)[:1]
        return HallucinationVerdict(first == ["yes"], True, reply)

    if not masked_region_terms:
        return HallucinationVerdict(False, assessable=False)
    for step, status in zip(masked.steps, alignment.masked_statuses):
        if status in (StepStatus.NEW, StepStatus.MODIFIED):
            if any(mentions(step.text, term) for term in masked_region_terms):
                return HallucinationVerdict(True)
    return HallucinationVerdict(False)


def gt_linked_step(base: ReasoningTrace, hint: str, backend: SimilarityBackend) -> tuple[int, float] | None:
    """Baseline step most similar to the hint; ties go to the earliest step."""
    if not base.steps or not hint:
        return None
    sims = similarity_matrix(backend, [hint], [s.text for s in base.steps])[0]
    idx = int(np.argmax(sims))  # argmax returns the first maximum
    return idx, float(sims[idx])


def attribute_region(item: DatasetItem, alignment: StepAlignment, step_disrupted: bool, base: ReasoningTrace,
                     masked: ReasoningTrace, backend: SimilarityBackend,
                     terms: Sequence[str] | None = None) -> tuple[RegionAttribution, int | None, float | None]:
    """Bucket whether the step tied to the masked region is the one that broke.

    Returns (bucket, GT-linked baseline step index, similarity of that step to its masked partner).
    """
    if not item.gt_step_hint:
        return RegionAttribution.NOT_APPLICABLE, None, None
    linked = gt_linked_step(base, item.gt_step_hint, backend)
    if linked is None:
        return RegionAttribution.NOT_APPLICABLE, None, None
    gt_idx, _ = linked
    partner = alignment.partner_of_baseline(gt_idx)
    pair_sim = partner[1] if partner else 0.0
    status = alignment.baseline_statuses[gt_idx]
    broken = (StepStatus.MODIFIED, StepStatus.DISAPPEARED)

    if status in broken:
        other_vp = [
            i for i, (step, st) in enumerate(zip(base.steps, alignment.baseline_statuses))
            if i != gt_idx and step.tag is Tag.VP and st in broken
        ]
        bucket = RegionAttribution.PARTIAL if other_vp else RegionAttribution.CORRECT
        return bucket, gt_idx, pair_sim

    if terms is None:
        terms = region_terms(item.gt_step_hint)
    base_text = base.steps[gt_idx].text
    masked_text = masked.steps[partner[0]].text if partner else ""
    lost = any(mentions(base_text, t) and not mentions(masked_text, t) for t in terms)
    if lost:
        return RegionAttribution.PARTIAL, gt_idx, pair_sim
    # GT step intact: either something else broke or nothing did
    return RegionAttribution.INCORRECT, gt_idx, pair_sim


def score_item(item: DatasetItem, condition: Condition, base_trace: ReasoningTrace, base_answer: str,
               masked_trace: ReasoningTrace, masked_answer: str, backend: SimilarityBackend,
               config: ScoringConfig = ScoringConfig(), *,
               judge: Callable[[str], str] | None = None) -> ItemAttribution:
    alignment = align_steps(base_trace, masked_trace, backend, config)
    flipped, ans_sim = score_answer_flip(base_answer, masked_answer, backend, config)
    terms = region_terms(item.gt_step_hint)
    disrupted = score_step_disruption(alignment)

    if masked_trace.refusal:
        disrupted = True
        verdict = HallucinationVerdict(False, assessable=True)
    else:
        verdict = detect_hallucination(alignment, masked_trace, terms, config.hallucination_mode,
                                       judge=judge, baseline=base_trace, hint=item.gt_step_hint)
    bucket, gt_idx, gt_sim = attribute_region(item, alignment, disrupted, base_trace, masked_trace, backend, terms)
    return ItemAttribution(
        item_id=item.id,
        condition=Condition(condition),
        answer_flipped=flipped,
        answer_similarity=ans_sim,
        step_disrupted=disrupted,
        hallucinated=verdict.hallucinated,
        region_attribution=bucket,
        alignment=alignment,
        refusal=masked_trace.refusal,
        baseline_refusal=base_trace.refusal,
        hallucination_assessable=verdict.assessable,
        gt_step_index=gt_idx,
        gt_step_similarity=gt_sim,
        judge_output=verdict.judge_output,
        backend=backend_id(backend),
        scoring=config.snapshot(),
        baseline_answer=base_answer.strip(),
        masked_answer=masked_answer.strip(),
    )
