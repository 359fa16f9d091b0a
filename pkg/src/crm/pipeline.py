"""Orchestration: generation runs, scoring of run pairs, reports and item diffs."""

from __future__ import annotations

import logging
import textwrap
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import attribution as attr
from .attribution import ItemAttribution, ScoringConfig, StepStatus
from .client import GenerationConfig, GenerationRecord, Provider, Stage, call_with_retry
from .dataset import DatasetItem, validate_item
from .imaging import ImageDecodeError, encode_png, image_dims, image_hash, load_image
from .masking import Condition, MaskingError, item_seed, mask_random, mask_specific
from .metrics import MetricsSummary, aggregate, compare_conditions, render_report
from .prompts import build_answer_prompt, build_cot_prompt, prompt_hash
from .runstore import (CacheKey, RunManifest, RunStore, Status, atomic_write_bytes, read_record, split_work_key,
                       work_key, write_record)
from .similarity import SimilarityBackend, backend_id
from .trace import parse_trace

logger = logging.getLogger(__name__)


class MissingCounterpartError(Exception):
    def __init__(self, missing: list[str]):
        super().__init__(f"no baseline counterpart for items: {', '.join(missing)}")
        self.missing = missing


class UnscoredRunError(Exception):
    pass


class UnknownItemError(KeyError):
    pass


def run_config(gen: GenerationConfig, scoring: ScoringConfig, mask_seed: int) -> dict[str, Any]:
    return {"generation": gen.snapshot(), "scoring": scoring.snapshot(), "mask_seed": mask_seed}


def screen_items(items: Sequence[DatasetItem], images_dir: Path) -> tuple[list[DatasetItem], dict[str, list[str]]]:
    """Drop items that fail validation; returns (kept, {item_id: error lines})."""
    kept, excluded = [], {}
    for item in items:
        path = images_dir / item.image_ref
        try:
            dims = image_dims(path)
        except FileNotFoundError:
            excluded[item.id] = [f"image-missing: {path}"]
            continue
        except ImageDecodeError as exc:
            excluded[item.id] = [f"image-undecodable: {exc}"]
            continue
        report = validate_item(item, dims)
        if report.ok:
            kept.append(item)
        else:
            excluded[item.id] = [f"{c}: {m}" for c, m in report.errors]
    return kept, excluded


def prepare_image(item: DatasetItem, image, condition: Condition, mask_seed: int):
    """Image the model sees under ``condition`` plus the mask metadata (None for baseline)."""
    if condition is Condition.BASELINE:
        return image, None
    if condition is Condition.SPECIFIC:
        masked = mask_specific(image, item.important_regions)
    else:
        masked = mask_random(image, item.important_regions, item_seed(mask_seed, item.id), item_id=item.id)
    return masked.pixels, masked


@dataclass
class RunStats:
    provider_calls: int = 0
    cache_hits: int = 0
    done: int = 0
    failed: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)


class Runner:
    """Executes pending (item, condition, stage) work for one run."""

    def __init__(self, store: RunStore, config: GenerationConfig, provider: Provider, images_dir: Path,
                 mask_seed: int = 0, concurrency: int = 4, sleep: Callable[[float], None] | None = None):
        self.store = store
        self.config = config
        self.provider = provider
        self.images_dir = Path(images_dir)
        self.mask_seed = mask_seed
        self.concurrency = max(1, concurrency)
        self.sleep = sleep

    def _generate(self, run_id: str, item: DatasetItem, condition: Condition, stage: Stage, image,
                  stats: RunStats) -> GenerationRecord:
        if stage is Stage.COT:
            prompt = build_cot_prompt(item.question)
            temperature, max_tokens = self.config.cot_temperature, self.config.cot_max_tokens
        else:
            prompt = build_answer_prompt(item.question, masked=condition is not Condition.BASELINE)
            temperature, max_tokens = self.config.answer_temperature, self.config.answer_max_tokens
        key = CacheKey(self.config.model_name, prompt_hash(prompt), image_hash(image), temperature, max_tokens)
        cached = self.store.cache_lookup(key)
        if cached is not None:
            stats.bump("cache_hits")
            return GenerationRecord(item.id, condition, stage, cached.prompt_hash, cached.image_hash,
                                    cached.raw_text, 0.0, 0, {**cached.provider_metadata, "cache": "hit"})
        kwargs = {"sleep": self.sleep} if self.sleep else {}
        stats.bump("provider_calls")
        start = time.perf_counter()
        resp, attempts = call_with_retry(self.provider, prompt, image, temperature=temperature,
                                         max_tokens=max_tokens, policy=self.config.retry, **kwargs)
        record = GenerationRecord(item.id, condition, stage, key.prompt_hash, key.image_hash, resp.text,
                                  time.perf_counter() - start, attempts,
                                  {**resp.metadata, "temperature": temperature, "max_tokens": max_tokens})
        self.store.cache_put(key, record)
        return record

    def _unit(self, manifest: RunManifest, item: DatasetItem, condition: Condition, stages: list[Stage],
              stats: RunStats) -> None:
        run_id = manifest.run_id
        try:
            image = load_image(self.images_dir / item.image_ref)
            pixels, masked = prepare_image(item, image, condition, self.mask_seed)
            if masked is not None:
                out = self.store.item_dir(run_id, item.id, condition) / masked.spec.filename()
                if not out.exists():
                    atomic_write_bytes(out, encode_png(pixels))
                    write_record(out.with_suffix(".json"), masked.spec.to_dict())
        except (OSError, ImageDecodeError, MaskingError) as exc:
            for stage in stages:
                self._fail(manifest, item, condition, stage, exc, stats)
            return
        for stage in stages:
            key = work_key(item.id, condition, stage)
            try:
                record = self._generate(run_id, item, condition, stage, pixels, stats)
                self.store.put_generation(run_id, record)
            except Exception as exc:  # per-item failures must not stop the run
                self._fail(manifest, item, condition, stage, exc, stats)
                continue
            self.store.mark(manifest, key, Status.DONE)
            stats.bump("done")

    def _fail(self, manifest, item, condition, stage, exc, stats):
        key = work_key(item.id, condition, stage)
        msg = f"{type(exc).__name__}: {exc}"
        logger.error("%s failed: %s", key, msg)
        self.store.mark(manifest, key, Status.FAILED, msg)
        stats.bump("failed")
        stats.failures[key] = msg

    def execute(self, manifest: RunManifest) -> RunStats:
        items = {it.id: it for it in self.store.load_items(manifest.run_id)}
        units: dict[tuple[str, Condition], list[Stage]] = {}
        for key in manifest.pending():
            item_id, cond, stage = split_work_key(key)
            units.setdefault((item_id, cond), []).append(stage)
        stats = RunStats()
        work = [(items[i], c, sorted(stages, key=lambda s: s is Stage.ANSWER)) for (i, c), stages in units.items()]
        if self.concurrency == 1:
            for item, cond, stages in work:
                self._unit(manifest, item, cond, stages, stats)
        else:
            with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
                list(pool.map(lambda w: self._unit(manifest, *w, stats), work))
        self.store.commit(manifest)
        return stats


def start_run(store: RunStore, run_id: str, items: Sequence[DatasetItem], images_dir: Path,
              conditions: Iterable[Condition | str], gen: GenerationConfig, scoring: ScoringConfig,
              mask_seed: int) -> RunManifest:
    kept, excluded = screen_items(items, Path(images_dir))
    return store.init_run(run_id, kept, conditions, run_config(gen, scoring, mask_seed), excluded=excluded)


# --- scoring --------------------------------------------------------------


def _answer_text(record: GenerationRecord | None) -> str:
    return record.raw_text if record is not None else ""


def score_run(store: RunStore, run_id: str, baseline_run_id: str, backend: SimilarityBackend,
              config: ScoringConfig = ScoringConfig(), *, judge: Callable[[str], str] | None = None,
              lexicon: Sequence[str] | None = None, strict: bool = False) -> tuple[list[ItemAttribution], list[str]]:
    """Score every masked condition of ``run_id`` against the baseline condition of ``baseline_run_id``.

    Returns the attributions written and the ids of items lacking a
    complete baseline counterpart (raised instead when ``strict``).
    """
    manifest = store.load_manifest(run_id)
    base_manifest = store.load_manifest(baseline_run_id)
    if Condition.BASELINE not in base_manifest.conditions:
        raise ValueError(f"run {baseline_run_id!r} has no baseline condition")
    items = store.load_items(run_id)
    base_items = {it.id for it in store.load_items(baseline_run_id)}
    out, missing = [], []
    for cond in manifest.conditions:
        if cond is Condition.BASELINE:
            continue
        for item in items:
            if manifest.status.get(work_key(item.id, cond, Stage.COT)) is not Status.DONE:
                continue
            base_cot = store.get_generation(baseline_run_id, item.id, Condition.BASELINE, Stage.COT) \
                if item.id in base_items else None
            if base_cot is None:
                missing.append(item.id)
                continue
            base_ans = store.get_generation(baseline_run_id, item.id, Condition.BASELINE, Stage.ANSWER)
            masked_cot = store.get_generation(run_id, item.id, cond, Stage.COT)
            masked_ans = store.get_generation(run_id, item.id, cond, Stage.ANSWER)
            result = attr.score_item(
                item, cond,
                parse_trace(base_cot.raw_text, lexicon=lexicon), _answer_text(base_ans),
                parse_trace(masked_cot.raw_text, lexicon=lexicon), _answer_text(masked_ans),
                backend, config, judge=judge,
            )
            result.scoring = {**result.scoring, "baseline_run": baseline_run_id}
            write_record(store.attribution_path(run_id, item.id, cond), result.to_dict())
            out.append(result)
    extra = sorted(base_items - {it.id for it in items})
    missing = sorted(set(missing))
    if strict and missing:
        raise MissingCounterpartError(missing)
    if extra:
        logger.info("baseline run has %d items absent from %s", len(extra), run_id)
    return out, missing


def load_attributions(store: RunStore, run_id: str) -> dict[Condition, list[ItemAttribution]]:
    manifest = store.load_manifest(run_id)
    out: dict[Condition, list[ItemAttribution]] = {}
    for cond in manifest.conditions:
        if cond is Condition.BASELINE:
            continue
        for item_id in manifest.item_ids:
            path = store.attribution_path(run_id, item_id, cond)
            if path.exists():
                out.setdefault(cond, []).append(ItemAttribution.from_dict(read_record(path)))
    return out


def build_report(store: RunStore, run_ids: Sequence[str], fmt: str = "md") -> str:
    """Summaries for every scored condition of the given runs, plus a
    specific-vs-random comparison when both are present."""
    summaries: list[MetricsSummary] = []
    for run_id in run_ids:
        manifest = store.load_manifest(run_id)
        scored = load_attributions(store, run_id)
        if not scored:
            raise UnscoredRunError(f"run {run_id!r} has no attributions; run `crm score` first")
        model = manifest.config["generation"]["model_name"]
        for cond in sorted(scored, key=lambda c: c.value):
            atts = sorted(scored[cond], key=lambda a: a.item_id)
            first = atts[0]
            meta = {
                "backend": first.backend,
                "step_threshold": first.scoring.get("step_threshold"),
                "answer_threshold": first.scoring.get("answer_threshold"),
                "mask_seed": manifest.config.get("mask_seed"),
                "run": run_id,
            }
            summaries.append(aggregate(atts, label=f"{model}/{cond.value}", meta=meta))
    parts = [render_report(summaries, fmt)]
    spec = [s for s in summaries if s.condition is Condition.SPECIFIC]
    rand = [s for s in summaries if s.condition is Condition.RANDOM]
    if fmt == "md" and len(spec) == 1 and len(rand) == 1:
        parts.append("## Specific vs random masking\n\n" + render_report(compare_conditions(spec[0], rand[0]), fmt))
    return "\n".join(parts)


# --- item diff ------------------------------------------------------------


def diff_item(store: RunStore, run_id: str, baseline_run_id: str, item_id: str,
              condition: Condition | None = None, width: int = 48) -> str:
    """Side-by-side view of baseline and masked steps with status and similarity per row."""
    manifest = store.load_manifest(run_id)
    if item_id not in manifest.item_ids:
        raise UnknownItemError(item_id)
    conds = [c for c in manifest.conditions if c is not Condition.BASELINE]
    if condition is not None:
        conds = [Condition(condition)]
    blocks = []
    for cond in conds:
        path = store.attribution_path(run_id, item_id, cond)
        if not path.exists():
            raise UnscoredRunError(f"item {item_id!r} ({cond.value}) is not scored")
        a = ItemAttribution.from_dict(read_record(path))
        base = parse_trace(store.get_generation(baseline_run_id, item_id, Condition.BASELINE, Stage.COT).raw_text)
        masked = parse_trace(store.get_generation(run_id, item_id, cond, Stage.COT).raw_text)
        blocks.append(_render_diff(item_id, cond, a, base, masked, width))
    return "\n".join(blocks)


def _render_diff(item_id, cond, a: ItemAttribution, base, masked, width) -> str:
    lines = [f"=== {item_id} [{cond.value}] ==="]
    if a.refusal:
        lines.append("!!! model refused on the masked image")
    rows: list[tuple[str, str, str, str]] = []
    pairs = {b: (m, s) for b, m, s in a.alignment.pairs}
    for i, step in enumerate(base.steps):
        status = a.alignment.baseline_statuses[i].value
        if i in pairs:
            m, s = pairs[i]
            rows.append((status, f"{s:.2f}", f"{step.label}: {step.text}",
                         f"{masked.steps[m].label}: {masked.steps[m].text}"))
        else:
            rows.append((status, "-", f"{step.label}: {step.text}", "(no counterpart)"))
    for j, st in enumerate(a.alignment.masked_statuses):
        if st is StepStatus.NEW:
            rows.append((st.value, "-", "(no counterpart)", f"{masked.steps[j].label}: {masked.steps[j].text}"))

    header = f"{'#':>3} {'Status':<11} {'Sim':>4}  {'Original':<{width}}  Masked"
    lines.append(header)
    lines.append("-" * len(header))
    for n, (status, sim, left, right) in enumerate(rows):
        lw = textwrap.wrap(left, width) or [""]
        rw = textwrap.wrap(right, width) or [""]
        for k in range(max(len(lw), len(rw))):
            prefix = f"{n:>3} {status:<11} {sim:>4}" if k == 0 else " " * 20
            l = lw[k] if k < len(lw) else ""
            r = rw[k] if k < len(rw) else ""
            lines.append(f"{prefix}  {l:<{width}}  {r}".rstrip())
    flip = "Yes" if a.answer_flipped else "No"
    if a.answer_flipped:
        flip += f" ({a.baseline_answer} → {a.masked_answer})"
    lines += [
        "",
        f"Answer (original): {a.baseline_answer}",
        f"Answer (masked):   {a.masked_answer}",
        f"Answer flipped: {flip}   similarity {a.answer_similarity:.2f}",
        f"Step disrupted: {'Yes' if a.step_disrupted else 'No'}",
        f"Hallucination: {'Yes' if a.hallucinated else 'No'}"
        + ("" if a.hallucination_assessable else " (unassessable)"),
        f"Region attribution: {a.region_attribution.value}"
        + ("" if a.gt_step_similarity is None else f"   GT-step similarity {a.gt_step_similarity:.2f}"),
        f"Backend: {a.backend}",
    ]
    return "\n".join(lines) + "\n"
