"""The ten acceptance criteria, each at its stated tolerance and time budget.

Run under pytest (one test per criterion, plus a summary block at the end of
the session) or directly with ``python3 tests/test_acceptance.py``. Either way
one PASS/FAIL line is printed per criterion.
"""

from __future__ import annotations

import contextlib
import io
import logging
import math
import random
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import StubBackend, make_item, unit_pair  # noqa: E402
from oracles import brute_force_matching, mask_oracle, rect_gap, rects_intersect  # noqa: E402
from reported_margins import N_ITEMS, ROWS  # noqa: E402

from crm.attribution import (ItemAttribution, RegionAttribution, ScoringConfig, StepAlignment, StepStatus,  # noqa: E402
                             align_steps, mentions, region_terms, score_answer_flip)
from crm.client import GenerationConfig, MockProvider  # noqa: E402
from crm.dataset import BoundingBox, load_dataset  # noqa: E402
from crm.fixtures import MASK_SEED, bundle_dir  # noqa: E402
from crm.fixtures import run_pipeline as fixture_pipeline  # noqa: E402
from crm.masking import Condition, InfeasiblePlacementError, mask_specific, min_gap, sample_random_boxes  # noqa: E402
from crm.metrics import aggregate, standard_error  # noqa: E402
from crm.pipeline import Runner, load_attributions, run_config, start_run  # noqa: E402
from crm.prompts import COT_TEMPLATE  # noqa: E402
from crm.runstore import RunStore, Status  # noqa: E402
from crm.similarity import LexicalBackend, similarity  # noqa: E402
from crm.trace import ReasoningStep, ReasoningTrace, Tag, parse_trace  # noqa: E402

pytestmark = pytest.mark.acceptance

RESULTS: dict[int, tuple[bool, str]] = {}


def _timed(budget: float | None, fn):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed >= budget:
        ok = False
        detail += f"; over budget ({elapsed:.2f}s >= {budget:.0f}s)"
    return ok, f"{detail} [{elapsed:.2f}s]"


# 1 -------------------------------------------------------------------------


def criterion_1():
    def run():
        bad = []
        for table, model, metric, p, se in ROWS:
            got = 100 * standard_error(p / 100, N_ITEMS)
            if abs(got - se) > 0.01 + 1e-9:
                bad.append(f"{table}/{model}/{metric}: {p:.2f} -> {got:.3f} vs printed {se:.2f}")
        detail = f"{len(ROWS) - len(bad)}/{len(ROWS)} margins within 0.01 pts"
        if bad:
            detail += "; mismatches: " + "; ".join(bad)
        return not bad, detail

    return _timed(1.0, run)


# 2 -------------------------------------------------------------------------


def criterion_2():
    rng = np.random.default_rng(2)
    align = StepAlignment([], [], [])

    def run():
        mismatches = 0
        for _ in range(1000):
            n = int(rng.integers(1, 2001))
            flips, disr, hall = (rng.random(n) < rng.random() for _ in range(3))
            atts = [ItemAttribution(f"i{k}", Condition.SPECIFIC, bool(f), 0.0, bool(d), bool(h),
                                    RegionAttribution.INCORRECT, align, False)
                    for k, (f, d, h) in enumerate(zip(flips, disr, hall))]
            summary = aggregate(atts)
            for name, vec in (("answer_flip", flips), ("step_disruption", disr), ("hallucination", hall)):
                count = 0
                for v in vec:
                    count += 1 if v else 0
                p = count / n
                se = math.sqrt(p * (1 - p) / n)
                r = summary.rates[name]
                mismatches += (r.p != p) + (r.se != se)
        return mismatches == 0, f"1000 vectors, {mismatches} exact-equality mismatches"

    return _timed(5.0, run)


# 3 -------------------------------------------------------------------------


def criterion_3():
    rng = np.random.default_rng(3)

    def run():
        bad_pixels = 0
        for _ in range(100):
            w, h = int(rng.integers(1, 49)), int(rng.integers(1, 49))
            channels = int(rng.choice([3, 4]))
            img = rng.integers(0, 256, (h, w, channels), dtype=np.uint8)
            boxes = []
            for _ in range(int(rng.integers(1, 4))):
                x, y = int(rng.integers(-4, w)), int(rng.integers(-4, h))
                bw, bh = int(rng.integers(1, w + 5)), int(rng.integers(1, h + 5))
                box = BoundingBox(x, y, bw, bh)
                if box.clamp(w, h) is not None:
                    boxes.append(box)
            if not boxes:
                boxes = [BoundingBox(0, 0, 1, 1)]
            got = mask_specific(img, boxes).pixels
            bad_pixels += int((got != mask_oracle(img, boxes)).any(axis=2).sum())
        return bad_pixels == 0, f"100 images, {bad_pixels} mismatching pixels"

    return _timed(10.0, run)


# 4 -------------------------------------------------------------------------


def criterion_4():
    rng = np.random.default_rng(4)

    def run():
        placements = intersections = violations = irreproducible = 0
        configs = 0
        while placements < 10_000:
            w, h = int(rng.integers(40, 2001)), int(rng.integers(40, 2001))
            gt = []
            for _ in range(int(rng.integers(1, 3))):
                gw, gh = int(rng.integers(1, w // 4 + 1)), int(rng.integers(1, h // 4 + 1))
                gt.append(BoundingBox(int(rng.integers(0, w - gw + 1)), int(rng.integers(0, h - gh + 1)), gw, gh))
            seed = int(rng.integers(0, 2**63))
            try:
                boxes = sample_random_boxes((w, h), gt, 10, seed)
            except InfeasiblePlacementError:
                continue
            configs += 1
            gap = min_gap((w, h))
            for b in boxes:
                inside = 0 <= b.x and b.x2 <= w and 0 <= b.y and b.y2 <= h
                for g in gt:
                    intersections += rects_intersect(b, g)
                    violations += (rect_gap(b, g) < gap) or not inside
            irreproducible += sample_random_boxes((w, h), gt, 10, seed) != boxes
            placements += len(boxes)
        ok = intersections == violations == irreproducible == 0
        return ok, (f"{placements} placements over {configs} configurations: {intersections} intersections, "
                    f"{violations} gap/bounds violations, {irreproducible} irreproducible draws")

    return _timed(30.0, run)


# 5 -------------------------------------------------------------------------

WORKED = COT_TEMPLATE.split("Reasoning:\n", 1)[1].split("\n\nQuestion:", 1)[0]


def criterion_5():
    rng = random.Random(5)

    def run():
        tr = parse_trace(WORKED)
        labels = [s.label for s in tr.steps]
        golden = (labels == ["VP1", "VP2", "VP3", "CP1", "CP2", "CP3", "IC1", "IC2"]
                  and tr.final_conclusion == "Tea is being poured into the brain, suggesting it enhances creativity.")
        crashes = 0
        for _ in range(10_000):
            blob = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 200)))
            try:
                parse_trace(blob.decode("utf-8", errors="replace"))
                parse_trace(blob.decode("latin-1"))
            except Exception:
                crashes += 1
        return golden and crashes == 0, f"golden labels {labels}; 10000 fuzz inputs, {crashes} failures"

    return _timed(None, run)


# 6 -------------------------------------------------------------------------

_VOCAB = "cup tea brain pour liquid bar loading creativity panda laptop boy sofa forest sign arrow left".split()


def _random_trace(rng: random.Random) -> ReasoningTrace:
    steps = []
    for k in range(rng.randint(0, 6)):
        text = " ".join(rng.choice(_VOCAB) for _ in range(rng.randint(1, 5)))
        steps.append(ReasoningStep(Tag.VP, k + 1, text))
    return ReasoningTrace(steps, None, "")


def criterion_6():
    rng = random.Random(6)
    backend = LexicalBackend()
    config = ScoringConfig()

    def run():
        worst = 0.0
        for _ in range(500):
            base, masked = _random_trace(rng), _random_trace(rng)
            al = align_steps(base, masked, backend, config)
            weights = np.array([[similarity(backend, b.text, m.text) for m in masked.steps] for b in base.steps]
                               ).reshape(len(base.steps), len(masked.steps))
            worst = max(worst, abs(al.total - brute_force_matching(weights, config.match_floor)))
        return worst <= 1e-9, f"500 pairs, max |matching - exhaustive| = {worst:.2e}"

    return _timed(60.0, run)


# 7 -------------------------------------------------------------------------


def criterion_7():
    def backend(sim):
        a, b = unit_pair(sim)
        return StubBackend({"base": a, "masked": b})

    def step_status(sim):
        return align_steps(ReasoningTrace([ReasoningStep(Tag.VP, 1, "base")], None, ""),
                           ReasoningTrace([ReasoningStep(Tag.VP, 1, "masked")], None, ""),
                           backend(sim)).baseline_statuses[0]

    def run():
        at_step, below_step = step_status(0.80), step_status(0.80 - 1e-6)
        at_ans, below_ans = (score_answer_flip("base", "masked", backend(s))[0] for s in (0.90, 0.90 - 1e-6))
        ok = (at_step is StepStatus.UNCHANGED and below_step is StepStatus.MODIFIED
              and at_ans is False and below_ans is True)
        return ok, (f"step 0.80 -> {at_step.value}, 0.80-1e-6 -> {below_step.value}; "
                    f"answer 0.90 -> flipped={at_ans}, 0.90-1e-6 -> flipped={below_ans}")

    return _timed(None, run)


# 8 -------------------------------------------------------------------------


def run_pipeline(bundle: Path, store_root: Path, variant: str = "responses") -> str:
    # the CLI chatters on stdout/stderr; keep the criterion lines readable
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        return fixture_pipeline(bundle, store_root, variant)



def _rates(root: Path) -> dict[str, dict[str, float]]:
    store = RunStore(root)
    out = {}
    for run_id in ("specific", "random"):
        for cond, atts in load_attributions(store, run_id).items():
            out[cond.value] = {k: r.p for k, r in aggregate(atts).rates.items()}
    return out


def criterion_8():
    def run():
        problems = []
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            first = run_pipeline(bundle_dir(), tmp / "a")
            second = run_pipeline(bundle_dir(), tmp / "b")
            if first != second:
                problems.append("two executions differ")
            if first != (bundle_dir() / "expected_report_responses.md").read_text(encoding="utf-8"):
                problems.append("report differs from the packaged expected report")
            run_pipeline(bundle_dir(), tmp / "same", "identical")
            same = _rates(tmp / "same")
            if any(p != 0.0 for cond in same.values() for p in cond.values()):
                problems.append(f"identical fixtures gave nonzero rates {same}")
            run_pipeline(bundle_dir(), tmp / "scr", "scrambled")
            scr = _rates(tmp / "scr")
            if any(cond["step_disruption"] != 1.0 for cond in scr.values()):
                problems.append(f"scrambled fixtures gave step disruption {scr}")
        return not problems, "; ".join(problems) or "byte-identical reports; identical 0/0/0; scrambled disruption 100%"

    return _timed(None, run)


# 9 -------------------------------------------------------------------------


def criterion_9():
    def run():
        problems = []
        refusals = asserting = 0
        items = {i.id: i for i in load_dataset(bundle_dir() / "dataset.jsonl")}
        with tempfile.TemporaryDirectory() as tmp:
            run_pipeline(bundle_dir(), Path(tmp))
            store = RunStore(tmp)
            for run_id in ("specific", "random"):
                for cond, atts in load_attributions(store, run_id).items():
                    for a in atts:
                        if a.refusal:
                            refusals += 1
                            if not a.step_disrupted or a.hallucinated:
                                problems.append(f"{a.item_id}/{cond.value}: refusal not propagated")
                        masked = parse_trace(store.get_generation(run_id, a.item_id, cond, "cot").raw_text)
                        terms = region_terms(items[a.item_id].gt_step_hint)
                        new_assert = any(
                            st is StepStatus.NEW and any(mentions(s.text, t) for t in terms)
                            for s, st in zip(masked.steps, a.alignment.masked_statuses)
                        )
                        if new_assert and not a.refusal:
                            asserting += 1
                            if not a.hallucinated:
                                problems.append(f"{a.item_id}/{cond.value}: New step asserts masked term")
        if refusals == 0 or asserting == 0:
            problems.append(f"fixtures exercise {refusals} refusals and {asserting} term-asserting New steps")
        return not problems, "; ".join(problems) or (
            f"{refusals} refusal item(s) disrupted and not hallucinated; "
            f"{asserting} term-asserting New-step item(s) hallucinated")

    return _timed(None, run)


# 10 ------------------------------------------------------------------------


class _Flaky:
    def __init__(self, inner, fail_every):
        self.inner, self.fail_every, self.calls = inner, fail_every, 0

    def complete(self, prompt, image, *, temperature, max_tokens):
        self.calls += 1
        if self.calls % self.fail_every == 0:
            raise ConnectionResetError("simulated crash")
        return self.inner.complete(prompt, image, temperature=temperature, max_tokens=max_tokens)


def criterion_10():
    bundle = bundle_dir()
    gen = GenerationConfig(mock_fixture=str(bundle / "mock_responses.json"))
    cfg = run_config(gen, ScoringConfig(), MASK_SEED)
    conditions = [Condition.BASELINE, Condition.SPECIFIC, Condition.RANDOM]

    def mock():
        return MockProvider.from_file(bundle / "mock_responses.json")

    def run():
        logging.getLogger("crm").setLevel(logging.CRITICAL)  # the simulated crash logs every failure
        items = load_dataset(bundle / "dataset.jsonl")
        with tempfile.TemporaryDirectory() as tmp:
            store = RunStore(tmp)
            m = start_run(store, "done", items, bundle / "images", conditions, gen, ScoringConfig(), MASK_SEED)
            Runner(store, gen, mock(), bundle / "images", MASK_SEED).execute(m)
            rerun = mock()
            Runner(store, gen, rerun, bundle / "images", MASK_SEED).execute(store.resume_run("done", cfg))

            # the crash run uses its own cache root so the resume cannot be served from the first run
            store2 = RunStore(Path(tmp) / "crash")
            m2 = start_run(store2, "crash", items, bundle / "images", conditions, gen, ScoringConfig(), MASK_SEED)
            Runner(store2, gen, _Flaky(mock(), 4), bundle / "images", MASK_SEED, concurrency=1).execute(m2)
            left = set(store2.load_manifest("crash").keys_with(Status.FAILED, Status.PENDING))
            resumed = store2.resume_run("crash", cfg)
            enqueued = set(resumed.pending())
            after = mock()
            Runner(store2, gen, after, bundle / "images", MASK_SEED).execute(resumed)
            reissued = {r["key"] for r in after.requests}
            complete = store2.load_manifest("crash").pending() == []
        ok = rerun.calls == 0 and enqueued == left and after.calls == len(left) > 0 and complete
        return ok, (f"re-run of completed run: {rerun.calls} provider calls; crash left {len(left)} unfinished, "
                    f"resume issued {after.calls} calls ({len(reissued)} distinct), run complete={complete}")

    return _timed(None, run)


CRITERIA = {
    1: ("margin reproduction", criterion_1),
    2: ("aggregation oracle", criterion_2),
    3: ("masking exactness", criterion_3),
    4: ("random-mask geometry", criterion_4),
    5: ("parser golden and totality", criterion_5),
    6: ("alignment oracle", criterion_6),
    7: ("threshold semantics", criterion_7),
    8: ("end-to-end determinism", criterion_8),
    9: ("refusal and hallucination invariants", criterion_9),
    10: ("cache soundness", criterion_10),
}


def format_line(number: int) -> str:
    ok, detail = RESULTS[number]
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {CRITERIA[number][0]}: {detail}"


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    RESULTS[number] = CRITERIA[number][1]()
    with capsys.disabled():
        print("\n" + format_line(number))
    assert RESULTS[number][0], format_line(number)


if __name__ == "__main__":
    failed = 0
    for n in sorted(CRITERIA):
        RESULTS[n] = CRITERIA[n][1]()
        failed += not RESULTS[n][0]
        print(format_line(n), flush=True)
    sys.exit(1 if failed else 0)
