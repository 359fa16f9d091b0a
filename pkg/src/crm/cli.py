"""Command-line entry point: ``crm validate | run | score | report | diff-item | fixtures``.

Exit codes: 0 success, 1 validation or scoring findings, 2 operational failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .attribution import HallucinationMode, ScoringConfig
from .client import GenerationConfig, ProviderKind, RetryPolicy, call_with_retry, make_provider
from .dataset import DatasetError, load_dataset, validate_item
from .imaging import ImageDecodeError, image_dims
from .masking import Condition
from .pipeline import (MissingCounterpartError, Runner, UnknownItemError, UnscoredRunError, build_report,
                       diff_item, run_config, score_run, start_run)
from .runstore import RunStore, RunStoreError, atomic_write_bytes
from .similarity import BackendUnavailableError, make_backend
from .trace import load_lexicon

EXIT_OK, EXIT_FINDINGS, EXIT_FAILURE = 0, 1, 2


def _add_generation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=[k.value for k in ProviderKind], default="mock")
    p.add_argument("--endpoint", help="chat-completions URL (http provider)")
    p.add_argument("--model", default="mock", help="model name sent to the provider")
    p.add_argument("--mock-fixture", help="canned-response file for the mock provider")
    p.add_argument("--cot-temperature", type=float, default=0.2)
    p.add_argument("--answer-temperature", type=float, default=0.0)
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--timeout", type=float, default=60.0)


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--step-threshold", type=float, default=0.80)
    p.add_argument("--answer-threshold", type=float, default=0.90)
    p.add_argument("--match-floor", type=float, default=0.30)
    p.add_argument("--hallucination-mode", choices=[m.value for m in HallucinationMode], default="heuristic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crm", description="Contrastive region masking harness for visual CoT.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset records against their images")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", required=True)

    p = sub.add_parser("run", help="generate reasoning and answers for one or more conditions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--run-dir", required=True, help="store root holding runs/ and cache/")
    p.add_argument("--run-id", required=True)
    p.add_argument("--condition", action="append", choices=[c.value for c in Condition],
                   help="repeatable; default baseline")
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--rate-limit", type=float, default=None, help="requests per second")
    p.add_argument("--resume", action="store_true", help="continue an existing run")
    _add_generation_flags(p)
    _add_scoring_flags(p)

    p = sub.add_parser("score", help="compare a masked run with a baseline run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--baseline-run", required=True)
    p.add_argument("--backend", default="lexical", help="lexical | minilm | http:<url>")
    p.add_argument("--refusal-lexicon")
    p.add_argument("--judge-endpoint", help="chat endpoint for judge mode")
    p.add_argument("--judge-model")
    _add_scoring_flags(p)

    p = sub.add_parser("report", help="render rates for scored runs")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--format", choices=["md", "csv", "json"], default="md")
    p.add_argument("--out", help="also write the report here")

    p = sub.add_parser("diff-item", help="side-by-side steps for one item")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--baseline-run", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--condition", choices=["specific", "random"])

    p = sub.add_parser("fixtures", help="write the bundled six-item mock dataset to a directory")
    p.add_argument("--out", required=True)
    return parser


def _scoring(args) -> ScoringConfig:
    return ScoringConfig(args.step_threshold, args.answer_threshold, args.match_floor,
                         HallucinationMode(args.hallucination_mode))


def cmd_validate(args) -> int:
    items = load_dataset(args.dataset)
    images = Path(args.images)
    bad = 0
    for item in items:
        path = images / item.image_ref
        try:
            dims = image_dims(path)
        except FileNotFoundError:
            print(f"{item.id}\tERROR  image-missing: {path}")
            bad += 1
            continue
        except ImageDecodeError as exc:
            print(f"{item.id}\tERROR  image-undecodable: {exc}")
            bad += 1
            continue
        report = validate_item(item, dims)
        print(report.format_line())
        bad += not report.ok
    print(f"{len(items)} items, {bad} with errors", file=sys.stderr)
    return EXIT_FINDINGS if bad else EXIT_OK


def cmd_run(args) -> int:
    gen = GenerationConfig(
        provider=ProviderKind(args.provider), model_name=args.model, endpoint=args.endpoint,
        cot_temperature=args.cot_temperature, answer_temperature=args.answer_temperature,
        timeout=args.timeout, retry=RetryPolicy(max_attempts=args.max_attempts),
        mock_fixture=str(Path(args.mock_fixture).resolve()) if args.mock_fixture else None,
    )
    scoring = _scoring(args)
    store = RunStore(args.run_dir)
    conditions = [Condition(c) for c in (args.condition or ["baseline"])]
    if args.resume:
        manifest = store.resume_run(args.run_id, run_config(gen, scoring, args.mask_seed))
    else:
        manifest = start_run(store, args.run_id, load_dataset(args.dataset), Path(args.images), conditions,
                             gen, scoring, args.mask_seed)
    for item_id, errs in manifest.excluded.items():
        print(f"excluded {item_id}: {'; '.join(errs)}", file=sys.stderr)
    provider = make_provider(gen, rate_limit=args.rate_limit)
    stats = Runner(store, gen, provider, Path(args.images), args.mask_seed, args.concurrency).execute(manifest)
    print(f"run {manifest.run_id}: {stats.done} done, {stats.failed} failed, "
          f"{stats.provider_calls} provider calls, {stats.cache_hits} cache hits")
    for key, msg in sorted(stats.failures.items()):
        print(f"FAILED {key}: {msg}", file=sys.stderr)
    return EXIT_OK if stats.failed == 0 else EXIT_FAILURE


def _judge(args):
    if not args.judge_endpoint:
        return None
    gen = GenerationConfig(provider=ProviderKind.HTTP_CHAT, endpoint=args.judge_endpoint,
                           model_name=args.judge_model or "judge")
    provider = make_provider(gen)

    def judge(prompt: str) -> str:
        resp, _ = call_with_retry(provider, prompt, None, temperature=0.0, max_tokens=8, policy=gen.retry)
        return resp.text

    return judge


def cmd_score(args) -> int:
    store = RunStore(args.run_dir)
    lexicon = load_lexicon(args.refusal_lexicon) if args.refusal_lexicon else None
    atts, missing = score_run(store, args.run, args.baseline_run, make_backend(args.backend), _scoring(args),
                              judge=_judge(args), lexicon=lexicon)
    print(f"scored {len(atts)} item(s) of run {args.run} against {args.baseline_run}")
    for item_id in missing:
        print(f"missing-counterpart: {item_id}", file=sys.stderr)
    return EXIT_FINDINGS if missing else EXIT_OK


def cmd_report(args) -> int:
    store = RunStore(args.run_dir)
    text = build_report(store, args.run, args.format)
    sys.stdout.write(text)
    name = "+".join(args.run)
    atomic_write_bytes(store.run_dir(args.run[0]) / "reports" / f"{name}.{args.format}", text.encode("utf-8"))
    if args.out:
        atomic_write_bytes(Path(args.out), text.encode("utf-8"))
    return EXIT_OK


def cmd_diff_item(args) -> int:
    store = RunStore(args.run_dir)
    sys.stdout.write(diff_item(store, args.run, args.baseline_run, args.item,
                               Condition(args.condition) if args.condition else None))
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from .fixtures import export_bundle

    out = export_bundle(Path(args.out))
    print(f"wrote mock bundle to {out}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "score": cmd_score,
    "report": cmd_report,
    "diff-item": cmd_diff_item,
    "fixtures": cmd_fixtures,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UnknownItemError as exc:
        print(f"error: unknown item {exc.args[0]!r}", file=sys.stderr)
        return EXIT_FINDINGS
    except (MissingCounterpartError, UnscoredRunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except (DatasetError, FileNotFoundError, RunStoreError, BackendUnavailableError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
