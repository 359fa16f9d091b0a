"""Corpus-level rates with binomial standard errors, and report rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .attribution import ItemAttribution, RegionAttribution
from .masking import Condition

METRICS = ("answer_flip", "step_disruption", "hallucination")
METRIC_LABELS = {
    "answer_flip": "Answer flip rate",
    "step_disruption": "Step disruption",
    "hallucination": "Hallucination",
}
BUCKETS = tuple(b.value for b in RegionAttribution)
EXCLUSION_REASONS = ("refusal-on-baseline", "unassessable")


def standard_error(p: float, n: int) -> float:
    """sqrt(p(1-p)/n), the binomial standard error of a proportion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"proportion out of range: {p}")
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class Rate:
    p: float | None
    se: float | None
    n: int
    count: int

    @classmethod
    def from_counts(cls, count: int, n: int) -> Rate:
        if n == 0:
            return cls(None, None, 0, 0)
        p = count / n
        return cls(p, standard_error(p, n), n, count)


@dataclass
class MetricsSummary:
    condition: Condition
    n: int
    rates: dict[str, Rate]
    attribution_histogram: dict[str, int]
    excluded: dict[str, int]
    label: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition": self.condition.value,
            "label": self.label,
            "n": self.n,
            "rates": {k: {"p": r.p, "se": r.se, "n": r.n, "count": r.count} for k, r in self.rates.items()},
            "attribution_histogram": dict(self.attribution_histogram),
            "excluded": dict(self.excluded),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricsSummary:
        return cls(
            condition=Condition(d["condition"]),
            n=d["n"],
            rates={k: Rate(v["p"], v["se"], v["n"], v["count"]) for k, v in d["rates"].items()},
            attribution_histogram=dict(d["attribution_histogram"]),
            excluded=dict(d["excluded"]),
            label=d.get("label", ""),
            meta=d.get("meta", {}),
        )


def aggregate(attributions: Sequence[ItemAttribution], *, label: str = "",
              meta: dict[str, Any] | None = None) -> MetricsSummary:
    """Fold per-item verdicts into rates.

    Items whose baseline generation was a refusal are excluded from every
    rate. Items whose hallucination could not be assessed are left out of
    the hallucination denominator only. Both are counted in ``excluded``.
    """
    if not attributions:
        raise ValueError("no attributions to aggregate")
    conditions = {a.condition for a in attributions}
    if len(conditions) > 1:
        raise ValueError(f"mixed conditions: {sorted(c.value for c in conditions)}")
    condition = conditions.pop()

    included = [a for a in attributions if not a.baseline_refusal]
    assessable = [a for a in included if a.hallucination_assessable]
    rates = {
        "answer_flip": Rate.from_counts(sum(a.answer_flipped for a in included), len(included)),
        "step_disruption": Rate.from_counts(sum(a.step_disrupted for a in included), len(included)),
        "hallucination": Rate.from_counts(sum(a.hallucinated for a in assessable), len(assessable)),
    }
    hist = {b: 0 for b in BUCKETS}
    for a in included:
        hist[a.region_attribution.value] += 1
    excluded = {
        "refusal-on-baseline": len(attributions) - len(included),
        "unassessable": len(included) - len(assessable),
    }
    return MetricsSummary(condition, len(included), rates, hist, excluded, label, dict(meta or {}))


@dataclass
class ComparisonRow:
    metric: str
    p_specific: float | None
    p_random: float | None

    @property
    def delta(self) -> float | None:
        if self.p_specific is None or self.p_random is None:
            return None
        return self.p_specific - self.p_random


@dataclass
class Comparison:
    specific: MetricsSummary
    random: MetricsSummary
    rows: list[ComparisonRow]


def compare_conditions(specific: MetricsSummary, random: MetricsSummary) -> Comparison:
    rows = [ComparisonRow(m, specific.rates[m].p, random.rates[m].p) for m in METRICS]
    return Comparison(specific, random, rows)


# --- rendering ------------------------------------------------------------


def fmt_pct(p: float | None, se: float | None = None) -> str:
    if p is None:
        return "n/a"
    if se is None:
        return f"{100 * p:.2f}%"
    return f"{100 * p:.2f} ± {100 * se:.2f}%"


def _column_name(s: MetricsSummary) -> str:
    return s.label or s.condition.value


def _meta_lines(summaries: Sequence[MetricsSummary]) -> list[str]:
    lines = []
    for s in summaries:
        meta = ", ".join(f"{k}={s.meta[k]}" for k in sorted(s.meta))
        excl = ", ".join(f"{k}={v}" for k, v in s.excluded.items())
        lines.append(f"- {_column_name(s)} ({s.condition.value}): n={s.n}; excluded: {excl}"
                     + (f"; {meta}" if meta else ""))
    return lines


def _markdown_summaries(summaries: Sequence[MetricsSummary]) -> str:
    cols = [_column_name(s) for s in summaries]
    out = ["| Metric | " + " | ".join(cols) + " |", "|---|" + "---|" * len(cols)]
    for m in METRICS:
        cells = [fmt_pct(s.rates[m].p, s.rates[m].se) for s in summaries]
        out.append(f"| {METRIC_LABELS[m]} | " + " | ".join(cells) + " |")
    out.append("")
    out.append("| Region attribution | " + " | ".join(cols) + " |")
    out.append("|---|" + "---|" * len(cols))
    for b in BUCKETS:
        out.append(f"| {b} | " + " | ".join(str(s.attribution_histogram.get(b, 0)) for s in summaries) + " |")
    out.append("")
    out.extend(_meta_lines(summaries))
    return "\n".join(out) + "\n"


def _markdown_comparison(c: Comparison) -> str:
    out = ["| Metric | Specific | Random | Delta (pts) |", "|---|---|---|---|"]
    for row in c.rows:
        rs, rr = c.specific.rates[row.metric], c.random.rates[row.metric]
        delta = "n/a" if row.delta is None else f"{100 * row.delta:+.2f}"
        out.append(f"| {METRIC_LABELS[row.metric]} | {fmt_pct(rs.p, rs.se)} | {fmt_pct(rr.p, rr.se)} | {delta} |")
    out.append("")
    out.extend(_meta_lines([c.specific, c.random]))
    return "\n".join(out) + "\n"


def _csv(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def _num(x: float | None) -> str:
    return "" if x is None else repr(round(x, 10))


def render_report(obj: MetricsSummary | Comparison | Sequence[MetricsSummary], fmt: str = "md") -> str:
    """Render summaries or a specific-vs-random comparison as Markdown, CSV or JSON."""
    fmt = {"markdown": "md"}.get(fmt.lower(), fmt.lower())
    if isinstance(obj, MetricsSummary):
        obj = [obj]
    if fmt == "md":
        return _markdown_comparison(obj) if isinstance(obj, Comparison) else _markdown_summaries(obj)
    if fmt == "json":
        if isinstance(obj, Comparison):
            payload = {
                "kind": "comparison",
                "specific": obj.specific.to_dict(),
                "random": obj.random.to_dict(),
                "delta": {r.metric: r.delta for r in obj.rows},
            }
        else:
            payload = {"kind": "summaries", "summaries": [s.to_dict() for s in obj]}
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if fmt == "csv":
        if isinstance(obj, Comparison):
            rows = [("metric", "p_specific", "se_specific", "p_random", "se_random", "delta", "n_specific", "n_random")]
            for r in obj.rows:
                rs, rr = obj.specific.rates[r.metric], obj.random.rates[r.metric]
                rows.append((r.metric, _num(rs.p), _num(rs.se), _num(rr.p), _num(rr.se), _num(r.delta),
                             obj.specific.n, obj.random.n))
            return _csv(rows)
        rows = [("label", "condition", "metric", "p", "se", "n", "count")]
        for s in obj:
            for m in METRICS:
                r = s.rates[m]
                rows.append((_column_name(s), s.condition.value, m, _num(r.p), _num(r.se), r.n, r.count))
            for b in BUCKETS:
                rows.append((_column_name(s), s.condition.value, f"bucket:{b}", "", "", s.n,
                             s.attribution_histogram.get(b, 0)))
        return _csv(rows)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_json_report(text: str) -> list[MetricsSummary] | Comparison:
    data = json.loads(text)
    if data["kind"] == "comparison":
        return compare_conditions(MetricsSummary.from_dict(data["specific"]),
                                  MetricsSummary.from_dict(data["random"]))
    return [MetricsSummary.from_dict(d) for d in data["summaries"]]
