"""Parse a tagged reasoning trace, then a refusal and some letter soup."""

from __future__ import annotations

from crm.prompts import COT_TEMPLATE
from crm.trace import parse_trace

worked = COT_TEMPLATE.split("Reasoning:\n", 1)[1].split("\n\nQuestion:", 1)[0]
trace = parse_trace(worked)
for step in trace.steps:
    print(f"{step.label:<4} {step.text}")
print("conclusion:", trace.final_conclusion)

refusal = parse_trace("I'm sorry, but I can't help with identifying what is in this image.")
print("\nrefusal detected:", refusal.refusal, "| steps:", len(refusal.steps))

soup = parse_trace("VP1: Thr srfc shws crcls brght. CP1: Bkgrnd dsplys nmbrs clrly. IC1: Frgmnt.")
print(f"garbage score of vowel-stripped trace: {soup.garbage_score:.2f}")
for w in soup.warnings:
    print("warning:", w)
