"""Align baseline and masked steps and read off the step verdicts.

The lexical backend keeps this offline; pass ``--backend minilm`` to the
CLI for sentence embeddings.
"""

from __future__ import annotations

from crm.attribution import ScoringConfig, align_steps, score_answer_flip, score_step_disruption
from crm.similarity import LexicalBackend
from crm.trace import parse_trace

base = parse_trace(
    "VP1: A teacup pours tea toward a glowing brain.\n"
    "VP2: Sparks surround the brain.\n"
    "CP1: The brain glows where the tea lands.\n"
    "IC1: Tea is presented as fuel for creative thinking.\n"
    "Final Conclusion: Tea boosts creativity."
)
masked = parse_trace(
    "VP1: A black rectangle covers the upper left corner.\n"
    "VP2: Sparks surround the brain.\n"
    "CP1: Something dark sits beside the glowing brain.\n"
    "IC1: The brain is shown as energetic.\n"
    "Final Conclusion: The brain is active."
)

backend = LexicalBackend()
config = ScoringConfig()
alignment = align_steps(base, masked, backend, config)
for i, status in enumerate(alignment.baseline_statuses):
    print(f"baseline {base.steps[i].label:<4} {status.value}")
for j, status in enumerate(alignment.masked_statuses):
    print(f"masked   {masked.steps[j].label:<4} {status.value}")
print("step disruption:", score_step_disruption(alignment))

flipped, sim = score_answer_flip("Tea boosts creativity.", "The brain is active.", backend, config)
print(f"answer similarity {sim:.2f} -> flipped: {flipped}")
