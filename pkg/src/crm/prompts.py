"""Prompt templates for the two-stage (reasoning, then short answer) protocol.

The template bodies are pinned by SHA-256 in the test suite; edit them only
deliberately.
"""

from __future__ import annotations

import hashlib
import re

SLOT = "{question}"

COT_TEMPLATE = """Think step by step to answer the given question about the image, and explain what message or idea it is trying to convey.
Use your observations and commonsense knowledge.

1) Visual Premises (VP): Identify and describe all key visual elements relevant to the question.
2) Commonsense Premises (CP): For each VP, explain the typical meaning, function, or implication of the element based on commonsense knowledge.
3) Inference/Conclusion (IC): Combine VP and CP to reason explicitly about what the image is showing and what it implies in relation to the question.
4) Final Conclusion: Provide a final answer to the question based on the reasoning.

Example
Image: A cup is pouring tea into a brain. Below the brain, there is a loading bar with the words "Loading CreaTEAvity".
Question: What is being poured into the brain?
Reasoning:
- VP1: A cup is pouring a brown liquid into a brain.
- VP2: The brain is partially filled with the liquid.
- VP3: There is a progress bar labeled "Loading CreaTEAvity."
- CP1: Brains symbolize intellect and creativity.
- CP2: Brown liquids like tea or coffee are associated with mental stimulation.
- CP3: A progress bar indicates an ongoing process or enhancement.
- IC1: The brown liquid represents tea being used to metaphorically enhance mental creativity.
- IC2: The progress bar reinforces the idea of creativity being gradually boosted.
Final Conclusion: Tea is being poured into the brain, suggesting it enhances creativity.

Question: {question}"""

ANSWER_TEMPLATE = """Provide a final short answer to the question, based only on the image and bounding box context.
Do not include step-by-step reasoning.
Question: {question}"""

MASKED_ANSWER_TEMPLATE = """Provide the final short answer based only on the masked image and context. Do not include step-by-step reasoning.
Question: {question}"""

JUDGE_TEMPLATE = """You are checking a chain-of-thought produced for an image in which one region was blacked out.
The blacked-out region contained: {hint}

Reasoning on the original image:
{baseline}

Reasoning on the masked image:
{masked}

Does the reasoning on the masked image assert visual content that could only come from the blacked-out region, or introduce other details unsupported by the masked image? Reply with exactly one word: Yes or No."""


class EmptyQuestionError(ValueError):
    pass


def _fill(template: str, question: str) -> str:
    if not question or not question.strip():
        raise EmptyQuestionError("question is empty")
    head, _, tail = template.partition(SLOT)
    return head + question + tail


def build_cot_prompt(question: str) -> str:
    return _fill(COT_TEMPLATE, question)


def build_answer_prompt(question: str, masked: bool) -> str:
    return _fill(MASKED_ANSWER_TEMPLATE if masked else ANSWER_TEMPLATE, question)


def build_judge_prompt(hint: str, baseline_steps: list[str], masked_steps: list[str]) -> str:
    def block(lines):
        return "\n".join(f"- {s}" for s in lines) if lines else "(no steps)"

    values = {"hint": hint or "(not described)", "baseline": block(baseline_steps), "masked": block(masked_steps)}
    return re.sub(r"\{(hint|baseline|masked)\}", lambda m: values[m.group(1)], JUDGE_TEMPLATE)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()
