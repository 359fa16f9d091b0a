from __future__ import annotations

import hashlib

import pytest

from crm.prompts import (ANSWER_TEMPLATE, COT_TEMPLATE, MASKED_ANSWER_TEMPLATE, EmptyQuestionError,
                         build_answer_prompt, build_cot_prompt, build_judge_prompt, prompt_hash)

PINNED = {
    "cot": "26e3910ef52aef8515d48cb6d2d38297920d72970eb9bf2c39dc21ac96bfa666",
    "answer": "8ece827e56bbb776c37225fcdfa4ee48a2ab5b0c6d19a830f5b384d18d446d9f",
    "masked_answer": "fd8a12575b1b200d74748c2f4802c750b7d4eb48c3c34f51d682eb2861e08e52",
}


@pytest.mark.parametrize("name,template", [
    ("cot", COT_TEMPLATE), ("answer", ANSWER_TEMPLATE), ("masked_answer", MASKED_ANSWER_TEMPLATE),
])
def test_template_hash_pinned(name, template):
    # any edit to a template must update this pin deliberately
    assert hashlib.sha256(template.encode("utf-8")).hexdigest() == PINNED[name]


def test_cot_prompt_substitution():
    p = build_cot_prompt("Q?")
    assert p.endswith("Question: Q?")
    assert p.startswith("Think step by step to answer the given question")
    assert "- VP1: A cup is pouring a brown liquid into a brain." in p
    assert p == build_cot_prompt("Q?")


def test_literal_slot_in_question_substituted_once():
    p = build_cot_prompt("what is {question}?")
    assert p.endswith("Question: what is {question}?")
    assert p.count("{question}") == 1


def test_answer_prompts():
    plain, masked = build_answer_prompt("Q?", False), build_answer_prompt("Q?", True)
    assert "based only on the image and bounding box context" in plain
    assert "based only on the masked image and context" in masked
    for p in (plain, masked):
        assert "Do not include step-by-step reasoning." in p
        assert p.endswith("Question: Q?")


@pytest.mark.parametrize("q", ["", "   ", "\n"])
def test_empty_question(q):
    with pytest.raises(EmptyQuestionError):
        build_cot_prompt(q)
    with pytest.raises(EmptyQuestionError):
        build_answer_prompt(q, True)


def test_judge_prompt_single_pass():
    p = build_judge_prompt("a {masked} bottle", ["one"], [])
    assert "a {masked} bottle" in p
    assert "- one" in p and "(no steps)" in p


def test_prompt_hash_is_sha256():
    assert prompt_hash("x") == hashlib.sha256(b"x").hexdigest()
