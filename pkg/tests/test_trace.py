from __future__ import annotations

import re

from hypothesis import given, settings
from hypothesis import strategies as st

from crm.prompts import COT_TEMPLATE
from crm.trace import Tag, default_lexicon, detect_refusal, garbage_score, is_garbage_token, load_lexicon, parse_trace

# the worked example embedded in the reasoning template
WORKED = COT_TEMPLATE.split("Reasoning:\n", 1)[1].split("\n\nQuestion:", 1)[0]
TEA_FINAL = "Tea is being poured into the brain, suggesting it enhances creativity."


def test_worked_example():
    tr = parse_trace(WORKED)
    assert [s.label for s in tr.steps] == ["VP1", "VP2", "VP3", "CP1", "CP2", "CP3", "IC1", "IC2"]
    assert tr.steps[0].text == "A cup is pouring a brown liquid into a brain."
    assert tr.final_conclusion == TEA_FINAL
    assert tr.warnings == [] and not tr.refusal and tr.garbage_score == 0.0


def test_empty():
    tr = parse_trace("")
    assert tr.steps == [] and tr.final_conclusion is None and tr.warnings == ["empty-output"]
    assert not detect_refusal("")


def test_continuation_folding():
    tr = parse_trace("VP1: a\n\nblah\nFinal Conclusion: x")
    assert [(s.label, s.text) for s in tr.steps] == [("VP1", "a blah")]
    assert tr.final_conclusion == "x"


def test_label_variants():
    raw = "* **VP1:** bold one\n  vp 2 :  spaced\n1. CP1: numbered\n- IC1:tight\nFINAL CONCLUSION: done"
    tr = parse_trace(raw)
    assert [(s.label, s.text) for s in tr.steps] == [
        ("VP1", "bold one"), ("VP2", "spaced"), ("CP1", "numbered"), ("IC1", "tight")]
    assert tr.final_conclusion == "done"


def test_leading_prose_becomes_other_steps():
    tr = parse_trace("The image is dark.\nVery dark.\n\nA box is visible.\n\nVP1: box\nFinal Conclusion: box")
    assert [(s.tag, s.index, s.text) for s in tr.steps] == [
        (Tag.OTHER, 1, "The image is dark. Very dark."), (Tag.OTHER, 2, "A box is visible."), (Tag.VP, 1, "box")]


def test_first_final_wins_and_missing_final_warns():
    tr = parse_trace("VP1: a\nFinal Conclusion: one\nFinal Conclusion: two")
    assert tr.final_conclusion == "one" and "duplicate-final" in tr.warnings
    assert "missing-final" in parse_trace("VP1: a").warnings


def test_repeated_labels_keep_order():
    tr = parse_trace("VP1: a\nVP1: b\nCP1: c")
    assert [s.text for s in tr.steps] == ["a", "b", "c"]


def test_refusal():
    msg = "I cannot determine the content of the masked region."
    assert detect_refusal(msg)
    tr = parse_trace(msg)
    assert tr.refusal and tr.steps[0].tag is Tag.OTHER
    assert not detect_refusal(WORKED)
    assert not detect_refusal("VP1: I cannot see the object clearly.\nFinal Conclusion: unknown")
    assert not detect_refusal("x" * 250 + " I cannot see it")


def test_refusal_curly_apostrophe():
    assert detect_refusal("I can’t tell what is behind the black box.")


def test_custom_lexicon(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("# comment\nnope nope\n")
    lex = load_lexicon(p)
    assert lex == ("nope nope",)
    assert detect_refusal("Nope nope, not doing it.", lexicon=lex)
    assert not detect_refusal("I cannot see it.", lexicon=lex)
    assert "i cannot" in default_lexicon()


def test_garbage_examples():
    assert garbage_score("The cat sat on the warm windowsill today.") == 0.0
    assert garbage_score("") == 0.0
    # two of five whitespace tokens qualify
    assert garbage_score("xqzrtw bbbbbbk normal words here") == 0.4
    assert not is_garbage_token("rhythms")
    assert not is_garbage_token("2024xyz")
    assert not is_garbage_token("======")


def test_garbage_flags_warning():
    tr = parse_trace("VP1: xqzrtw bbbbbbk grrkkt\nFinal Conclusion: x")
    assert "garbage" in tr.warnings and tr.garbage_score > 0.2


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_totality_on_bytes(data):
    tr = parse_trace(data.decode("utf-8", errors="replace"))
    assert 0.0 <= tr.garbage_score <= 1.0
    assert all(s.text for s in tr.steps)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=200))
def test_garbage_monotone(text):
    assert garbage_score(text + " xqzrtw") >= garbage_score(text)


_word = st.text(st.sampled_from("abcdefghij "), min_size=1, max_size=20).filter(lambda s: s.strip())


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["VP", "CP", "IC"]), st.integers(1, 9), _word), max_size=8))
def test_order_preservation(steps):
    raw = "\n".join(f"- {t}{i}: {w}" for t, i, w in steps) + "\nFinal Conclusion: end"
    tr = parse_trace(raw)
    rebuilt = " ".join(f"{s.label}: {s.text}" for s in tr.steps)
    expected = " ".join(f"{t}{i}: {w}" for t, i, w in steps)
    assert re.sub(r"\s+", " ", rebuilt).strip() == re.sub(r"\s+", " ", expected).strip()
