"""Six-item mock bundle: synthetic images, a dataset file and canned model output.

The committed files under ``fixtures/mock`` are produced by
``python -m crm.fixtures``; regenerating must reproduce them byte for byte.

Three response files key the same (image, prompt) pairs:

``mock_responses.json``  plausible behaviour (flips, a refusal, garbage letters)
``mock_identical.json``  masked runs answer exactly as on the original image
``mock_scrambled.json``  masked reasoning shares no vocabulary with the baseline

Random-condition hashes assume ``MASK_SEED``.
"""

from __future__ import annotations

import json
import shutil
from importlib import resources
from pathlib import Path

import numpy as np

from ..dataset import BoundingBox, DatasetItem, dump_dataset
from ..imaging import image_hash, save_png
from ..masking import Condition
from ..pipeline import prepare_image
from ..prompts import build_answer_prompt, build_cot_prompt, prompt_hash

MASK_SEED = 7
WIDTH, HEIGHT = 96, 72


def _image(seed: int, boxes: list[BoundingBox]) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:HEIGHT, 0:WIDTH]
    base = rng.integers(40, 200, size=3)
    img = np.stack([(base[c] + 0.5 * xx + 0.3 * yy * (c + 1)) % 256 for c in range(3)], axis=-1)
    img = img.astype(np.uint8)
    for b in boxes:
        img[b.y:b.y2, b.x:b.x2] = rng.integers(60, 256, size=3, dtype=np.uint8)
    return img


ITEMS = [
    DatasetItem(
        id="Brain_Loading_Tea",
        image_ref="brain_loading_tea.png",
        question="What is being poured into the brain in the image?",
        important_regions=(BoundingBox(30, 6, 28, 30),),
        irrelevant_regions=(BoundingBox(4, 60, 20, 8),),
        gt_step_hint="teacup pouring tea",
        topic="advertising",
        difficulty="easy",
    ),
    DatasetItem(
        id="Fish_Container",
        image_ref="fish_container.png",
        question="What type of container is shown hanging from the fishing hook?",
        important_regions=(BoundingBox(52, 30, 16, 26),),
        gt_step_hint="clear plastic bottle on the hook",
        topic="environment",
        difficulty="medium",
    ),
    DatasetItem(
        id="Soda_Plug_CocaCola",
        image_ref="soda_plug_cocacola.png",
        question="What everyday object do the soda bottles form?",
        important_regions=(BoundingBox(8, 10, 30, 24),),
        gt_step_hint="bottles arranged as plug prongs",
        topic="advertising",
        difficulty="hard",
    ),
    DatasetItem(
        id="Panda_Laptop_Forest",
        image_ref="panda_laptop_forest.png",
        question="What is the boy looking at?",
        important_regions=(BoundingBox(50, 8, 26, 28),),
        gt_step_hint="panda sitting on the sofa using a laptop",
        topic="advertising",
        difficulty="medium",
    ),
    DatasetItem(
        id="Street_Sign_Arrow",
        image_ref="street_sign_arrow.png",
        question="Which direction does the sign tell drivers to turn?",
        important_regions=(BoundingBox(60, 40, 24, 20),),
        gt_step_hint="arrow painted on the sign",
        topic="traffic",
        difficulty="easy",
    ),
    DatasetItem(
        id="Clock_Melting",
        image_ref="clock_melting.png",
        question="What idea does the melting clock convey?",
        important_regions=(BoundingBox(20, 20, 30, 30),),
        gt_step_hint="clock dripping off the table edge",
        topic="art",
        difficulty="hard",
    ),
]

# (baseline cot, baseline answer, specific cot, specific answer, random cot, random answer)
TRACES: dict[str, tuple[str, str, str, str, str, str]] = {
    "Brain_Loading_Tea": (
        """Reasoning:
- VP1: A teacup is pouring tea into an open brain.
- VP2: The brain is half full of the brown tea.
- VP3: A loading bar under the brain reads "Loading CreaTEAvity".
- CP1: The brain stands for thinking and imagination.
- CP2: Tea is a drink people reach for to feel alert.
- CP3: A loading bar shows a process that is still filling up.
- IC1: The tea is presented as fuel that fills the mind with ideas.
- IC2: The loading bar says creativity grows as more tea flows in.
Final Conclusion: Tea is being poured into the brain to boost creativity.""",
        "Tea",
        """Reasoning:
- VP1: A dark rectangle hides the upper part of the picture.
- VP2: The brain is half full of a brown substance.
- VP3: A loading bar under the brain reads "Loading CreaTEAvity".
- CP1: The brain stands for thinking and imagination.
- CP3: A loading bar shows a process that is still filling up.
- IC1: The brain is being filled with creativity as the bar loads.
Final Conclusion: Creativity is loading into the brain.""",
        "Creativity",
        None,
        None,
    ),
    "Fish_Container": (
        """- VP1: A clear plastic bottle hangs from a fishing hook.
- VP2: Small fish swim around below the bottle.
- CP1: Fishing hooks normally catch fish, not rubbish.
- CP2: Plastic bottles are common ocean litter.
- IC1: The bottle on the hook shows that fishing now pulls plastic out of the sea.
Final Conclusion: A plastic bottle.""",
        "A plastic bottle",
        """- VP1: A black shape covers the end of the fishing line.
- VP2: Small fish swim around below the line.
- VP3: A plastic bag dangles from the hook in the water.
- CP1: Fishing hooks normally catch fish, not rubbish.
- IC1: The bag on the hook shows litter replacing the catch.
Final Conclusion: A plastic bag.""",
        "Plastic bag",
        None,
        None,
    ),
    "Soda_Plug_CocaCola": (
        """- VP1: Two soda bottles stand side by side like the prongs of a plug.
- VP2: A black cable runs from the base of the bottles.
- CP1: A plug connects a device to a power source.
- CP2: Soda is marketed as a source of energy.
- IC1: The bottles shaped like a plug suggest the drink recharges you.
Final Conclusion: An electrical plug.""",
        "An electrical plug",
        """- VP1: A black box sits in the left part of the picture.
- VP2: A black cable runs from the base of the box.
- CP1: A plug connects a device to a power source.
- CP2: Soda is marketed as a source of energy.
- IC1: The cable hints that something is being charged.
Final Conclusion: An electrical plug.""",
        "An electrical plug",
        """- VP1: Two soda bottles stand side by side like the prongs of a plug.
- VP2: A black cable runs from the base of the bottles.
- CP1: A plug connects a device to a power source.
- CP2: Soda is sold as a quick pick me up.
- IC1: The bottles shaped like a plug suggest the drink recharges you.
Final Conclusion: An electrical plug.""",
        "An electrical plug",
    ),
    "Panda_Laptop_Forest": (
        """- VP1: A young boy sits on a sofa in a lush forest.
- VP2: A panda on the sofa is using a laptop.
- VP3: The boy is looking at the panda.
- CP1: A forest suggests a remote natural place.
- CP2: A laptop gives access to information and entertainment.
- IC1: The boy watches the panda enjoy the laptop.
- IC2: The advert promises internet access even deep in nature.
Final Conclusion: The boy is looking at a panda using a laptop.""",
        "A panda using a laptop",
        """- VP1: A young boy sits on a sofa in a lush forest.
- VP2: A large black rectangle stands in front of the sofa.
- VP3: The boy faces the rectangle.
- CP1: A forest suggests a remote natural place.
- CP2: People sit facing a television when watching it.
- IC1: The rectangle is most likely a television screen.
Final Conclusion: The boy is looking at a television.""",
        "A television",
        None,
        None,
    ),
    "Street_Sign_Arrow": (
        """- VP1: A blue road sign stands beside the street.
- VP2: A white arrow painted on the sign points to the left.
- CP1: Road signs give instructions to drivers.
- IC1: The arrow tells drivers to turn left.
Final Conclusion: Left.""",
        "Left",
        """I cannot determine the content of the masked region, so I am unable to say which way the sign points.""",
        "Unable to determine",
        None,
        None,
    ),
    "Clock_Melting": (
        """- VP1: A pocket clock melts and drips off the edge of a table.
- VP2: The landscape behind is empty and dry.
- CP1: Clocks measure time.
- CP2: Melting suggests something losing its shape.
- IC1: A melting clock shows time as fluid rather than fixed.
Final Conclusion: Time is fluid and slips away.""",
        "Time is fluid",
        """- VP1: A dark patch covers the middle of the picture.
- VP2: The landscape behind is empty and dry.
- CP1: Clocks measure time. xqzrtw bbbbbbk
- CP2: Melting suggests something losing its shape. grrkkt
- IC1: The empty landscape shows time passing slowly.
Final Conclusion: Time passes slowly.""",
        "Time is fluid",
        None,
        None,
    ),
}

SCRAMBLED_COT = """- VP1: Zebras juggle violet xylophones quietly.
- VP2: Seventeen penguins knit woolen umbrellas.
- CP1: Volcanoes hum lullabies during autumn.
- IC1: Kangaroos prefer origami over bagpipes.
Final Conclusion: Jellyfish compose symphonies."""
SCRAMBLED_ANSWER = "Jellyfish compose symphonies"


def items() -> list[DatasetItem]:
    return list(ITEMS)


def build_bundle(out_dir: Path, mask_seed: int = MASK_SEED) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    dump_dataset(ITEMS, out_dir / "dataset.jsonl")
    variants: dict[str, list[dict[str, str]]] = {"responses": [], "identical": [], "scrambled": []}
    for n, item in enumerate(ITEMS):
        image = _image(n + 1, list(item.important_regions))
        save_png(image, out_dir / "images" / item.image_ref)
        b_cot, b_ans, s_cot, s_ans, r_cot, r_ans = TRACES[item.id]
        per_condition = {
            Condition.BASELINE: (b_cot, b_ans),
            Condition.SPECIFIC: (s_cot, s_ans),
            Condition.RANDOM: (r_cot or b_cot, r_ans or b_ans),
        }
        for cond, (cot, ans) in per_condition.items():
            pixels, _ = prepare_image(item, image, cond, mask_seed)
            ih = image_hash(pixels)
            masked = cond is not Condition.BASELINE
            cot_key = prompt_hash(build_cot_prompt(item.question))
            ans_key = prompt_hash(build_answer_prompt(item.question, masked))
            texts = {
                "responses": (cot, ans),
                "identical": (b_cot, b_ans),
                "scrambled": (SCRAMBLED_COT, SCRAMBLED_ANSWER) if masked else (b_cot, b_ans),
            }
            for variant, (c, a) in texts.items():
                variants[variant].append({"item_id": item.id, "condition": cond.value, "stage": "cot",
                                          "image_hash": ih, "prompt_hash": cot_key, "raw_text": c})
                variants[variant].append({"item_id": item.id, "condition": cond.value, "stage": "answer",
                                          "image_hash": ih, "prompt_hash": ans_key, "raw_text": a})
    for variant, rows in variants.items():
        payload = {"format_version": 1, "mask_seed": mask_seed, "responses": rows}
        (out_dir / f"mock_{variant}.json").write_text(
            json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir


def bundle_dir() -> Path:
    return Path(str(resources.files("crm").joinpath("fixtures/mock")))


def export_bundle(out_dir: Path) -> Path:
    """Copy the packaged bundle (dataset, images, responses, expected reports) to ``out_dir``."""
    shutil.copytree(bundle_dir(), out_dir, dirs_exist_ok=True)
    return Path(out_dir)


def run_pipeline(bundle: Path, store_root: Path, variant: str = "responses") -> str:
    """validate -> baseline -> specific -> random -> score x2 -> report, all through the CLI.

    Returns the Markdown report text.
    """
    from ..cli import main

    bundle, store_root = Path(bundle), Path(store_root)
    ds, imgs = str(bundle / "dataset.jsonl"), str(bundle / "images")
    fixture = str(bundle / f"mock_{variant}.json")
    common = ["--dataset", ds, "--images", imgs, "--run-dir", str(store_root), "--provider", "mock",
              "--mock-fixture", fixture, "--mask-seed", str(MASK_SEED), "--concurrency", "2"]
    steps = [
        ["validate", "--dataset", ds, "--images", imgs],
        ["run", "--run-id", "baseline", "--condition", "baseline", *common],
        ["run", "--run-id", "specific", "--condition", "specific", *common],
        ["run", "--run-id", "random", "--condition", "random", *common],
        ["score", "--run-dir", str(store_root), "--run", "specific", "--baseline-run", "baseline"],
        ["score", "--run-dir", str(store_root), "--run", "random", "--baseline-run", "baseline"],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"crm {argv[0]} exited with {code}")
    out = store_root / "report.md"
    code = main(["report", "--run-dir", str(store_root), "--run", "specific", "--run", "random",
                 "--format", "md", "--out", str(out)])
    if code != 0:
        raise RuntimeError(f"crm report exited with {code}")
    return out.read_text(encoding="utf-8")
