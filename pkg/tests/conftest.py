from __future__ import annotations

import sys

import numpy as np
import pytest

from crm.dataset import BoundingBox, DatasetItem


class StubBackend:
    """Embeds each text to a vector chosen by the test, so similarities are exact."""

    name = "stub"
    version = "1"

    def __init__(self, vectors: dict[str, list[float]]):
        self.vectors = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}

    def embed(self, texts):
        return np.stack([self.vectors[t] for t in texts]) if texts else np.zeros((0, 2))


def unit_pair(sim: float) -> tuple[list[float], list[float]]:
    """Two unit vectors in the plane whose dot product is exactly ``sim``."""
    return [1.0, 0.0], [sim, float(np.sqrt(1.0 - sim * sim))]


def make_item(item_id: str = "x", boxes=((0, 0, 10, 10),), **kw) -> DatasetItem:
    return DatasetItem(
        id=item_id,
        image_ref=kw.pop("image_ref", f"{item_id}.png"),
        question=kw.pop("question", "What is shown?"),
        important_regions=tuple(BoundingBox(*b) for b in boxes),
        **kw,
    )


@pytest.fixture
def white4() -> np.ndarray:
    return np.full((4, 4, 3), 255, dtype=np.uint8)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(number))
