"""Region-annotated image/question datasets.

Records are stored one JSON object per line::

    {"id": "...", "image": "relative/path.png", "question": "...",
     "important_regions": [{"x": 0, "y": 0, "w": 10, "h": 10}],
     "irrelevant_regions": [], "gt_step_hint": "...", "topic": "...",
     "difficulty": "..."}

Coordinates are integer pixels with the origin at the top-left corner.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

FULL_COVERAGE_FRACTION = 0.90
UNLABELED = "unlabeled"

_KNOWN_FIELDS = (
    "id",
    "image",
    "question",
    "important_regions",
    "irrelevant_regions",
    "gt_step_hint",
    "topic",
    "difficulty",
)


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class MalformedRecordError(DatasetError):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


class DuplicateIdError(DatasetError):
    def __init__(self, item_id: str, index: int):
        super().__init__(f"record {index}: duplicate id {item_id!r}")
        self.item_id = item_id
        self.index = index


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box covering columns [x, x+w) and rows [y, y+h)."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return max(self.w, 0) * max(self.h, 0)

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def clamp(self, width: int, height: int) -> BoundingBox | None:
        """Intersect with the image frame; None when nothing is left."""
        x1, y1 = max(self.x, 0), max(self.y, 0)
        x2, y2 = min(self.x2, width), min(self.y2, height)
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def intersects(self, other: BoundingBox) -> bool:
        return (
            self.x < other.x2
            and other.x < self.x2
            and self.y < other.y2
            and other.y < self.y2
        )

    def gap(self, other: BoundingBox) -> float:
        """Euclidean distance between the two rectangles' boundaries (0 if touching or overlapping)."""
        dx = max(0, other.x - self.x2, self.x - other.x2)
        dy = max(0, other.y - self.y2, self.y - other.y2)
        return float((dx * dx + dy * dy) ** 0.5)

    def to_dict(self) -> dict[str, int]:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, data: Any) -> BoundingBox:
        if not isinstance(data, dict):
            raise ValueError(f"box must be an object, got {type(data).__name__}")
        values = []
        for key in ("x", "y", "w", "h"):
            if key not in data:
                raise ValueError(f"box missing {key!r}")
            v = data[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError(f"box field {key!r} must be an integer, got {v!r}")
            values.append(v)
        return cls(*values)


@dataclass(frozen=True)
class DatasetItem:
    id: str
    image_ref: str
    question: str
    important_regions: tuple[BoundingBox, ...]
    irrelevant_regions: tuple[BoundingBox, ...] = ()
    gt_step_hint: str | None = None
    topic: str | None = None
    difficulty: str | None = None
    # unrecognised record fields, kept so that load/dump round-trips
    extra: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "image": self.image_ref,
            "question": self.question,
            "important_regions": [b.to_dict() for b in self.important_regions],
            "irrelevant_regions": [b.to_dict() for b in self.irrelevant_regions],
        }
        for key in ("gt_step_hint", "topic", "difficulty"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DatasetItem:
        for key in ("id", "image", "question"):
            if key not in data:
                raise ValueError(f"missing field {key!r}")
            if not isinstance(data[key], str):
                raise ValueError(f"field {key!r} must be a string")
        if not data["id"]:
            raise ValueError("empty id")
        important = _parse_boxes(data.get("important_regions"), "important_regions")
        if not important:
            raise ValueError("important_regions must be non-empty")
        irrelevant = _parse_boxes(data.get("irrelevant_regions", []), "irrelevant_regions")
        optional = {}
        for key in ("gt_step_hint", "topic", "difficulty"):
            value = data.get(key)
            if value is not None and not isinstance(value, str):
                raise ValueError(f"field {key!r} must be a string or absent")
            optional[key] = value
        extra = {k: v for k, v in data.items() if k not in _KNOWN_FIELDS}
        return cls(
            id=data["id"],
            image_ref=data["image"],
            question=data["question"],
            important_regions=important,
            irrelevant_regions=irrelevant,
            extra=extra,
            **optional,
        )


def _parse_boxes(raw: Any, name: str) -> tuple[BoundingBox, ...]:
    if raw is None:
        raise ValueError(f"missing field {name!r}")
    if not isinstance(raw, list):
        raise ValueError(f"{name} must be a list")
    boxes = []
    for entry in raw:
        box = BoundingBox.from_dict(entry)
        if box.w <= 0 or box.h <= 0:
            raise ValueError(f"{name}: box {box.to_dict()} has non-positive size")
        boxes.append(box)
    return tuple(boxes)


@dataclass
class ValidationReport:
    item_id: str
    errors: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def format_line(self) -> str:
        status = "OK" if self.ok else "ERROR"
        parts = [f"{code}: {msg}" for code, msg in self.errors]
        parts += [f"warning {code}: {msg}" for code, msg in self.warnings]
        tail = ("  " + "; ".join(parts)) if parts else ""
        return f"{self.item_id}\t{status}{tail}"


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """Read every record of a line-delimited dataset file, in file order.

    Blank lines are ignored. Any record that fails to parse raises
    MalformedRecordError carrying its zero-based record index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    items: list[DatasetItem] = []
    seen: set[str] = set()
    index = 0
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if not isinstance(data, dict):
                    raise ValueError("record is not an object")
                item = DatasetItem.from_dict(data)
            except (ValueError, TypeError) as exc:
                raise MalformedRecordError(index, str(exc)) from exc
            if item.id in seen:
                raise DuplicateIdError(item.id, index)
            seen.add(item.id)
            items.append(item)
            index += 1
    return items


def dumps_item(item: DatasetItem) -> str:
    return json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True)


def dump_dataset(items: Iterable[DatasetItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(dumps_item(item) + "\n")


def validate_item(item: DatasetItem, image_dims: tuple[int, int]) -> ValidationReport:
    width, height = image_dims
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_dims}")
    report = ValidationReport(item.id)
    if not item.question.strip():
        report.errors.append(("empty-question", "question is empty"))
    if not item.important_regions:
        report.errors.append(("no-important-regions", "nothing to mask"))

    image_area = width * height
    for kind, boxes in (("important", item.important_regions), ("irrelevant", item.irrelevant_regions)):
        for i, box in enumerate(boxes):
            label = f"{kind}[{i}] {box.to_dict()}"
            clamped = box.clamp(width, height)
            if clamped is None:
                msg = f"{label} clamps to zero area on {width}x{height} image"
                # irrelevant boxes are never masked, so a bad one only warns
                target = report.errors if kind == "important" else report.warnings
                target.append(("out-of-bounds", msg))
                continue
            if clamped != box:
                report.warnings.append(("clamped", f"{label} clamped to {clamped.to_dict()}"))
            if clamped.area > FULL_COVERAGE_FRACTION * image_area:
                frac = clamped.area / image_area
                report.warnings.append(("full-coverage", f"{label} covers {frac:.0%} of the image"))
    return report


def stratum_key(item: DatasetItem) -> tuple[str, str]:
    return (item.topic or UNLABELED, item.difficulty or UNLABELED)


def sample_balanced(items: Sequence[DatasetItem], seed: int, per_stratum: int) -> list[DatasetItem]:
    """Take up to ``per_stratum`` items uniformly at random from each (topic, difficulty) group.

    Strata appear in order of first occurrence; selected items keep their
    input order within a stratum.
    """
    if per_stratum < 1:
        raise ValueError("per_stratum must be >= 1")
    groups: dict[tuple[str, str], list[int]] = {}
    for idx, item in enumerate(items):
        groups.setdefault(stratum_key(item), []).append(idx)
    rng = random.Random(seed)
    out: list[DatasetItem] = []
    for members in groups.values():
        k = min(per_stratum, len(members))
        picked = sorted(rng.sample(members, k))
        out.extend(items[i] for i in picked)
    return out


def dataset_hash(items: Iterable[DatasetItem]) -> str:
    h = hashlib.sha256()
    for item in items:
        h.update(dumps_item(item).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
