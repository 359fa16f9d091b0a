"""On-disk run store with a content-addressed generation cache.

Layout under the store root::

    runs/<run_id>/manifest.json
    runs/<run_id>/dataset.jsonl
    runs/<run_id>/items/<item_id>/<condition>/{masked_*.png, cot.json, answer.json, attribution.json}
    runs/<run_id>/reports/
    cache/<ab>/<sha256>.json

Every JSON record is wrapped as ``{"format_version", "checksum", "payload"}``
and written through a temporary file plus atomic rename.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from .client import GenerationRecord, Stage
from .dataset import DatasetItem, dataset_hash, dump_dataset, load_dataset
from .masking import Condition

FORMAT_VERSION = 1
STAGES = (Stage.COT, Stage.ANSWER)


class RunStoreError(Exception):
    pass


class RunExistsError(RunStoreError):
    pass


class ConfigMismatchError(RunStoreError):
    pass


class StoreCorruptError(RunStoreError):
    pass


class ManifestCorruptError(StoreCorruptError):
    pass


class Status(str, enum.Enum):
    PENDING = "Pending"
    DONE = "Done"
    FAILED = "Failed"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_record(path: Path, payload: Any) -> None:
    body = {"format_version": FORMAT_VERSION, "checksum": sha256_text(canonical_json(payload)), "payload": payload}
    atomic_write_bytes(path, (json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))


def read_record(path: Path) -> Any:
    try:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        payload = body["payload"]
        checksum = body["checksum"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise StoreCorruptError(f"unreadable record {path}: {exc}") from exc
    if sha256_text(canonical_json(payload)) != checksum:
        raise StoreCorruptError(f"checksum mismatch in {path}")
    return payload


def work_key(item_id: str, condition: Condition | str, stage: Stage | str) -> str:
    return f"{item_id}|{Condition(condition).value}|{Stage(stage).value}"


def split_work_key(key: str) -> tuple[str, Condition, Stage]:
    item_id, cond, stage = key.rsplit("|", 2)
    return item_id, Condition(cond), Stage(stage)


_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def safe_name(item_id: str) -> str:
    """Filesystem-safe directory name for an item id (collision-proofed by a hash suffix when altered)."""
    cleaned = _SAFE.sub("_", item_id)
    if cleaned == item_id and item_id not in (".", ".."):
        return item_id
    return f"{cleaned}-{sha256_text(item_id)[:8]}"


@dataclass(frozen=True)
class CacheKey:
    model_name: str
    prompt_hash: str
    image_hash: str
    temperature: float
    max_tokens: int

    def digest(self) -> str:
        return sha256_text(canonical_json({
            "model_name": self.model_name,
            "prompt_hash": self.prompt_hash,
            "image_hash": self.image_hash,
            "temperature": repr(float(self.temperature)),
            "max_tokens": int(self.max_tokens),
        }))


@dataclass
class RunManifest:
    run_id: str
    created_at: str
    dataset_hash: str
    config: dict[str, Any]
    conditions: list[Condition]
    item_ids: list[str]
    status: dict[str, Status]
    errors: dict[str, str] = field(default_factory=dict)
    excluded: dict[str, list[str]] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return sha256_text(canonical_json(self.config))

    def keys_with(self, *statuses: Status) -> list[str]:
        return [k for k, s in self.status.items() if s in statuses]

    def pending(self) -> list[str]:
        return self.keys_with(Status.PENDING, Status.FAILED)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "dataset_hash": self.dataset_hash,
            "config": self.config,
            "config_hash": self.config_hash,
            "conditions": [c.value for c in self.conditions],
            "item_ids": self.item_ids,
            "status": {k: v.value for k, v in self.status.items()},
            "errors": self.errors,
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunManifest:
        m = cls(
            run_id=d["run_id"],
            created_at=d["created_at"],
            dataset_hash=d["dataset_hash"],
            config=d["config"],
            conditions=[Condition(c) for c in d["conditions"]],
            item_ids=list(d["item_ids"]),
            status={k: Status(v) for k, v in d["status"].items()},
            errors=dict(d.get("errors", {})),
            excluded={k: list(v) for k, v in d.get("excluded", {}).items()},
        )
        if d.get("config_hash") != m.config_hash:
            raise ManifestCorruptError(f"manifest of run {m.run_id} has an inconsistent config hash")
        return m


class RunStore:
    """File-per-record store. Record writes may come from many threads;
    manifest updates go through one lock-protected commit point."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._dirty = 0

    # paths
    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def manifest_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "manifest.json"

    def item_dir(self, run_id: str, item_id: str, condition: Condition | str) -> Path:
        return self.run_dir(run_id) / "items" / safe_name(item_id) / Condition(condition).value

    def record_path(self, run_id: str, item_id: str, condition: Condition | str, stage: Stage | str) -> Path:
        return self.item_dir(run_id, item_id, condition) / f"{Stage(stage).value}.json"

    def attribution_path(self, run_id: str, item_id: str, condition: Condition | str) -> Path:
        return self.item_dir(run_id, item_id, condition) / "attribution.json"

    def cache_path(self, key: CacheKey) -> Path:
        d = key.digest()
        return self.root / "cache" / d[:2] / f"{d}.json"

    # runs
    def init_run(self, run_id: str, items: Sequence[DatasetItem], conditions: Iterable[Condition | str],
                 config: dict[str, Any], *, excluded: dict[str, list[str]] | None = None) -> RunManifest:
        conditions = [Condition(c) for c in conditions]
        run_dir = self.run_dir(run_id)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "runs").mkdir(exist_ok=True)
        except OSError as exc:
            raise RunStoreError(f"cannot create store at {self.root}: {exc}") from exc
        if not os.access(self.root, os.W_OK):
            raise RunStoreError(f"store root {self.root} is not writable")
        try:
            run_dir.mkdir()
        except FileExistsError:
            raise RunExistsError(f"run {run_id!r} already exists under {self.root}") from None
        dump_dataset(items, run_dir / "dataset.jsonl")
        status = {work_key(it.id, c, s): Status.PENDING for it in items for c in conditions for s in STAGES}
        manifest = RunManifest(
            run_id=run_id,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            dataset_hash=dataset_hash(items),
            config=config,
            conditions=conditions,
            item_ids=[it.id for it in items],
            status=status,
            excluded=dict(excluded or {}),
        )
        self.commit(manifest)
        return manifest

    def load_manifest(self, run_id: str) -> RunManifest:
        path = self.manifest_path(run_id)
        if not path.exists():
            raise RunStoreError(f"no run {run_id!r} under {self.root}")
        try:
            return RunManifest.from_dict(read_record(path))
        except StoreCorruptError as exc:
            raise ManifestCorruptError(str(exc)) from exc
        except (KeyError, ValueError, TypeError) as exc:
            raise ManifestCorruptError(f"manifest of run {run_id!r} is malformed: {exc}") from exc

    def load_items(self, run_id: str) -> list[DatasetItem]:
        return load_dataset(self.run_dir(run_id) / "dataset.jsonl")

    def resume_run(self, run_id: str, config: dict[str, Any] | None = None) -> RunManifest:
        """Reload a run; Pending/Failed entries remain to be done.

        Pending entries whose record already sits on disk (the manifest is
        flushed lazily) are promoted to Done.
        """
        manifest = self.load_manifest(run_id)
        if config is not None and sha256_text(canonical_json(config)) != manifest.config_hash:
            raise ConfigMismatchError(f"run {run_id!r} was created with a different configuration")
        changed = False
        for key in manifest.keys_with(Status.PENDING):
            item_id, cond, stage = split_work_key(key)
            path = self.record_path(run_id, item_id, cond, stage)
            if path.exists():
                try:
                    read_record(path)
                except StoreCorruptError:
                    continue
                manifest.status[key] = Status.DONE
                changed = True
        if changed:
            self.commit(manifest)
        return manifest

    def commit(self, manifest: RunManifest) -> None:
        with self._lock:
            write_record(self.manifest_path(manifest.run_id), manifest.to_dict())
            self._dirty = 0

    def mark(self, manifest: RunManifest, key: str, status: Status, error: str | None = None,
             *, flush_every: int = 25) -> None:
        with self._lock:
            manifest.status[key] = status
            if error is None:
                manifest.errors.pop(key, None)
            else:
                manifest.errors[key] = error
            self._dirty += 1
            flush = self._dirty >= flush_every
        if flush:
            self.commit(manifest)

    # records
    def put_generation(self, run_id: str, record: GenerationRecord) -> None:
        write_record(self.record_path(run_id, record.item_id, record.condition, record.stage), record.to_dict())

    def get_generation(self, run_id: str, item_id: str, condition: Condition | str,
                       stage: Stage | str) -> GenerationRecord | None:
        path = self.record_path(run_id, item_id, condition, stage)
        if not path.exists():
            return None
        return GenerationRecord.from_dict(read_record(path))

    # cache
    def cache_lookup(self, key: CacheKey) -> GenerationRecord | None:
        path = self.cache_path(key)
        if not path.exists():
            return None
        return GenerationRecord.from_dict(read_record(path))

    def cache_put(self, key: CacheKey, record: GenerationRecord) -> None:
        write_record(self.cache_path(key), record.to_dict())
