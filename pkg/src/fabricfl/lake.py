"""Content-addressed data lake for weight updates.

Blobs live under `<root>/<family>/round-<R>/<client>.dfwu`, addressed by
the SHA-256 of their bytes.  The catalog and lineage logs are append-only
NDJSON files; erasing a client destroys blob bytes and tombstones the
catalog rows while keeping the auditable fact that an erasure happened.
Writes go through temp-file + atomic rename, so a crash mid-put leaves
either nothing visible or a complete valid entry.
"""

from __future__ import annotations

import hashlib
import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from filelock import FileLock

from .blobfmt import decode_blob, encode_cipher_weights, encode_weights
from .federated import UpdateMetrics, WeightUpdate
from .paillier import PaillierPublicKey

CATALOG_FILE = "catalog.ndjson"
LINEAGE_FILE = "lineage.ndjson"
_TMP_PREFIX = ".tmp-"

MASTER_RULES = ("fedmax", "fedmin", "fedavg-all")


class UnknownEntryError(KeyError):
    """The entry id was never catalogued."""


class ErasedEntryError(KeyError):
    """The entry existed but has been erased."""


class DuplicateEntryError(ValueError):
    """A live entry already exists for this (family, round, client)."""


class IntegrityError(RuntimeError):
    """Stored blob bytes no longer match the catalogued digest."""


@dataclass
class LakeEntry:
    entry_id: str
    model_family: str
    client_id: str
    round: int
    path: str
    encrypted: bool
    created_at: str
    accuracy: float
    loss: float
    tombstone: bool = False

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "model_family": self.model_family,
            "client_id": self.client_id,
            "round": self.round,
            "path": self.path,
            "encrypted": self.encrypted,
            "created_at": self.created_at,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "tombstone": self.tombstone,
        }


@dataclass
class LineageRecord:
    entry_id: str
    operation: str
    related: list[str]
    timestamp: str


@dataclass
class MasterDataSet:
    round: int
    entry_ids: list[str]
    selection_rule: str


@dataclass
class ErasureReport:
    erased: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.erased)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class DataLake:
    """Filesystem-backed lake; safe for concurrent writers via a root lock."""

    def __init__(self, root: str | Path, public_key: PaillierPublicKey | None = None):
        self.root = Path(root)
        self.public_key = public_key
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.root / ".lake.lock"))
        # Current state per (family, round, client); identical payloads from
        # different clients share an entry_id, so ids index into these keys.
        self._rows: dict[tuple[str, int, str], LakeEntry] = {}
        self._id_keys: dict[str, set[tuple[str, int, str]]] = {}
        self._erased_ids: set[str] = set()
        self._load_catalog()
        self._reconcile()

    # -- catalog state ------------------------------------------------------

    @staticmethod
    def _key_of(entry: LakeEntry) -> tuple[str, int, str]:
        return (entry.model_family, entry.round, entry.client_id)

    def _record(self, entry: LakeEntry) -> None:
        self._rows[self._key_of(entry)] = entry
        self._id_keys.setdefault(entry.entry_id, set()).add(self._key_of(entry))
        if entry.tombstone:
            self._erased_ids.add(entry.entry_id)

    def _load_catalog(self) -> None:
        self._rows.clear()
        self._id_keys.clear()
        self._erased_ids.clear()
        catalog = self.root / CATALOG_FILE
        if not catalog.exists():
            return
        for line in catalog.read_text().splitlines():
            if line.strip():
                self._record(LakeEntry(**json.loads(line)))

    def _live_entries(self) -> list[LakeEntry]:
        return [e for e in self._rows.values() if not e.tombstone]

    def _reconcile(self) -> None:
        """Clean up after crashes: retry pending blob removals, drop orphans."""
        with self._lock:
            live_paths = {e.path for e in self._live_entries()}
            for entry in self._rows.values():
                blob = self.root / entry.path
                if entry.tombstone and entry.path not in live_paths and blob.exists():
                    self._destroy_file(blob)
            for blob in self.root.rglob("*.dfwu"):
                rel = blob.relative_to(self.root).as_posix()
                if rel not in live_paths:
                    blob.unlink(missing_ok=True)
            for temp in self.root.rglob(f"{_TMP_PREFIX}*"):
                temp.unlink(missing_ok=True)

    def _append(self, filename: str, record: dict) -> None:
        with open(self.root / filename, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _append_lineage(self, entry_id: str, operation: str, related: list[str]) -> None:
        self._append(
            LINEAGE_FILE,
            {"entry_id": entry_id, "operation": operation, "related": related,
             "timestamp": _now()},
        )

    # -- operations -----------------------------------------------------------

    def put(self, update: WeightUpdate) -> LakeEntry:
        """Persist one update; duplicate (family, round, client) is rejected."""
        blob = (
            encode_cipher_weights(update.payload)
            if update.encrypted
            else encode_weights(update.payload)
        )
        entry_id = hashlib.sha256(blob).hexdigest()
        key = (update.model_family, update.round, update.client_id)
        rel_path = Path(update.model_family) / f"round-{update.round}" / f"{update.client_id}.dfwu"
        final = self.root / rel_path
        with self._lock:
            current = self._rows.get(key)
            if current is not None and not current.tombstone:
                raise DuplicateEntryError(
                    f"entry for {update.model_family}/round-{update.round}/"
                    f"{update.client_id} already exists"
                )
            if final.exists():
                raise DuplicateEntryError(f"blob already present at {rel_path}")
            final.parent.mkdir(parents=True, exist_ok=True)
            temp = final.parent / f"{_TMP_PREFIX}{update.client_id}-{uuid.uuid4().hex}"
            try:
                with open(temp, "wb") as fh:
                    fh.write(blob)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(temp, final)
            finally:
                temp.unlink(missing_ok=True)
            entry = LakeEntry(
                entry_id=entry_id,
                model_family=update.model_family,
                client_id=update.client_id,
                round=update.round,
                path=rel_path.as_posix(),
                encrypted=update.encrypted,
                created_at=_now(),
                accuracy=update.metrics.accuracy,
                loss=update.metrics.loss,
            )
            self._append(CATALOG_FILE, entry.to_record())
            self._record(entry)
            self._append_lineage(entry_id, "ingested", [])
        return entry

    def get(self, entry_id: str) -> WeightUpdate:
        """Load an update back; erased entries raise a distinct error."""
        keys = self._id_keys.get(entry_id, set())
        live = [
            self._rows[k]
            for k in keys
            if self._rows[k].entry_id == entry_id and not self._rows[k].tombstone
        ]
        if not live:
            if entry_id in self._erased_ids:
                raise ErasedEntryError(entry_id)
            raise UnknownEntryError(entry_id)
        entry = min(live, key=lambda e: (e.round, e.client_id))
        blob = (self.root / entry.path).read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry.entry_id:
            raise IntegrityError(f"blob digest mismatch for {entry_id}")
        dtype, tensors = decode_blob(blob, public_key=self.public_key)
        return WeightUpdate(
            client_id=entry.client_id,
            round=entry.round,
            model_family=entry.model_family,
            payload=tensors,
            scaling_factor=None,
            metrics=UpdateMetrics(accuracy=entry.accuracy, loss=entry.loss),
        )

    def query(
        self,
        model_family: str | None = None,
        client_id: str | None = None,
        round: int | None = None,
    ) -> list[LakeEntry]:
        """Non-erased entries matching every provided field."""
        matches = [
            e
            for e in self._live_entries()
            if (model_family is None or e.model_family == model_family)
            and (client_id is None or e.client_id == client_id)
            and (round is None or e.round == round)
        ]
        return sorted(matches, key=lambda e: (e.round, e.client_id))

    def select_master(self, round: int, rule: str) -> MasterDataSet:
        """Pick the per-round master set and record the selection in lineage."""
        if rule not in MASTER_RULES:
            raise ValueError(f"unknown selection rule {rule!r}; expected one of {MASTER_RULES}")
        entries = self.query(round=round)
        if not entries:
            raise ValueError(f"round {round} has no entries")
        if rule == "fedmax":
            selected = [max(entries, key=lambda e: e.accuracy)]
        elif rule == "fedmin":
            selected = [min(entries, key=lambda e: e.loss)]
        else:
            selected = entries
        ids = [e.entry_id for e in selected]
        with self._lock:
            for entry_id in ids:
                self._append_lineage(entry_id, "selected_master", ids)
        return MasterDataSet(round=round, entry_ids=ids, selection_rule=rule)

    def erase_client(self, client_id: str) -> ErasureReport:
        """Right-to-be-forgotten: destroy blobs, tombstone catalog rows.

        A failed blob removal still leaves the tombstone; the blob is
        retried on the next lake open.
        """
        report = ErasureReport()
        targets = [e for e in self._live_entries() if e.client_id == client_id]
        with self._lock:
            for entry in targets:
                tombstoned = LakeEntry(**{**entry.to_record(), "tombstone": True})
                self._append(CATALOG_FILE, tombstoned.to_record())
                self._record(tombstoned)
                self._append_lineage(entry.entry_id, "erased", [])
                try:
                    self._destroy_file(self.root / entry.path)
                except OSError as exc:
                    report.failed.append((entry.entry_id, str(exc)))
                else:
                    report.erased.append(entry.entry_id)
        return report

    def lineage(self, entry_id: str | None = None) -> list[LineageRecord]:
        path = self.root / LINEAGE_FILE
        if not path.exists():
            return []
        records = [
            LineageRecord(**json.loads(line))
            for line in path.read_text().splitlines()
            if line.strip()
        ]
        if entry_id is not None:
            records = [r for r in records if r.entry_id == entry_id]
        return records

    @staticmethod
    def _destroy_file(path: Path) -> None:
        """Overwrite with zeros, then unlink."""
        if not path.exists():
            return
        size = path.stat().st_size
        with open(path, "r+b") as fh:
            fh.write(b"\0" * size)
            fh.flush()
            os.fsync(fh.fileno())
        path.unlink()
