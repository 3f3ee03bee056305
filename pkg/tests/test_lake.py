import hashlib
import json
import os

import numpy as np
import pytest

from fabricfl.encoding import FixedPointCodec, encrypt_tensor
from fabricfl.federated import UpdateMetrics, WeightUpdate
from fabricfl.lake import (
    CATALOG_FILE,
    LINEAGE_FILE,
    DataLake,
    DuplicateEntryError,
    ErasedEntryError,
    UnknownEntryError,
)

from conftest import cached_keypair


def make_update(client_id="client-a", round=1, family="logreg", values=(1.0, 2.0),
                accuracy=0.5, loss=1.0):
    return WeightUpdate(
        client_id=client_id,
        round=round,
        model_family=family,
        payload=[np.array(values, dtype=np.float64)],
        scaling_factor=0.5,
        metrics=UpdateMetrics(accuracy=accuracy, loss=loss),
    )


@pytest.fixture
def lake(tmp_path):
    return DataLake(tmp_path / "lake")


class TestPutGet:
    def test_roundtrip_payload(self, lake):
        update = make_update(values=(1.5, -2.25, 0.0))
        entry = lake.put(update)
        loaded = lake.get(entry.entry_id)
        assert np.array_equal(loaded.payload[0], update.payload[0])
        assert loaded.client_id == update.client_id
        assert loaded.round == update.round
        assert loaded.model_family == update.model_family
        assert loaded.metrics == update.metrics

    def test_entry_id_matches_stored_bytes(self, lake):
        entry = lake.put(make_update())
        blob = (lake.root / entry.path).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == entry.entry_id

    def test_layout_convention(self, lake):
        entry = lake.put(make_update(client_id="client-b", round=3, family="VGG16"))
        assert entry.path == "VGG16/round-3/client-b.dfwu"
        assert (lake.root / "VGG16" / "round-3" / "client-b.dfwu").exists()

    def test_duplicate_rejected(self, lake):
        lake.put(make_update())
        with pytest.raises(DuplicateEntryError):
            lake.put(make_update(values=(9.0,)))

    def test_unknown_entry(self, lake):
        with pytest.raises(UnknownEntryError):
            lake.get("0" * 64)

    def test_get_after_erase_distinct_error(self, lake):
        entry = lake.put(make_update())
        lake.erase_client("client-a")
        with pytest.raises(ErasedEntryError):
            lake.get(entry.entry_id)

    def test_created_at_is_rfc3339(self, lake):
        from datetime import datetime

        entry = lake.put(make_update())
        parsed = datetime.fromisoformat(entry.created_at)
        assert parsed.tzinfo is not None

    def test_encrypted_payload_roundtrip(self, tmp_path):
        kp = cached_keypair(64)
        codec = FixedPointCodec.for_key(kp.public, scale_bits=8)
        lake = DataLake(tmp_path / "enc-lake", public_key=kp.public)
        tensor = encrypt_tensor(kp.public, codec, np.array([0.5, -0.5]))
        update = WeightUpdate(
            client_id="client-e", round=1, model_family="logreg",
            payload=[tensor], scaling_factor=1.0,
            metrics=UpdateMetrics(accuracy=0.7, loss=0.3),
        )
        entry = lake.put(update)
        assert entry.encrypted
        loaded = lake.get(entry.entry_id)
        assert loaded.payload[0].values == tensor.values

    def test_persistence_across_instances(self, tmp_path):
        root = tmp_path / "lake"
        first = DataLake(root)
        entry = first.put(make_update())
        second = DataLake(root)
        loaded = second.get(entry.entry_id)
        assert np.array_equal(loaded.payload[0], [1.0, 2.0])

    def test_identical_content_from_two_clients(self, lake):
        # Byte-identical payloads share an entry_id but keep separate blobs.
        a = lake.put(make_update(client_id="client-a"))
        b = lake.put(make_update(client_id="client-b"))
        assert a.entry_id == b.entry_id
        assert a.path != b.path
        assert len(lake.query()) == 2
        lake.erase_client("client-a")
        survivor = lake.get(b.entry_id)
        assert survivor.client_id == "client-b"
        assert (lake.root / b.path).exists()
        assert not (lake.root / a.path).exists()


class TestQuery:
    def test_empty(self, lake):
        assert lake.query() == []

    def test_family_filter(self, lake):
        lake.put(make_update(family="VGG16", client_id="a"))
        lake.put(make_update(family="VGG19", client_id="b"))
        entries = lake.query(model_family="VGG16")
        assert [e.model_family for e in entries] == ["VGG16"]

    def test_ordering(self, lake):
        lake.put(make_update(client_id="z", round=1))
        lake.put(make_update(client_id="a", round=2))
        lake.put(make_update(client_id="a", round=1))
        entries = lake.query()
        assert [(e.round, e.client_id) for e in entries] == [(1, "a"), (1, "z"), (2, "a")]

    def test_conservation(self, lake):
        for i in range(4):
            lake.put(make_update(client_id=f"client-{i}", values=(float(i),)))
        lake.erase_client("client-2")
        assert len(lake.query()) == 3


class TestMasterSelection:
    def test_fedmax_picks_highest_accuracy(self, lake):
        lake.put(make_update(client_id="a", accuracy=0.6))
        low = lake.put(make_update(client_id="b", accuracy=0.8, values=(3.0,)))
        master = lake.select_master(1, "fedmax")
        assert master.entry_ids == [low.entry_id]

    def test_fedmin_picks_lowest_loss(self, lake):
        best = lake.put(make_update(client_id="a", loss=0.1))
        lake.put(make_update(client_id="b", loss=0.9, values=(3.0,)))
        master = lake.select_master(1, "fedmin")
        assert master.entry_ids == [best.entry_id]

    def test_fedavg_all_selects_everything(self, lake):
        ids = {lake.put(make_update(client_id=f"c{i}", values=(float(i),))).entry_id
               for i in range(3)}
        master = lake.select_master(1, "fedavg-all")
        assert set(master.entry_ids) == ids

    def test_tie_breaks_to_smallest_client_id(self, lake):
        first = lake.put(make_update(client_id="aaa", accuracy=0.8))
        lake.put(make_update(client_id="bbb", accuracy=0.8, values=(3.0,)))
        master = lake.select_master(1, "fedmax")
        assert master.entry_ids == [first.entry_id]

    def test_empty_round_rejected(self, lake):
        with pytest.raises(ValueError):
            lake.select_master(9, "fedmax")

    def test_unknown_rule_rejected(self, lake):
        lake.put(make_update())
        with pytest.raises(ValueError):
            lake.select_master(1, "fedmedian")

    def test_selection_recorded_in_lineage(self, lake):
        entry = lake.put(make_update())
        lake.select_master(1, "fedmax")
        operations = [r.operation for r in lake.lineage(entry.entry_id)]
        assert operations == ["ingested", "selected_master"]


class TestErasure:
    def test_erase_unknown_client(self, lake):
        assert lake.erase_client("ghost").count == 0

    def test_erase_all_client_entries(self, lake):
        for r in range(1, 4):
            lake.put(make_update(client_id="client-a", round=r))
        lake.put(make_update(client_id="client-b"))
        report = lake.erase_client("client-a")
        assert report.count == 3
        assert report.failed == []
        assert lake.query(client_id="client-a") == []
        assert len(lake.query(client_id="client-b")) == 1

    def test_no_files_remain_on_disk(self, lake):
        for r in range(1, 4):
            lake.put(make_update(client_id="client-a", round=r))
        lake.erase_client("client-a")
        leftovers = [p for p in lake.root.rglob("*") if "client-a" in p.name]
        assert leftovers == []

    def test_master_selection_excludes_erased(self, lake):
        lake.put(make_update(client_id="a", accuracy=0.99))
        keep = lake.put(make_update(client_id="b", accuracy=0.5, values=(3.0,)))
        lake.erase_client("a")
        master = lake.select_master(1, "fedmax")
        assert master.entry_ids == [keep.entry_id]

    def test_erasure_keeps_lineage_history(self, lake):
        entry = lake.put(make_update(client_id="client-a"))
        lake.erase_client("client-a")
        operations = [r.operation for r in lake.lineage(entry.entry_id)]
        assert operations == ["ingested", "erased"]

    def test_catalog_keeps_tombstone_row(self, lake):
        entry = lake.put(make_update(client_id="client-a"))
        lake.erase_client("client-a")
        rows = [json.loads(line) for line in (lake.root / CATALOG_FILE).read_text().splitlines()]
        assert [r["tombstone"] for r in rows if r["entry_id"] == entry.entry_id] == [False, True]

    def test_failed_unlink_flags_blob_then_recovers(self, lake, monkeypatch):
        entry = lake.put(make_update(client_id="client-a"))

        def refuse(path):
            raise OSError("simulated unlink failure")

        monkeypatch.setattr(DataLake, "_destroy_file", staticmethod(refuse))
        report = lake.erase_client("client-a")
        assert report.count == 0
        assert [entry_id for entry_id, _ in report.failed] == [entry.entry_id]
        assert lake.query(client_id="client-a") == []  # tombstoned despite failure
        monkeypatch.undo()
        assert (lake.root / entry.path).exists()
        reopened = DataLake(lake.root)  # reconcile retries the removal
        assert not (reopened.root / entry.path).exists()


class TestCrashSafety:
    def test_fault_injected_put_leaves_nothing_visible(self, lake, monkeypatch):
        real_replace = os.replace

        def crash(src, dst):
            raise OSError("simulated crash between write and rename")

        monkeypatch.setattr("fabricfl.lake.os.replace", crash)
        with pytest.raises(OSError):
            lake.put(make_update())
        monkeypatch.setattr("fabricfl.lake.os.replace", real_replace)

        assert lake.query() == []
        assert not (lake.root / CATALOG_FILE).exists()
        assert list(lake.root.rglob("*.dfwu")) == []
        assert [p for p in lake.root.rglob(".tmp-*")] == []
        # A later put of the same update succeeds.
        entry = lake.put(make_update())
        assert lake.get(entry.entry_id) is not None

    def test_orphan_blob_removed_on_open(self, lake):
        entry = lake.put(make_update())
        orphan = lake.root / "logreg" / "round-9" / "stray.dfwu"
        orphan.parent.mkdir(parents=True, exist_ok=True)
        orphan.write_bytes(b"DFWUgarbage")
        reopened = DataLake(lake.root)
        assert not orphan.exists()
        assert reopened.get(entry.entry_id) is not None

    def test_catalog_disk_agreement(self, lake):
        for i in range(3):
            lake.put(make_update(client_id=f"client-{i}", values=(float(i),)))
        lake.erase_client("client-1")
        catalogued = {e.path for e in lake.query()}
        on_disk = {p.relative_to(lake.root).as_posix() for p in lake.root.rglob("*.dfwu")}
        assert catalogued == on_disk


class TestLineage:
    def test_log_grows_monotonically(self, lake):
        lengths = [len(lake.lineage())]
        lake.put(make_update(client_id="a"))
        lengths.append(len(lake.lineage()))
        lake.put(make_update(client_id="b", values=(2.0,)))
        lengths.append(len(lake.lineage()))
        lake.erase_client("a")
        lengths.append(len(lake.lineage()))
        assert lengths == sorted(lengths) and lengths[-1] == 3

    def test_records_are_never_rewritten(self, lake):
        lake.put(make_update(client_id="a"))
        before = (lake.root / LINEAGE_FILE).read_text()
        lake.put(make_update(client_id="b", values=(2.0,)))
        after = (lake.root / LINEAGE_FILE).read_text()
        assert after.startswith(before)
