from __future__ import annotations

import json

import pytest

from intenteval.errors import DomainError, ResumeConflict
from intenteval.ledger import (
    RESPONSES_FILE,
    SCORES_FILE,
    TASKS_FILE,
    RunLedger,
)

MANIFEST = {"config": {"k": "v"}, "config_digest": "abc", "seed": 1}


def test_create_writes_manifest_and_appends_stamp_records(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    assert ledger.manifest()["sealed"] is False
    first = ledger.append(TASKS_FILE, {"id": "t1"})
    second = ledger.append(SCORES_FILE, {"response_id": "r1"})
    assert first["seq"] == 1
    assert second["seq"] == 2
    assert ledger.records(TASKS_FILE) == [{"id": "t1", "seq": 1}]


def test_resume_continues_sequence_numbers(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    ledger.append(TASKS_FILE, {"id": "t1"})
    reopened = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    assert reopened.append(TASKS_FILE, {"id": "t2"})["seq"] == 2


def test_sealed_ledger_rejects_resume(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    ledger.seal()
    with pytest.raises(ResumeConflict):
        RunLedger.create_or_resume(tmp_path / "l", MANIFEST)


def test_resume_rejects_changed_config(tmp_path):
    RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    with pytest.raises(ResumeConflict):
        RunLedger.create_or_resume(tmp_path / "l", {**MANIFEST, "config_digest": "other"})


def test_unknown_stage_file_is_rejected(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    with pytest.raises(DomainError):
        ledger.append("other.jsonl", {})
    with pytest.raises(DomainError):
        ledger.records("other.jsonl")


def test_open_requires_existing_ledger(tmp_path):
    with pytest.raises(DomainError):
        RunLedger.open(tmp_path / "nothing")


def test_partial_trailing_line_is_ignored_when_reading(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    ledger.append(RESPONSES_FILE, {"response_id": "r1"})
    with open(tmp_path / "l" / RESPONSES_FILE, "a", encoding="utf-8") as handle:
        handle.write('{"response_id": "torn')
    assert [r["response_id"] for r in ledger.records(RESPONSES_FILE)] == ["r1"]


def test_digest_covers_canonical_files_only(tmp_path):
    a = RunLedger.create_or_resume(tmp_path / "a", MANIFEST)
    b = RunLedger.create_or_resume(tmp_path / "b", MANIFEST)
    a.append(TASKS_FILE, {"id": "t1"})
    b.append(TASKS_FILE, {"id": "t1"})
    (tmp_path / "a" / "notes.txt").write_text("scratch", encoding="utf-8")
    assert a.digest() == b.digest()
    b.append(TASKS_FILE, {"id": "t2"})
    assert a.digest() != b.digest()


def test_rewrite_replaces_stage_file(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    ledger.append(SCORES_FILE, {"response_id": "r1"})
    ledger.append(SCORES_FILE, {"response_id": "r2"})
    kept = [r for r in ledger.records(SCORES_FILE) if r["response_id"] == "r1"]
    ledger.rewrite(SCORES_FILE, kept)
    ledger.sync_seq()
    assert ledger.records(SCORES_FILE) == kept
    assert ledger.append(SCORES_FILE, {"response_id": "r3"})["seq"] == 2


def test_seal_marks_manifest(tmp_path):
    ledger = RunLedger.create_or_resume(tmp_path / "l", MANIFEST)
    assert not ledger.sealed
    ledger.seal()
    assert ledger.sealed
    data = json.loads((tmp_path / "l" / "manifest.json").read_text(encoding="utf-8"))
    assert data["sealed"] is True
