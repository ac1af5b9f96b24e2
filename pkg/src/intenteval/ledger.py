"""Append-only run ledger.

One directory per run: a manifest plus line-delimited JSON stage files and the
final aggregates CSV. Records carry monotonically increasing ``seq`` stamps
(logical, not wall-clock) so that a resumed run is byte-identical to an
uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DomainError, ResumeConflict

TASKS_FILE = "tasks.jsonl"
RESPONSES_FILE = "responses.jsonl"
MAPPINGS_FILE = "mappings.jsonl"
SCORES_FILE = "scores.jsonl"
BASELINE_FILE = "baseline.jsonl"
FACTCHECK_FILE = "factcheck.jsonl"
MANIFEST_FILE = "manifest.json"
AGGREGATES_FILE = "aggregates.csv"

STAGE_FILES = (
    TASKS_FILE,
    RESPONSES_FILE,
    MAPPINGS_FILE,
    SCORES_FILE,
    BASELINE_FILE,
    FACTCHECK_FILE,
)

#: Canonical file order the ledger digest runs over.
DIGEST_FILES = (MANIFEST_FILE,) + STAGE_FILES + (AGGREGATES_FILE,)


def _read_jsonl(path: Path) -> list[dict]:
    """Parse a JSONL file, silently dropping a trailing partial line."""
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            # Interrupted write: everything before this line is intact.
            break
    return records


class RunLedger:
    """Persisted record of every pipeline stage for one evaluation run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._seq = 0

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def create_or_resume(cls, root: str | Path, manifest: Mapping) -> RunLedger:
        """Open a ledger directory, writing the manifest on first use.

        Re-opening a sealed ledger is an error; re-opening an unsealed one
        with a different configuration is as well.
        """
        ledger = cls(root)
        existing = ledger.manifest()
        if existing is not None:
            if existing.get("sealed"):
                raise ResumeConflict(f"ledger at {ledger.root} is sealed")
            if existing.get("config_digest") != manifest.get("config_digest"):
                raise ResumeConflict(
                    f"ledger at {ledger.root} was started with a different configuration"
                )
        else:
            ledger.root.mkdir(parents=True, exist_ok=True)
            ledger._write_manifest({**manifest, "sealed": False})
        ledger._seq = ledger._max_seq()
        return ledger

    @classmethod
    def open(cls, root: str | Path) -> RunLedger:
        ledger = cls(root)
        if ledger.manifest() is None:
            raise DomainError(f"no ledger at {ledger.root}")
        ledger._seq = ledger._max_seq()
        return ledger

    def manifest(self) -> dict | None:
        path = self.root / MANIFEST_FILE
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _write_manifest(self, data: Mapping) -> None:
        path = self.root / MANIFEST_FILE
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @property
    def sealed(self) -> bool:
        manifest = self.manifest()
        return bool(manifest and manifest.get("sealed"))

    def seal(self) -> None:
        manifest = self.manifest()
        if manifest is None:
            raise DomainError("cannot seal a ledger with no manifest")
        manifest["sealed"] = True
        self._write_manifest(manifest)

    # -- records --------------------------------------------------------------

    def _max_seq(self) -> int:
        top = 0
        for name in STAGE_FILES:
            for record in _read_jsonl(self.root / name):
                top = max(top, int(record.get("seq", 0)))
        return top

    def append(self, filename: str, record: Mapping) -> dict:
        """Append one record with the next sequence stamp. Single-writer only."""
        if filename not in STAGE_FILES:
            raise DomainError(f"unknown ledger file: {filename}")
        self._seq += 1
        stamped = {**record, "seq": self._seq}
        with open(self.root / filename, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(stamped, ensure_ascii=False) + "\n")
        return stamped

    def records(self, filename: str) -> list[dict]:
        if filename not in STAGE_FILES:
            raise DomainError(f"unknown ledger file: {filename}")
        return _read_jsonl(self.root / filename)

    def rewrite(self, filename: str, records: Iterable[Mapping]) -> None:
        """Replace a stage file wholesale. Reserved for startup recovery."""
        if filename not in STAGE_FILES:
            raise DomainError(f"unknown ledger file: {filename}")
        path = self.root / filename
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def write_aggregates(self, csv_text: str) -> None:
        (self.root / AGGREGATES_FILE).write_text(csv_text, encoding="utf-8")

    def sync_seq(self) -> None:
        """Re-derive the next sequence stamp after recovery rewrote files."""
        self._seq = self._max_seq()

    # -- integrity ------------------------------------------------------------

    def digest(self) -> str:
        """Content hash over the canonical files, in fixed order."""
        hasher = hashlib.sha256()
        for name in DIGEST_FILES:
            path = self.root / name
            hasher.update(name.encode("utf-8") + b"\n")
            if path.exists():
                hasher.update(path.read_bytes())
            hasher.update(b"\x00")
        return hasher.hexdigest()
