"""
Record Store
Version: 1.0

JSON-lines file of ModelRecords, one per line, appended by a single
writer. A hash may appear more than once (a failed attempt, then a
completed rerun); the last line wins.
"""

import logging
from pathlib import Path
from typing import Dict, List, Set, Union

import orjson
from pydantic import ValidationError

from schemas import ModelRecord
from services.errors import FormatError
from services.serialization import dumps

logger = logging.getLogger(__name__)


class RecordStore:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists()

    def load(self) -> List[ModelRecord]:
        """Every line in file order."""
        if not self.path.exists():
            return []
        records = []
        try:
            lines = self.path.read_bytes().splitlines()
        except OSError as e:
            raise FormatError(f"cannot read records: {e}", str(self.path)) from e
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                records.append(ModelRecord.model_validate(orjson.loads(line)))
            except (orjson.JSONDecodeError, ValidationError) as e:
                raise FormatError(f"line {number}: invalid record: {e}", str(self.path)) from e
        return records

    def latest(self) -> List[ModelRecord]:
        """Last record of each hash, ordered by first appearance."""
        by_hash: Dict[str, ModelRecord] = {}
        for record in self.load():
            by_hash[record.config_hash] = record
        return list(by_hash.values())

    def completed_hashes(self) -> Set[str]:
        return {r.config_hash for r in self.latest() if r.status == "completed"}

    def append(self, record: ModelRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with self.path.open("ab") as f:
                f.write(dumps(record) + b"\n")
        except OSError as e:
            raise FormatError(f"cannot append record: {e}", str(self.path)) from e
