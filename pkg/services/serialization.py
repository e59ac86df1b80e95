"""
Serialization Helpers
Version: 1.0

orjson-based JSON I/O and stable content hashes for configs, manifests
and records.
NO DEPENDENCIES on other services.
"""

import hashlib
from pathlib import Path
from typing import Any, Union

import numpy as np
import orjson
from pydantic import BaseModel

from services.errors import FormatError

JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj: Any, indent: bool = False) -> bytes:
    options = JSON_OPTIONS | (orjson.OPT_INDENT_2 if indent else 0)
    return orjson.dumps(obj, default=_default, option=options)


def stable_hash(obj: Any, length: int = 16) -> str:
    """Hex digest of the canonical (sorted-key) JSON encoding."""
    return hashlib.sha256(dumps(obj)).hexdigest()[:length]


def write_json(path: Union[str, Path], obj: Any) -> None:
    try:
        Path(path).write_bytes(dumps(obj, indent=True) + b"\n")
    except OSError as e:
        raise FormatError(f"cannot write JSON: {e}", str(path)) from e


def read_json(path: Union[str, Path]) -> Any:
    try:
        return orjson.loads(Path(path).read_bytes())
    except OSError as e:
        raise FormatError(f"cannot read JSON: {e}", str(path)) from e
    except orjson.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}", str(path)) from e
