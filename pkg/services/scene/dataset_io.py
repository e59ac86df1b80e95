"""
Dataset Files
Version: 1.0

Binary dataset codec plus JSON manifest sidecar (<path>.json).

Layout (little-endian):
    b"DRLDS1\\n"
    u8 factor count
    per factor: u8 name length | UTF-8 name | u16 cardinality | f64 lo | f64 hi
    u16 resolution | u8 channels | u64 record count
    records: u16 index per factor | u8 image bytes (round(pixel * 255))
"""

import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from services.errors import ContractViolationError, FormatError
from services.scene.factors import FactorDef, FactorSpec
from services.scene.sampler import GeneratedDataset, to_bytes_image
from services.serialization import read_json, write_json

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"DRLDS1\n"
CHANNELS = 3

Records = Union[GeneratedDataset, Iterable[Tuple[Sequence[int], np.ndarray]]]


def manifest_path(path: Union[str, Path]) -> Path:
    return Path(f"{path}.json")


def _record_dtype(num_factors: int, resolution: int, channels: int) -> np.dtype:
    return np.dtype([
        ("indices", "<u2", (num_factors,)),
        ("image", "u1", (resolution, resolution, channels)),
    ])


def _encode_header(spec: FactorSpec, resolution: int, channels: int, count: int) -> bytes:
    chunks = [DATASET_MAGIC, struct.pack("<B", spec.num_factors)]
    for factor in spec.factors:
        name = factor.name.encode("utf-8")
        if len(name) > 255:
            raise ContractViolationError(f"factor name too long: {factor.name}")
        chunks.append(struct.pack("<B", len(name)) + name)
        chunks.append(struct.pack("<Hdd", factor.cardinality, factor.lo, factor.hi))
    chunks.append(struct.pack("<HBQ", resolution, channels, count))
    return b"".join(chunks)


def _collect(records: Records, spec: FactorSpec, resolution: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(records, GeneratedDataset):
        return records.factors, records.images
    factors, images = [], []
    for indices, image in records:
        factors.append(spec.validate_tuple(indices))
        image = np.asarray(image)
        images.append(image if image.dtype == np.uint8 else to_bytes_image(image))
    if not images:
        r = resolution or 0
        return np.zeros((0, spec.num_factors), dtype=np.int64), np.zeros((0, r, r, CHANNELS), dtype=np.uint8)
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ContractViolationError(f"records have mixed image shapes: {sorted(shapes)}")
    return np.array(factors, dtype=np.int64), np.stack(images)


def write_dataset(
    records: Records,
    spec: FactorSpec,
    path: Union[str, Path],
    seed: Optional[int] = None,
    config_hash: Optional[str] = None,
    resolution: Optional[int] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    Write records and their manifest.

    Args:
        records: A GeneratedDataset or (factor tuple, image) pairs; float
            images in [0, 1] are quantized to bytes
        spec: Factor grid the indices refer to
        path: Dataset file path; the manifest goes to <path>.json
        seed: Generation seed recorded in the manifest
        config_hash: Hash of the generating configuration
        resolution: Image size to record when there are no records
        extra: Additional manifest fields (pairs flag, hues, shift)

    Returns:
        The manifest dict

    Raises:
        FormatError: On I/O failure, with the path
    """
    factors, images = _collect(records, spec, resolution)
    count = int(factors.shape[0])
    r = int(images.shape[1]) if count else int(resolution or (images.shape[1] if images.ndim == 4 else 0))
    if count and images.shape[1:] != (r, r, CHANNELS):
        raise ContractViolationError(f"images must be square RGB, got {images.shape[1:]}")
    for k, factor in enumerate(spec.factors):
        if count and (factors[:, k].min() < 0 or factors[:, k].max() >= factor.cardinality):
            raise ContractViolationError(f"factor {factor.name} index out of range")

    body = np.empty(count, dtype=_record_dtype(spec.num_factors, r, CHANNELS))
    body["indices"] = factors
    body["image"] = images
    payload = _encode_header(spec, r, CHANNELS, count) + body.tobytes()

    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(payload)
    except OSError as e:
        raise FormatError(f"cannot write dataset: {e}", str(path)) from e

    manifest = {
        "format": DATASET_MAGIC.decode().strip(),
        "count": count,
        "resolution": r,
        "seed": seed,
        "config_hash": config_hash,
        "spec": spec.model_dump(mode="json"),
        "pairs": bool(getattr(records, "pairs", False)),
    }
    manifest.update(extra or {})
    write_json(manifest_path(path), manifest)
    logger.info(f"Wrote {count} records ({r}x{r}) to {path}")
    return manifest


def _read_header(data: bytes, path: str) -> Tuple[FactorSpec, int, int, int, int]:
    if not data.startswith(DATASET_MAGIC):
        if data.startswith(b"DRLDS"):
            raise FormatError(f"unsupported dataset version {data[:7]!r}", path)
        raise FormatError("not a dataset file (bad magic bytes)", path)
    offset = len(DATASET_MAGIC)
    try:
        (num_factors,) = struct.unpack_from("<B", data, offset)
        offset += 1
        factors = []
        for _ in range(num_factors):
            (name_len,) = struct.unpack_from("<B", data, offset)
            offset += 1
            name = data[offset:offset + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise FormatError("truncated factor name", path)
            offset += name_len
            cardinality, lo, hi = struct.unpack_from("<Hdd", data, offset)
            offset += struct.calcsize("<Hdd")
            factors.append(FactorDef(name=name, cardinality=cardinality, lo=lo, hi=hi))
        resolution, channels, count = struct.unpack_from("<HBQ", data, offset)
        offset += struct.calcsize("<HBQ")
    except struct.error as e:
        raise FormatError(f"truncated header: {e}", path) from e
    except (UnicodeDecodeError, ValueError) as e:
        raise FormatError(f"invalid header: {e}", path) from e
    return FactorSpec(factors=tuple(factors)), resolution, channels, count, offset


def load_dataset(path: Union[str, Path]) -> GeneratedDataset:
    """
    Inverse of write_dataset.

    Raises:
        FormatError: Bad magic or version, truncation, trailing bytes, or
            factor indices outside their cardinality
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read dataset: {e}", str(path)) from e

    spec, resolution, channels, count, offset = _read_header(data, str(path))
    if channels != CHANNELS:
        raise FormatError(f"expected {CHANNELS} channels, found {channels}", str(path))
    dtype = _record_dtype(spec.num_factors, resolution, channels)
    expected = offset + count * dtype.itemsize
    if len(data) < expected:
        raise FormatError(
            f"truncated: header announces {count} records ({expected} bytes), file has {len(data)}", str(path)
        )
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after the last record", str(path))

    body = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    factors = body["indices"].astype(np.int64)
    for k, factor in enumerate(spec.factors):
        if count and factors[:, k].max() >= factor.cardinality:
            raise FormatError(f"index out of range for factor {factor.name}", str(path))

    pairs = False
    changed = None
    manifest_file = manifest_path(path)
    if manifest_file.exists():
        pairs = bool(read_json(manifest_file).get("pairs", False))
    if pairs:
        if count % 2:
            raise FormatError("pair dataset with an odd record count", str(path))
        diff = factors[0::2] != factors[1::2]
        changed = np.argmax(diff, axis=1)

    images = np.array(body["image"], dtype=np.uint8)
    logger.info(f"Loaded {count} records ({resolution}x{resolution}) from {path}")
    return GeneratedDataset(spec=spec, factors=factors, images=images, pairs=pairs, changed=changed)


def load_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    return read_json(manifest_path(path))
