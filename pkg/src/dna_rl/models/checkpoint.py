"""Binary checkpoint codec

Layout (all integers little-endian):

    magic      8 bytes   b"DNACKPT\\0"
    version    uint32    1
    n_sections uint32
    n_sections times:
        name_len  uint16
        name      utf-8
        kind      uint8     0 = float64 array, 1 = JSON blob
        length    uint64    element count (kind 0) or byte count (kind 1)
        payload   little-endian float64 values or utf-8 JSON

Sections keep the order they were given in, so saving the same state twice
gives byte-identical files.
"""
import json
import logging
import os
import struct

import numpy as np

from ..utils.metrics import to_plain

log = logging.getLogger(__name__)

MAGIC = b"DNACKPT\0"
VERSION = 1
KIND_F64 = 0
KIND_JSON = 1


class CheckpointError(ValueError):
    """Raised for a file that is not a readable checkpoint"""


def encode_checkpoint(sections):
    """Serialize ``{name: np.ndarray | json-able}`` to bytes"""
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, value in sections.items():
        raw_name = name.encode("utf-8")
        if isinstance(value, np.ndarray):
            payload = np.ascontiguousarray(value, dtype="<f8").reshape(-1)
            header = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BQ", KIND_F64, payload.size)
            parts.extend([header, payload.tobytes()])
        else:
            blob = json.dumps(to_plain(value), sort_keys=True, separators=(",", ":")).encode("utf-8")
            header = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BQ", KIND_JSON, len(blob))
            parts.extend([header, blob])
    return b"".join(parts)


def decode_checkpoint(data):
    """Inverse of ``encode_checkpoint``; f64 sections come back as 1d arrays

    Raises:
        CheckpointError: bad magic, unsupported version or truncated data
    """
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", data, offset)
        offset += 8
        if version != VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}")
        sections = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            kind, length = struct.unpack_from("<BQ", data, offset)
            offset += 9
            if kind == KIND_F64:
                end = offset + 8 * length
                if end > len(data):
                    raise CheckpointError(f"Section {name!r} is truncated")
                sections[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64)
            elif kind == KIND_JSON:
                end = offset + length
                if end > len(data):
                    raise CheckpointError(f"Section {name!r} is truncated")
                sections[name] = json.loads(data[offset:end].decode("utf-8"))
            else:
                raise CheckpointError(f"Section {name!r} has unknown kind {kind}")
            offset = end
    except struct.error as e:
        raise CheckpointError(f"Truncated checkpoint: {e}") from e
    return sections


def save_checkpoint(path, sections):
    """Write ``sections`` to ``path`` atomically"""
    data = encode_checkpoint(sections)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    log.info("Checkpoint written to %s (%s sections)", path, len(sections))
    return path


def load_checkpoint(path):
    """Read a checkpoint file

    Raises:
        FileNotFoundError: ``path`` does not exist
        CheckpointError: the file is not a valid checkpoint
    """
    with open(path, "rb") as f:
        data = f.read()
    return decode_checkpoint(data)
