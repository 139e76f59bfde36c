"""Binary checkpoints.

Layout::

    b"RDCK"
    uint64 LE   header length in bytes
    header      UTF-8 JSON, keys sorted; always carries "format_version"
                and "tensors" = [{"name", "shape"}, ...] in storage order
    tensors     each as little-endian float64, row-major, in header order
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import FormatError, UnsupportedFormatError

MAGIC = b"RDCK"
FORMAT_VERSION = 1


def dumps_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path: str | Path, header: dict, params: dict) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    blob = dumps_header(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise UnsupportedFormatError(f"{path}: checkpoint format version {header.get('format_version')}")
    params = OrderedDict()
    pos = 12 + hlen
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = pos + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {t['name']}")
        params[t["name"]] = np.frombuffer(raw[pos:end], dtype="<f8").reshape(t["shape"]).astype(np.float64)
        pos = end
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, params
