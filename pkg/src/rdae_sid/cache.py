"""Feature caches and the in-memory feature set used for training.

Mel cache layout (all integers little-endian)::

    b"MELC"  uint32 format version  uint32 record count
    per record: uint32 metadata length, metadata JSON (UTF-8),
                27 x 140 float32, row-major, time-major

The handcrafted cache uses magic ``b"HNDC"`` and the same framing with 40
floats per record; after the record count it carries one length-prefixed JSON
block naming the vector layout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, FormatError, UnsupportedFormatError
from .features import HANDCRAFTED_DIM, HANDCRAFTED_LAYOUT, SPEC_SHAPE

CACHE_VERSION = 1
MAGICS = {"mel": b"MELC", "handcrafted": b"HNDC"}
RECORD_SHAPES = {"mel": SPEC_SHAPE, "handcrafted": (HANDCRAFTED_DIM,)}


class CacheWriter:
    """Streams records to disk; the record count is patched in on close."""

    def __init__(self, path: str | Path, kind: str):
        if kind not in MAGICS:
            raise ArgumentError(f"unknown cache kind {kind!r}")
        self.kind = kind
        self.shape = RECORD_SHAPES[kind]
        self.count = 0
        self._fh = open(path, "wb")
        self._fh.write(MAGICS[kind])
        self._fh.write(struct.pack("<II", CACHE_VERSION, 0))
        if kind == "handcrafted":
            blob = json.dumps({"dim": HANDCRAFTED_DIM, "layout": HANDCRAFTED_LAYOUT}, sort_keys=True).encode()
            self._fh.write(struct.pack("<I", len(blob)) + blob)

    def write(self, metadata: dict, values: np.ndarray) -> None:
        values = np.asarray(values)
        if values.shape != self.shape:
            raise ArgumentError(f"{self.kind} record must be {self.shape}, got {values.shape}")
        blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
        self._fh.write(struct.pack("<I", len(blob)))
        self._fh.write(blob)
        self._fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(8)
        self._fh.write(struct.pack("<I", self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_cache(path: str | Path, kind: str, records: Sequence[dict], values: np.ndarray) -> None:
    with CacheWriter(path, kind) as w:
        for meta, v in zip(records, values):
            w.write(meta, v)


def read_cache(path: str | Path) -> "FeatureSet":
    raw = Path(path).read_bytes()
    kinds = {m: k for k, m in MAGICS.items()}
    kind = kinds.get(raw[:4])
    if kind is None:
        raise FormatError(f"{path}: not a feature cache (bad magic)")
    version, count = struct.unpack("<II", raw[4:12])
    if version != CACHE_VERSION:
        raise UnsupportedFormatError(f"{path}: cache format version {version}")
    pos = 12
    if kind == "handcrafted":
        (hlen,) = struct.unpack("<I", raw[pos : pos + 4])
        header = json.loads(raw[pos + 4 : pos + 4 + hlen])
        if header.get("dim") != HANDCRAFTED_DIM:
            raise UnsupportedFormatError(f"{path}: handcrafted dim {header.get('dim')}")
        pos += 4 + hlen
    shape = RECORD_SHAPES[kind]
    nbytes = 4 * int(np.prod(shape))
    values = np.empty((count, *shape), dtype=np.float32)
    records = []
    for i in range(count):
        if pos + 4 > len(raw):
            raise FormatError(f"{path}: truncated at record {i}")
        (mlen,) = struct.unpack("<I", raw[pos : pos + 4])
        pos += 4
        records.append(json.loads(raw[pos : pos + mlen].decode("utf-8")))
        pos += mlen
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated at record {i}")
        values[i] = np.frombuffer(raw[pos : pos + nbytes], dtype="<f4").reshape(shape)
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return FeatureSet(values, records, kind)


@dataclass
class AccessAudit:
    """Counts reads that touch a protected index set (the outer test split)."""

    protected: frozenset = frozenset()
    protected_reads: int = 0
    total_reads: int = 0

    def note(self, idx: np.ndarray) -> None:
        self.total_reads += 1
        if self.protected and not self.protected.isdisjoint(idx.tolist()):
            self.protected_reads += 1


@dataclass
class FeatureSet:
    """Aligned feature matrices and per-record metadata.

    All feature access during training goes through :meth:`take` so the
    audit sees every read.
    """

    values: np.ndarray
    records: list
    kind: str = "mel"
    audit: AccessAudit = field(default_factory=AccessAudit)

    def __post_init__(self):
        if len(self.records) != self.values.shape[0]:
            raise ArgumentError("feature values and records are misaligned")
        self.group_keys = np.array([r["group_key"] for r in self.records], dtype=object)
        self.speakers = np.array([r["speaker_id"] for r in self.records], dtype=object)
        self.snr_labels = np.array([str(r["snr_db"]) for r in self.records], dtype=object)
        self.noise_names = [r.get("noise_name") for r in self.records]
        clean_of = {}
        for i, r in enumerate(self.records):
            if r.get("noise_name") is None:
                clean_of[r["group_key"]] = i
        missing = set(self.group_keys) - set(clean_of)
        if missing:
            raise FormatError(f"{len(missing)} groups lack a clean version, e.g. {sorted(missing)[0]!r}")
        self.clean_index = np.array([clean_of[k] for k in self.group_keys], dtype=np.int64)
        self.speaker_list = sorted(set(self.speakers))
        lookup = {s: i for i, s in enumerate(self.speaker_list)}
        self.labels = np.array([lookup[s] for s in self.speakers], dtype=np.int64)
        # reduction order for statistics: group, then noise, then SNR
        order_keys = [(r["group_key"], r.get("noise_name") or "", str(r["snr_db"])) for r in self.records]
        self._rank = np.empty(len(order_keys), dtype=np.int64)
        self._rank[sorted(range(len(order_keys)), key=order_keys.__getitem__)] = np.arange(len(order_keys))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.speaker_list)

    def indices_for_groups(self, keys) -> np.ndarray:
        keys = set(keys)
        idx = np.array([i for i, k in enumerate(self.group_keys) if k in keys], dtype=np.int64)
        return idx[np.argsort(self._rank[idx], kind="stable")] if idx.size else idx

    def take(self, idx: np.ndarray, clean: bool = False) -> np.ndarray:
        """Feature rows for ``idx`` as float64 (or their clean counterparts)."""
        idx = np.asarray(idx, dtype=np.int64)
        self.audit.note(idx)
        rows = self.clean_index[idx] if clean else idx
        return self.values[rows].astype(np.float64)

    def conditions(self, idx: np.ndarray) -> list[tuple[str, str | None]]:
        return [(self.snr_labels[i], self.noise_names[i]) for i in idx]

    def protect(self, idx) -> None:
        self.audit = AccessAudit(protected=frozenset(int(i) for i in idx))
