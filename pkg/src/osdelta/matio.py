"""Dense matrix containers (SDT1) and role manifests.

SDT1 layout, all integers little-endian::

    b"SDT1" | u32 layer_count
    per layer: u16 id_len | id (utf-8) | u32 rows | u32 cols | rows*cols f32

The writer is canonical, so ``save(load(p))`` reproduces ``p`` byte for byte.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ArgumentError, DataError, FormatError, IntegrityError, StructuralError

MAGIC = b"SDT1"
ROLES = ("pretrained", "finetuned", "delta", "importance", "gradient")

_F32 = np.dtype("<f4")


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a read-only, finite, 2-D float32 array."""
    m = np.array(values, dtype=np.float32, copy=True)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ArgumentError(f"{name}: expected a non-empty 2-D matrix, got shape {m.shape}")
    bad = np.flatnonzero(~np.isfinite(m))
    if bad.size:
        raise DataError(f"{name}: non-finite value at flat index {int(bad[0])}")
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class LayerSet:
    """Ordered, immutable collection of named 2-D float32 matrices."""

    layers: tuple[tuple[str, np.ndarray], ...]

    def __post_init__(self):
        ids = [lid for lid, _ in self.layers]
        if len(set(ids)) != len(ids):
            raise StructuralError(f"duplicate layer ids in {ids}")

    @classmethod
    def from_pairs(cls, pairs) -> "LayerSet":
        return cls(tuple((str(lid), as_matrix(m, name=str(lid))) for lid, m in pairs))

    @property
    def ids(self) -> list[str]:
        return [lid for lid, _ in self.layers]

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.layers)

    def __getitem__(self, layer_id: str) -> np.ndarray:
        for lid, m in self.layers:
            if lid == layer_id:
                return m
        raise KeyError(layer_id)


def encode_layer_set(ls: LayerSet) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(ls))]
    for lid, m in ls:
        raw = lid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ArgumentError(f"layer id too long: {lid[:32]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<II", *m.shape))
        parts.append(np.ascontiguousarray(m, dtype=_F32).tobytes())
    return b"".join(parts)


def decode_layer_set(buf: bytes) -> LayerSet:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("not an SDT1 container (bad magic)")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    pairs = []
    for li in range(count):
        if pos + 2 > len(buf):
            raise FormatError(f"truncated header for layer #{li}")
        (idlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + idlen + 8 > len(buf):
            raise FormatError(f"truncated header for layer #{li}")
        try:
            lid = buf[pos:pos + idlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"layer #{li}: id is not valid utf-8") from exc
        pos += idlen
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        if rows == 0 or cols == 0:
            raise FormatError(f"layer {lid!r}: zero-sized shape {rows}x{cols}")
        nbytes = 4 * rows * cols
        if pos + nbytes > len(buf):
            have = (len(buf) - pos) // 4
            raise IntegrityError(
                f"layer {lid!r}: payload has {have} floats, header declares {rows * cols}")
        m = np.frombuffer(buf, dtype=_F32, count=rows * cols, offset=pos).reshape(rows, cols)
        pos += nbytes
        bad = np.flatnonzero(~np.isfinite(m))
        if bad.size:
            raise DataError(f"layer {lid!r}: non-finite value at flat index {int(bad[0])}")
        m = m.astype(np.float32)
        m.flags.writeable = False
        pairs.append((lid, m))
    if pos != len(buf):
        raise IntegrityError(f"{len(buf) - pos} trailing bytes after last layer")
    ids = [p[0] for p in pairs]
    if len(set(ids)) != len(ids):
        raise FormatError(f"duplicate layer ids in container: {ids}")
    return LayerSet(tuple(pairs))


def load_layer_set(path) -> LayerSet:
    return decode_layer_set(Path(path).read_bytes())


def save_layer_set(ls: LayerSet, path) -> None:
    Path(path).write_bytes(encode_layer_set(ls))


def _check_aligned(a: LayerSet, b: LayerSet, what: str) -> None:
    problems = []
    if a.ids != b.ids:
        problems.append(f"layer ids differ: {a.ids} vs {b.ids}")
    else:
        for (lid, ma), (_, mb) in zip(a, b):
            if ma.shape != mb.shape:
                problems.append(f"{lid}: {ma.shape} vs {mb.shape}")
    if problems:
        raise StructuralError(f"{what}: " + "; ".join(problems))


def delta(fine_tuned: LayerSet, pretrained: LayerSet) -> LayerSet:
    """Per-layer ``fine_tuned - pretrained`` in float32."""
    _check_aligned(fine_tuned, pretrained, "delta")
    out = []
    for (lid, wf), (_, wp) in zip(fine_tuned, pretrained):
        d = np.subtract(wf, wp, dtype=np.float32)
        d.flags.writeable = False
        out.append((lid, d))
    return LayerSet(tuple(out))


def add(base: LayerSet, update: LayerSet) -> LayerSet:
    _check_aligned(base, update, "add")
    out = []
    for (lid, wb), (_, du) in zip(base, update):
        s = np.add(wb, du, dtype=np.float32)
        s.flags.writeable = False
        out.append((lid, s))
    return LayerSet(tuple(out))


def load_manifest(path) -> dict[str, Path]:
    """Read a role -> container-path mapping; relative paths resolve against the manifest."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    unknown = set(raw) - set(ROLES)
    if unknown:
        raise FormatError(f"{path}: unknown roles {sorted(unknown)}")
    return {role: (path.parent / p) for role, p in raw.items()}


def save_manifest(roles: dict, path) -> None:
    unknown = set(roles) - set(ROLES)
    if unknown:
        raise ArgumentError(f"unknown roles {sorted(unknown)}")
    body = {role: str(roles[role]) for role in ROLES if role in roles}
    Path(path).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
