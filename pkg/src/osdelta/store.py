"""Compressed-model directories: a JSON manifest plus one record per layer."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .budget import svd_cost
from .errors import FormatError, StructuralError
from .sparsify import decode, encode, header_bits, record_cost

MANIFEST = "manifest.json"
FORMAT = "osd-model/1"


@dataclass
class CompressedModel:
    method: str
    r: int
    c: int | None
    layer_ids: list[str]
    records: list  # SparseFactorPair | SparseMatrix | FactorPair
    pretrained: str | None = None


def layer_stats(lid: str, rec, r: int) -> dict:
    n, d = record_shape(rec)
    cost = record_cost(rec)
    return {
        "id": lid,
        "n": n,
        "d": d,
        "value_bits": cost.value_bits,
        "index_bits": cost.index_bits,
        "payload_bits": cost.total_bits,
        "budget_bits": svd_cost(n, d, r).total_bits,
        "header_bits": header_bits(rec),
    }


def record_shape(rec) -> tuple[int, int]:
    if hasattr(rec, "rows"):
        return rec.rows, rec.cols
    if hasattr(rec, "shape"):
        return tuple(rec.shape)
    return rec.n, rec.d


def save_model(model: CompressedModel, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (lid, rec) in enumerate(zip(model.layer_ids, model.records)):
        name = f"layer_{i:05d}.rec"
        (out / name).write_bytes(encode(rec))
        entries.append({"record": name, **layer_stats(lid, rec, model.r)})
    body = {
        "format": FORMAT,
        "method": model.method,
        "r": model.r,
        "c": model.c,
        "pretrained": model.pretrained,
        "layers": entries,
    }
    (out / MANIFEST).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    return out


def load_model(model_dir) -> CompressedModel:
    root = Path(model_dir)
    path = root / MANIFEST
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"{root}: no {MANIFEST}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if body.get("format") != FORMAT:
        raise FormatError(f"{path}: unsupported format {body.get('format')!r}")
    ids, recs = [], []
    for entry in body["layers"]:
        rec = decode((root / entry["record"]).read_bytes())
        if record_shape(rec) != (entry["n"], entry["d"]):
            raise StructuralError(f"layer {entry['id']!r}: record shape {record_shape(rec)} "
                                  f"does not match manifest {(entry['n'], entry['d'])}")
        ids.append(entry["id"])
        recs.append(rec)
    return CompressedModel(body["method"], body["r"], body["c"], ids, recs, body.get("pretrained"))
