"""``osdelta`` command line: synth, compress, decompress, sweep, report.

Exit codes: 0 success, 2 argument error, 3 data/format error, 4 evaluation
hook error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import matio
from .budget import BudgetSpec, assert_within_budget, svd_cost
from .errors import ArgumentError, EvaluationError, OSDError, StructuralError
from .osd import (DEFAULT_MAX_C, EvaluationHook, compress_mag, compress_osd, compress_sparse_only,
                  compress_truncsvd, importance_from_gradient, ones_importance, sweep_c)
from .sparsify import SparseFactorPair, reconstruct_record, record_cost
from .store import CompressedModel, layer_stats, load_model, record_shape, save_model
from .synth import planted_model

log = logging.getLogger("osdelta")

METHODS = ("truncsvd", "mag", "osd", "sparse-only")
SWEEP_COLUMNS = ("c", "score", "total_bits", "header_bits", "wall_ms")
REPORT_COLUMNS = ("layer", "method", "n", "d", "r", "c", "value_bits", "index_bits",
                  "payload_bits", "budget_bits", "header_bits")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def _inputs(p):
    p.add_argument("--manifest", help="JSON role -> container mapping")
    p.add_argument("--pretrained", help="SDT1 container of pre-trained weights")
    p.add_argument("--finetuned", help="SDT1 container of fine-tuned weights")
    p.add_argument("--delta", help="SDT1 container of updates (overrides finetuned - pretrained)")
    p.add_argument("--grad", help="SDT1 container of loss gradients w.r.t. fine-tuned weights")
    p.add_argument("--importance", help="SDT1 container of nonnegative importance maps")
    p.add_argument("--rank", type=int, default=1, help="reference rank r (default 1)")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="osdelta", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="compress every layer update at a fixed c")
    _inputs(p)
    p.add_argument("--method", choices=METHODS, default="osd")
    p.add_argument("--c", type=int, default=1, help="rank relaxation (mag, osd)")
    p.add_argument("--out", required=True, help="output model directory")

    p = sub.add_parser("decompress", help="rebuild fine-tuned weights from a model directory")
    p.add_argument("model", help="compressed model directory")
    p.add_argument("--pretrained", help="pre-trained container (default: the one recorded)")
    p.add_argument("--out", required=True, help="output SDT1 container")

    p = sub.add_parser("sweep", help="OSD over c = 1..max-c, keep the best")
    _inputs(p)
    p.add_argument("--max-c", type=int, default=DEFAULT_MAX_C)
    p.add_argument("--hook-cmd", help="scoring command; {path} is the candidate SDT1 file")
    p.add_argument("--csv", help="per-c CSV (default stdout)")
    p.add_argument("--out", help="directory for the best candidate")

    p = sub.add_parser("report", help="per-layer bit accounting of a model directory")
    p.add_argument("model")
    p.add_argument("--csv", help="CSV output (default stdout)")

    p = sub.add_parser("synth", help="write a seeded synthetic model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--cols", type=int, default=256)
    p.add_argument("--true-rank", type=int, default=8)
    p.add_argument("--spike-frac", type=float, default=0.01)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output directory")
    return ap


# ---------------------------------------------------------------------------
# input resolution
# ---------------------------------------------------------------------------

def _roles(args) -> dict[str, Path]:
    roles = matio.load_manifest(args.manifest) if args.manifest else {}
    for role, flag in (("pretrained", "pretrained"), ("finetuned", "finetuned"),
                       ("delta", "delta"), ("gradient", "grad"), ("importance", "importance")):
        if getattr(args, flag, None):
            roles[role] = Path(getattr(args, flag))
    return roles


def resolve_inputs(args):
    """Returns (deltas, importance maps, pretrained-or-None, pretrained path)."""
    roles = _roles(args)
    pretrained = matio.load_layer_set(roles["pretrained"]) if "pretrained" in roles else None
    finetuned = matio.load_layer_set(roles["finetuned"]) if "finetuned" in roles else None
    if "delta" in roles:
        deltas = matio.load_layer_set(roles["delta"])
    elif pretrained is not None and finetuned is not None:
        deltas = matio.delta(finetuned, pretrained)
    else:
        raise ArgumentError("need --delta, or both --finetuned and --pretrained")

    if "importance" in roles:
        zs = matio.load_layer_set(roles["importance"])
        _same_layout(zs, deltas, "importance")
        z_set = [m for _, m in zs]
    elif "gradient" in roles:
        if finetuned is None:
            raise ArgumentError("--grad needs --finetuned weights to form |grad * weights|")
        grads = matio.load_layer_set(roles["gradient"])
        _same_layout(grads, deltas, "gradient")
        z_set = [importance_from_gradient(g, w) for (_, g), (_, w) in zip(grads, finetuned)]
    else:
        z_set = [ones_importance(*m.shape) for _, m in deltas]
    return deltas, z_set, pretrained, roles.get("pretrained")


def _same_layout(a, b, what):
    if a.ids != b.ids or any(x.shape != y.shape for (_, x), (_, y) in zip(a, b)):
        raise StructuralError(f"{what} layers do not line up with the updates")


def _check_rank_args(args):
    if args.rank < 1:
        raise ArgumentError(f"--rank must be >= 1, got {args.rank}")
    if args.threads < 1:
        raise ArgumentError(f"--threads must be >= 1, got {args.threads}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def compress_layer(method: str, m, z, r: int, c: int):
    if method == "truncsvd":
        return compress_truncsvd(m, r)
    if method == "sparse-only":
        return compress_sparse_only(m, r)
    if method == "mag":
        return compress_mag(m, r, c)
    return compress_osd(m, z, r, c)


def verify_budget(lid: str, rec, r: int) -> None:
    """Re-check a record against the rank-r budget; raises on violation."""
    if isinstance(rec, SparseFactorPair):
        ok = assert_within_budget(rec, BudgetSpec(rec.n, rec.d, r, rec.c))
    else:
        n, d = record_shape(rec)
        ok = record_cost(rec).total_bits <= svd_cost(n, d, r).total_bits
    if not ok:
        raise OSDError(f"layer {lid!r}: payload exceeds the rank-{r} budget; nothing written")


def _print_stats(model: CompressedModel, out=None):
    out = out or sys.stdout
    for lid, rec in zip(model.layer_ids, model.records):
        st = layer_stats(lid, rec, model.r)
        print(f"layer={lid} method={model.method} bits={st['payload_bits']} "
              f"budget={st['budget_bits']} header_bits={st['header_bits']}", file=out)


def cmd_compress(args) -> int:
    _check_rank_args(args)
    if args.c < 0:
        raise ArgumentError(f"--c must be >= 0, got {args.c}")
    deltas, z_set, _, pre_path = resolve_inputs(args)

    def one(i):
        lid, m = deltas.layers[i]
        try:
            return compress_layer(args.method, m, z_set[i], args.rank, args.c)
        except OSDError as exc:
            raise type(exc)(f"layer {lid!r}: {exc}") from exc

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as ex:
            records = list(ex.map(one, range(len(deltas))))
    else:
        records = [one(i) for i in range(len(deltas))]
    for lid, rec in zip(deltas.ids, records):
        verify_budget(lid, rec, args.rank)
    c = None if args.method in ("truncsvd", "sparse-only") else args.c
    model = CompressedModel(args.method, args.rank, c, deltas.ids, records,
                            str(Path(pre_path).resolve()) if pre_path else None)
    save_model(model, args.out)
    _print_stats(model)
    return 0


def decompress(model: CompressedModel, pretrained: matio.LayerSet) -> matio.LayerSet:
    if pretrained.ids != model.layer_ids:
        raise StructuralError(f"record layers {model.layer_ids} do not match "
                              f"pretrained layers {pretrained.ids}")
    out = []
    for (lid, wp), rec in zip(pretrained, model.records):
        upd = reconstruct_record(rec)
        if upd.shape != wp.shape:
            raise StructuralError(f"layer {lid!r}: record {upd.shape} vs pretrained {wp.shape}")
        out.append((lid, np.add(wp, upd, dtype=np.float32)))
    return matio.LayerSet.from_pairs(out)


def cmd_decompress(args) -> int:
    model = load_model(args.model)
    pre = args.pretrained or model.pretrained
    if not pre:
        raise ArgumentError("no --pretrained given and none recorded in the model")
    matio.save_layer_set(decompress(model, matio.load_layer_set(pre)), args.out)
    return 0


def _write_csv(path, columns, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def sweep_rows(result) -> list[list]:
    rows = []
    for cand in result.per_c:
        score = "" if cand.score is None else repr(cand.score)
        rows.append([cand.c, score, cand.total_bits, cand.header_bits, f"{cand.wall_ms:.3f}"])
    return rows


def cmd_sweep(args) -> int:
    _check_rank_args(args)
    if args.max_c < 1:
        raise ArgumentError(f"--max-c must be >= 1, got {args.max_c}")
    deltas, z_set, pretrained, pre_path = resolve_inputs(args)
    hook = (EvaluationHook.external(args.hook_cmd, pretrained) if args.hook_cmd
            else EvaluationHook.proxy())
    result = sweep_c(deltas, z_set, args.rank, args.max_c, hook,
                     threads=args.threads, on_error="record")
    _write_csv(args.csv, SWEEP_COLUMNS, sweep_rows(result))
    best = result.best
    if best is None:
        errors = "; ".join(f"c={cand.c}: {cand.error}" for cand in result.per_c)
        raise EvaluationError(f"every candidate failed ({errors})")
    for lid, rec in zip(deltas.ids, best.pairs):
        verify_budget(lid, rec, args.rank)
    log.info("c* = %d", result.c_star)
    if args.out:
        model = CompressedModel("osd", args.rank, result.c_star, deltas.ids, best.pairs,
                                str(Path(pre_path).resolve()) if pre_path else None)
        save_model(model, args.out)
        _print_stats(model, out=sys.stderr if not args.csv else sys.stdout)
    return 0


def report_rows(model: CompressedModel) -> list[list]:
    rows = []
    for lid, rec in zip(model.layer_ids, model.records):
        st = layer_stats(lid, rec, model.r)
        rows.append([lid, model.method, st["n"], st["d"], model.r,
                     "" if model.c is None else model.c,
                     st["value_bits"], st["index_bits"], st["payload_bits"],
                     st["budget_bits"], st["header_bits"]])
    return rows


def cmd_report(args) -> int:
    _write_csv(args.csv, REPORT_COLUMNS, report_rows(load_model(args.model)))
    return 0


def cmd_synth(args) -> int:
    if min(args.rows, args.cols, args.layers) < 1:
        raise ArgumentError("--rows, --cols and --layers must be positive")
    sets = planted_model(args.seed, args.layers, args.rows, args.cols,
                         true_rank=args.true_rank, spike_frac=args.spike_frac, noise=args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, ls in sets.items():
        paths[role] = f"{role}.sdt"
        matio.save_layer_set(ls, out / paths[role])
    matio.save_manifest(paths, out / "manifest.json")
    return 0


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except OSDError as exc:
        print(f"osdelta: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"osdelta: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
