"""Importance-aware joint sparsification of relaxed-rank SVD factors.

``compress_osd`` runs a rank ``r + c`` truncated SVD, scores every factor
entry by the importance-weighted damage its removal would do to ``U'V'``,
and keeps the highest-scoring entries of both factors jointly until the
rank-``r`` bit budget is spent. ``sweep_c`` repeats this for ``c = 1..C``
across a whole model and keeps the best-scoring candidate.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .budget import BudgetSpec, assert_within_budget, sparse_only_level
from .errors import ArgumentError, EvaluationError, OSDError, StructuralError
from .linalg import FactorPair, truncated_svd
from .matio import LayerSet, add, save_layer_set
from .sparsify import SparseFactorPair, header_bits, reconstruct_record, record_cost, top_s

log = logging.getLogger(__name__)

DEFAULT_MAX_C = 5


# ---------------------------------------------------------------------------
# importance maps
# ---------------------------------------------------------------------------

def _importance(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ArgumentError(f"importance map must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise ArgumentError("importance map entries must be finite and nonnegative")
    return m


def importance_from_gradient(grad, weights) -> np.ndarray:
    """First-order Taylor saliency ``|grad * weights|``, elementwise."""
    grad = np.asarray(grad, dtype=np.float32)
    weights = np.asarray(weights, dtype=np.float32)
    if grad.shape != weights.shape:
        raise StructuralError(f"gradient {grad.shape} and weights {weights.shape} differ in shape")
    z = np.abs(grad * weights)
    z.flags.writeable = False
    return z


def ones_importance(n: int, d: int) -> np.ndarray:
    z = np.ones((n, d), dtype=np.float32)
    z.flags.writeable = False
    return z


# ---------------------------------------------------------------------------
# sensitivities and selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityPair:
    q_u: np.ndarray  # n x k
    q_v: np.ndarray  # k x d


def sensitivity(f: FactorPair, z) -> SensitivityPair:
    """Cost of zeroing each entry of ``U'`` and ``V'``.

    ``q_u[i, j] = sum_t z[i, t] |U'[i, j] V'[j, t]|`` and symmetrically for
    ``q_v``. Both factor out of the sum, so two (n x d) by (d x k) products
    give everything in O(n d k).
    """
    z = _importance(z)
    n, d = f.shape
    if z.shape != (n, d):
        raise StructuralError(f"importance map {z.shape} does not match layer {(n, d)}")
    au = np.abs(f.u_prime.astype(np.float64))
    av = np.abs(f.v_prime.astype(np.float64))
    z64 = z.astype(np.float64)
    q_u = au * (z64 @ av.T)
    q_v = av * (au.T @ z64)
    return SensitivityPair(q_u, q_v)


def selection_order(f: FactorPair, q: SensitivityPair) -> tuple[np.ndarray, np.ndarray]:
    """Candidate entries in retention order.

    Returns ``(factor, flat)`` arrays: factor 0 is ``U'``, 1 is ``V'``.
    Sorted by q descending, then U before V, then lower flat index. Zero
    entries are excluded, and so are entries whose partner column of ``U'``
    (or row of ``V'``) is entirely zero, since they cannot change ``U'V'``.
    """
    live_u = np.any(f.u_prime != 0, axis=0)  # per component
    live_v = np.any(f.v_prime != 0, axis=1)
    mask_u = (f.u_prime != 0) & live_v[None, :]
    mask_v = (f.v_prime != 0) & live_u[:, None]
    u = f.u_prime.ravel()
    v = f.v_prime.ravel()
    qs = np.concatenate([q.q_u.ravel(), q.q_v.ravel()])
    factor = np.concatenate([np.zeros(u.size, np.int8), np.ones(v.size, np.int8)])
    flat = np.concatenate([np.arange(u.size), np.arange(v.size)])
    keep = np.concatenate([mask_u.ravel(), mask_v.ravel()])
    qs, factor, flat = qs[keep], factor[keep], flat[keep]
    # candidates are already in (factor, flat) order, so a stable sort on -q
    # gives the full tie-break
    order = np.argsort(-qs, kind="stable")
    return factor[order], flat[order]


def joint_select(f: FactorPair, q: SensitivityPair, spec: BudgetSpec) -> SparseFactorPair:
    """Greedy top-q selection over both factors under exact bit accounting.

    Entries are taken in :func:`selection_order` until the next one would
    push the payload past the rank-``r`` budget.
    """
    n, d = f.shape
    k = f.rank
    if (spec.n, spec.d, spec.k) != (n, d, k):
        raise StructuralError(f"budget ({spec.n}, {spec.d}, k={spec.k}) does not match "
                              f"factors ({n}, {d}, k={k})")
    if q.q_u.shape != (n, k) or q.q_v.shape != (k, d):
        raise StructuralError("sensitivity shapes do not match the factors")
    factor, flat = selection_order(f, q)
    costs = np.where(factor == 0, spec.entry_cost_u, spec.entry_cost_v).astype(np.int64)
    take = int(np.searchsorted(np.cumsum(costs), spec.bits_svd, side="right"))
    factor, flat = factor[:take], flat[:take]
    iu = np.sort(flat[factor == 0])
    iv = np.sort(flat[factor == 1])
    pair = SparseFactorPair(n, d, k, spec.r, spec.c,
                            iu, f.u_prime.ravel()[iu], iv, f.v_prime.ravel()[iv])
    assert assert_within_budget(pair, spec)
    return pair


# ---------------------------------------------------------------------------
# compressors
# ---------------------------------------------------------------------------

def _check_rank(shape, r, c) -> None:
    n, d = shape
    if r < 1 or c < 0:
        raise ArgumentError(f"need r >= 1 and c >= 0, got r={r}, c={c}")
    if r + c > min(n, d):
        raise ArgumentError(f"r + c = {r + c} exceeds min(n, d) = {min(n, d)}")


def compress_truncsvd(delta, r: int) -> FactorPair:
    _check_rank(np.shape(delta), r, 0)
    return truncated_svd(delta, r)


def compress_sparse_only(delta, r: int):
    """Plain top-s of the update at the rank-``r`` budget."""
    n, d = np.shape(delta)
    return top_s(delta, sparse_only_level(n, d, r))


def compress_mag(delta, r: int, c: int, factors: FactorPair | None = None) -> SparseFactorPair:
    """MagTruncSVD: independent magnitude top-s of each relaxed-rank factor."""
    _check_rank(np.shape(delta), r, c)
    n, d = np.shape(delta)
    spec = BudgetSpec(n, d, r, c)
    f = factors if factors is not None else truncated_svd(delta, spec.k)
    su = top_s(f.u_prime, spec.s_u)
    sv = top_s(f.v_prime, spec.s_v)
    pair = SparseFactorPair(n, d, spec.k, r, c, su.idx, su.val, sv.idx, sv.val)
    assert assert_within_budget(pair, spec)
    return pair


def compress_osd(delta, z, r: int, c: int, factors: FactorPair | None = None) -> SparseFactorPair:
    """OSD for one layer at a fixed relaxation ``c``.

    ``factors`` may pass a precomputed rank ``r + c`` SVD of ``delta``.
    """
    _check_rank(np.shape(delta), r, c)
    n, d = np.shape(delta)
    spec = BudgetSpec(n, d, r, c)
    f = factors if factors is not None else truncated_svd(delta, spec.k)
    return joint_select(f, sensitivity(f, z), spec)


# ---------------------------------------------------------------------------
# evaluation hooks and the c-sweep
# ---------------------------------------------------------------------------

def proxy_error(deltas: LayerSet, recons: Sequence[np.ndarray], z_set: Sequence[np.ndarray]) -> float:
    """Importance-weighted L1 reconstruction error summed over layers."""
    total = 0.0
    for (_, dm), rm, z in zip(deltas, recons, z_set):
        total += float(np.sum(np.asarray(z, np.float64)
                              * np.abs(dm.astype(np.float64) - rm.astype(np.float64))))
    return total


class EvaluationHook:
    """Scores a candidate model; higher is better.

    ``proxy`` returns the negated importance-weighted L1 error. ``external``
    writes the candidate model (pretrained + reconstruction when a pretrained
    set is given, else the reconstructed updates) to a temporary SDT1 file,
    runs ``command`` with ``{path}`` replaced by that file, and parses one
    decimal number from its stdout.
    """

    def __init__(self, mode: str = "proxy", command: str | None = None,
                 pretrained: LayerSet | None = None, timeout: float | None = None):
        if mode not in ("proxy", "external"):
            raise ArgumentError(f"unknown hook mode {mode!r}")
        if mode == "external" and not command:
            raise ArgumentError("external hook needs a command template")
        self.mode = mode
        self.command = command
        self.pretrained = pretrained
        self.timeout = timeout

    @classmethod
    def proxy(cls) -> "EvaluationHook":
        return cls("proxy")

    @classmethod
    def external(cls, command: str, pretrained: LayerSet | None = None, timeout=None):
        return cls("external", command, pretrained, timeout)

    def __call__(self, deltas: LayerSet, recons: Sequence[np.ndarray], z_set) -> float:
        if self.mode == "proxy":
            return -proxy_error(deltas, recons, z_set)
        return self._run_external(LayerSet.from_pairs(zip(deltas.ids, recons)))

    def _run_external(self, update: LayerSet) -> float:
        model = add(self.pretrained, update) if self.pretrained is not None else update
        with tempfile.TemporaryDirectory(prefix="osd-hook-") as tmp:
            path = Path(tmp) / "candidate.sdt"
            save_layer_set(model, path)
            argv = [a.replace("{path}", str(path)) for a in shlex.split(self.command)]
            if not any(str(path) in a for a in argv):
                argv.append(str(path))
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise EvaluationError(f"hook command failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluationError(f"hook exited with status {proc.returncode}: "
                                  f"{proc.stderr.strip()[:200]}")
        try:
            return float(proc.stdout.strip().split()[-1])
        except (IndexError, ValueError) as exc:
            raise EvaluationError(f"hook printed no score: {proc.stdout[:200]!r}") from exc


@dataclass
class Candidate:
    c: int
    score: float | None
    pairs: list[SparseFactorPair] = field(default_factory=list)
    total_bits: int = 0
    header_bits: int = 0
    wall_ms: float = 0.0
    error: str | None = None


@dataclass
class SweepResult:
    per_c: list[Candidate]
    c_star: int | None

    @property
    def best(self) -> Candidate | None:
        for cand in self.per_c:
            if cand.c == self.c_star:
                return cand
        return None


def best_c(per_c: Sequence[Candidate]) -> int | None:
    """argmax score over successful candidates; the smaller c wins ties."""
    ok = [cand for cand in per_c if cand.score is not None]
    if not ok:
        return None
    top = max(cand.score for cand in ok)
    return min(cand.c for cand in ok if cand.score == top)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def sweep_c(deltas: LayerSet, z_set: Sequence[np.ndarray] | None, r: int,
            max_c: int = DEFAULT_MAX_C, hook: Callable | None = None, *,
            threads: int = 1, on_error: str = "raise") -> SweepResult:
    """Compress every layer with OSD for ``c = 1..max_c`` and score each model.

    One SVD of rank ``r + max_c`` per layer is shared by all candidates; a
    rank ``r + c`` truncation is its leading ``r + c`` components. Layers too
    small for a given ``c`` make that candidate fail with an argument error.
    With ``on_error="raise"`` a failure raises :class:`EvaluationError`
    carrying ``c`` and the candidates finished so far; with ``"record"`` it
    is stored on the candidate and the sweep continues.
    """
    if max_c < 1:
        raise ArgumentError(f"max_c must be >= 1, got {max_c}")
    if on_error not in ("raise", "record"):
        raise ArgumentError(f"on_error must be 'raise' or 'record', got {on_error!r}")
    hook = hook or EvaluationHook.proxy()
    if z_set is None:
        z_set = [ones_importance(*m.shape) for _, m in deltas]
    z_set = list(z_set)
    if len(z_set) != len(deltas):
        raise StructuralError(f"{len(z_set)} importance maps for {len(deltas)} layers")

    def top_factors(item):
        _, m = item
        kmax = min(r + max_c, min(m.shape))
        return truncated_svd(m, kmax) if kmax >= 1 else None

    full = _map(top_factors, list(deltas), threads)

    per_c: list[Candidate] = []
    for c in range(1, max_c + 1):
        t0 = time.perf_counter()
        cand = Candidate(c=c, score=None)
        try:
            def one(i):
                lid, m = deltas.layers[i]
                _check_rank(m.shape, r, c)
                k = r + c
                f = full[i]
                sub = FactorPair(f.u_prime[:, :k], f.v_prime[:k], f.singular_values[:k])
                return compress_osd(m, z_set[i], r, c, factors=sub)

            cand.pairs = _map(one, range(len(deltas)), threads)
            recons = [reconstruct_record(p) for p in cand.pairs]
            cand.total_bits = sum(record_cost(p).total_bits for p in cand.pairs)
            cand.header_bits = sum(header_bits(p) for p in cand.pairs)
            cand.score = float(hook(deltas, recons, z_set))
        except OSDError as exc:
            cand.error = str(exc)
            cand.pairs = []
            cand.wall_ms = 1e3 * (time.perf_counter() - t0)
            per_c.append(cand)
            if on_error == "raise":
                raise EvaluationError(f"candidate c={c} failed: {exc}", c=c,
                                      partial=SweepResult(per_c, best_c(per_c))) from exc
            log.warning("candidate c=%d failed: %s", c, exc)
            continue
        cand.wall_ms = 1e3 * (time.perf_counter() - t0)
        per_c.append(cand)
        log.info("c=%d score=%.6g bits=%d", c, cand.score, cand.total_bits)
    return SweepResult(per_c, best_c(per_c))
