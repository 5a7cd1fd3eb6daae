"""Exact integer bit accounting.

Every stored value costs 32 bits. A sparse matrix with ``size`` slots also
pays ``ceil(log2(size))`` bits per stored entry for its flat index. Record
headers and byte padding are not part of the budget and are reported apart.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ArgumentError

VALUE_BITS = 32


def ceil_log2(x: int) -> int:
    if x < 1:
        raise ArgumentError(f"ceil_log2 needs a positive integer, got {x}")
    return (x - 1).bit_length()


@dataclass(frozen=True)
class BitCost:
    value_bits: int
    index_bits: int

    @property
    def total_bits(self) -> int:
        return self.value_bits + self.index_bits

    def __add__(self, other: "BitCost") -> "BitCost":
        return BitCost(self.value_bits + other.value_bits, self.index_bits + other.index_bits)


def _positive(**kw) -> None:
    for name, v in kw.items():
        if int(v) != v or v < 1:
            raise ArgumentError(f"{name} must be a positive integer, got {v}")


def svd_cost(n: int, d: int, k: int) -> BitCost:
    _positive(n=n, d=d, k=k)
    return BitCost(VALUE_BITS * k * (n + d), 0)


def sparse_cost(num_entries: int, rows: int, cols: int) -> BitCost:
    _positive(rows=rows, cols=cols)
    if num_entries < 0 or num_entries > rows * cols:
        raise ArgumentError(f"{num_entries} entries do not fit in a {rows}x{cols} matrix")
    return BitCost(VALUE_BITS * num_entries, ceil_log2(rows * cols) * num_entries)


def sparsity_levels(n: int, d: int, r: int, c: int) -> tuple[int, int]:
    """Retained-entry counts for ``U'`` and ``V'`` that match rank-``r`` storage.

    Each factor gets the largest count whose sparse cost does not exceed the
    dense rank-``r`` cost of the corresponding factor, clamped to the number
    of slots in the rank-``r+c`` factor.
    """
    _positive(n=n, d=d, r=r)
    if c < 0:
        raise ArgumentError(f"c must be nonnegative, got {c}")
    k = r + c
    s_u = (VALUE_BITS * r * n) // (VALUE_BITS + ceil_log2(n * k))
    s_v = (VALUE_BITS * r * d) // (VALUE_BITS + ceil_log2(d * k))
    return min(s_u, n * k), min(s_v, d * k)


def sparse_only_level(n: int, d: int, r: int) -> int:
    """Entries of a plain sparse ``n x d`` matrix that fit in the rank-``r`` budget."""
    _positive(n=n, d=d, r=r)
    s = svd_cost(n, d, r).total_bits // (VALUE_BITS + ceil_log2(n * d))
    return min(s, n * d)


@dataclass(frozen=True)
class BudgetSpec:
    n: int
    d: int
    r: int
    c: int

    def __post_init__(self):
        _positive(n=self.n, d=self.d, r=self.r)
        if self.c < 0:
            raise ArgumentError(f"c must be nonnegative, got {self.c}")

    @property
    def k(self) -> int:
        return self.r + self.c

    @property
    def levels(self) -> tuple[int, int]:
        return sparsity_levels(self.n, self.d, self.r, self.c)

    @property
    def s_u(self) -> int:
        return self.levels[0]

    @property
    def s_v(self) -> int:
        return self.levels[1]

    @property
    def bits_svd(self) -> int:
        return svd_cost(self.n, self.d, self.r).total_bits

    @property
    def idx_bits_u(self) -> int:
        return ceil_log2(self.n * self.k)

    @property
    def idx_bits_v(self) -> int:
        return ceil_log2(self.d * self.k)

    @property
    def entry_cost_u(self) -> int:
        return VALUE_BITS + self.idx_bits_u

    @property
    def entry_cost_v(self) -> int:
        return VALUE_BITS + self.idx_bits_v


def pair_cost(pair) -> BitCost:
    """Payload bits of a sparse factor pair (values plus fixed-width indices)."""
    nu, nv = len(pair.idx_u), len(pair.idx_v)
    return BitCost(VALUE_BITS * (nu + nv), pair.idx_bits_u * nu + pair.idx_bits_v * nv)


def assert_within_budget(pair, spec: BudgetSpec) -> bool:
    """True iff the pair's payload fits in the rank-``r`` TruncSVD budget."""
    used = spec.entry_cost_u * len(pair.idx_u) + spec.entry_cost_v * len(pair.idx_v)
    return used <= spec.bits_svd
