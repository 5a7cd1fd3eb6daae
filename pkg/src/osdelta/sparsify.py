"""Top-s magnitude sparsification and the bit-packed record codecs.

Three record kinds share the convention of fixed-width flat indices packed
MSB-first into a byte-padded bitstream, followed by little-endian f32 values:

``OSD1``  sparse factor pair (MagTruncSVD / OSD output)::

    b"OSD1" | u32 n, d, k, r, c | u64 s_u, s_v | u8 idx_bits_u, idx_bits_v
    | U index bits | U values | V index bits | V values

``SPM1``  single sparse matrix (sparse-only baseline)::

    b"SPM1" | u32 rows, cols | u64 s | u8 idx_bits | index bits | values

``TSV1``  dense rank-k factors (TruncSVD)::

    b"TSV1" | u32 n, d, k | n*k f32 (U') | k*d f32 (V')
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .budget import BitCost, VALUE_BITS, ceil_log2, svd_cost
from .errors import ArgumentError, FormatError, IntegrityError
from .linalg import FactorPair

OSD_MAGIC = b"OSD1"
SPM_MAGIC = b"SPM1"
TSV_MAGIC = b"TSV1"

_OSD_HEAD = struct.Struct("<4s5I2Q2B")
_SPM_HEAD = struct.Struct("<4s2IQB")
_TSV_HEAD = struct.Struct("<4s3I")
_F32 = np.dtype("<f4")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_entries(idx: np.ndarray, val: np.ndarray, size: int, what: str,
                   exc=ArgumentError) -> None:
    if idx.shape != val.shape or idx.ndim != 1:
        raise exc(f"{what}: index and value arrays disagree in shape")
    if idx.size:
        if idx[0] < 0 or idx[-1] >= size:
            raise IntegrityError(f"{what}: flat index outside [0, {size})")
        if np.any(np.diff(idx) <= 0):
            raise exc(f"{what}: flat indices are not strictly increasing")
        if np.any(val == 0) or not np.all(np.isfinite(val)):
            raise exc(f"{what}: stored values must be nonzero and finite")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    rows: int
    cols: int
    idx: np.ndarray  # int64 flat row-major indices, strictly increasing
    val: np.ndarray  # float32

    def __post_init__(self):
        object.__setattr__(self, "idx", _frozen(np.asarray(self.idx, dtype=np.int64).copy()))
        object.__setattr__(self, "val", _frozen(np.asarray(self.val, dtype=np.float32).copy()))
        _check_entries(self.idx, self.val, self.rows * self.cols, "sparse matrix")

    @property
    def idx_bits(self) -> int:
        return ceil_log2(self.rows * self.cols)

    @property
    def nnz(self) -> int:
        return int(self.idx.size)

    def cost(self) -> BitCost:
        return BitCost(VALUE_BITS * self.nnz, self.idx_bits * self.nnz)

    def __eq__(self, other):
        return (isinstance(other, SparseMatrix) and (self.rows, self.cols) == (other.rows, other.cols)
                and np.array_equal(self.idx, other.idx)
                and self.val.tobytes() == other.val.tobytes())


@dataclass(frozen=True, eq=False)
class SparseFactorPair:
    """Sparsified ``U'`` (n x k) and ``V'`` (k x d) with canonical flat indices."""

    n: int
    d: int
    k: int
    r: int
    c: int
    idx_u: np.ndarray
    val_u: np.ndarray
    idx_v: np.ndarray
    val_v: np.ndarray

    def __post_init__(self):
        for name, dt in (("idx_u", np.int64), ("val_u", np.float32),
                         ("idx_v", np.int64), ("val_v", np.float32)):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=dt).copy()))
        _check_entries(self.idx_u, self.val_u, self.n * self.k, "U'")
        _check_entries(self.idx_v, self.val_v, self.k * self.d, "V'")

    @classmethod
    def empty(cls, n, d, k, r, c) -> "SparseFactorPair":
        z = np.zeros(0)
        return cls(n, d, k, r, c, z, z, z, z)

    @property
    def shape_u(self) -> tuple[int, int]:
        return self.n, self.k

    @property
    def shape_v(self) -> tuple[int, int]:
        return self.k, self.d

    @property
    def idx_bits_u(self) -> int:
        return ceil_log2(self.n * self.k)

    @property
    def idx_bits_v(self) -> int:
        return ceil_log2(self.k * self.d)

    @property
    def u_matrix(self) -> SparseMatrix:
        return SparseMatrix(self.n, self.k, self.idx_u, self.val_u)

    @property
    def v_matrix(self) -> SparseMatrix:
        return SparseMatrix(self.k, self.d, self.idx_v, self.val_v)

    def cost(self) -> BitCost:
        return self.u_matrix.cost() + self.v_matrix.cost()

    def __eq__(self, other):
        if not isinstance(other, SparseFactorPair):
            return NotImplemented
        return ((self.n, self.d, self.k, self.r, self.c) == (other.n, other.d, other.k, other.r, other.c)
                and self.u_matrix == other.u_matrix and self.v_matrix == other.v_matrix)


def top_s(m, s: int) -> SparseMatrix:
    """Keep the ``s`` largest-magnitude entries; ties go to the lower flat index.

    Zero entries are never kept, so fewer than ``s`` entries come back when
    ``m`` has fewer nonzeros.
    """
    m = np.asarray(m, dtype=np.float32)
    rows, cols = m.shape
    if s < 0 or s > rows * cols:
        raise ArgumentError(f"s={s} outside [0, {rows * cols}]")
    flat = m.ravel()
    nz = np.flatnonzero(flat)
    if s < nz.size:
        mag = np.abs(flat[nz])
        # stable sort on -|v| keeps ascending index order among ties
        order = np.argsort(-mag, kind="stable")[:s]
        nz = np.sort(nz[order])
    return SparseMatrix(rows, cols, nz, flat[nz])


def _densify_matrix(sm: SparseMatrix) -> np.ndarray:
    size = sm.rows * sm.cols
    if sm.idx.size and (sm.idx.min() < 0 or sm.idx.max() >= size):
        raise IntegrityError(f"flat index outside [0, {size})")
    out = np.zeros(size, dtype=np.float32)
    out[sm.idx] = sm.val
    return out.reshape(sm.rows, sm.cols)


def densify(obj):
    """Dense form of a SparseMatrix, or the dense ``(U', V')`` of a pair."""
    if isinstance(obj, SparseMatrix):
        return _densify_matrix(obj)
    if isinstance(obj, SparseFactorPair):
        return _densify_matrix(obj.u_matrix), _densify_matrix(obj.v_matrix)
    raise ArgumentError(f"cannot densify {type(obj).__name__}")


def to_factor_pair(pair: SparseFactorPair) -> FactorPair:
    u, v = densify(pair)
    return FactorPair(_frozen(u), _frozen(v), _frozen(np.linalg.norm(u.astype(np.float64), axis=0)))


def reconstruct_record(obj) -> np.ndarray:
    """n x d float32 estimate of the layer update stored in any record kind."""
    if isinstance(obj, SparseMatrix):
        return _densify_matrix(obj)
    if isinstance(obj, SparseFactorPair):
        u, v = densify(obj)
    elif isinstance(obj, FactorPair):
        u, v = obj.u_prime, obj.v_prime
    else:
        raise ArgumentError(f"unknown record type {type(obj).__name__}")
    return (u.astype(np.float64) @ v.astype(np.float64)).astype(np.float32)


def record_cost(obj) -> BitCost:
    """Budgeted payload bits (headers and padding excluded)."""
    if isinstance(obj, FactorPair):
        n, d = obj.shape
        return svd_cost(n, d, obj.rank)
    return obj.cost()


# ---------------------------------------------------------------------------
# bitstreams
# ---------------------------------------------------------------------------

def pack_indices(idx: np.ndarray, width: int) -> bytes:
    """Fixed-width big-endian bit packing, zero-padded to a byte boundary."""
    idx = np.asarray(idx, dtype=np.int64)
    if width == 0 or idx.size == 0:
        if width == 0 and idx.size and np.any(idx):
            raise ArgumentError("nonzero index cannot be stored in 0 bits")
        return b""
    if idx.min() < 0 or idx.max() >> width:
        raise ArgumentError(f"index does not fit in {width} bits")
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def unpack_indices(buf: bytes, count: int, width: int) -> np.ndarray:
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    nbits = count * width
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=nbits)
    weights = np.left_shift(np.int64(1), np.arange(width - 1, -1, -1, dtype=np.int64))
    return bits.reshape(count, width).astype(np.int64) @ weights


def stream_bytes(count: int, width: int) -> int:
    return (count * width + 7) // 8


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError(f"truncated record: {what} needs {n} bytes, "
                                 f"{len(self.buf) - self.pos} remain")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise IntegrityError(f"{len(self.buf) - self.pos} trailing bytes after record")


def _read_stream(rd: _Reader, count: int, width: int, size: int, what: str):
    idx = unpack_indices(rd.take(stream_bytes(count, width), f"{what} indices"), count, width)
    val = np.frombuffer(rd.take(4 * count, f"{what} values"), dtype=_F32).astype(np.float32)
    if idx.size and idx.max() >= size:
        raise IntegrityError(f"{what}: flat index {int(idx.max())} outside [0, {size})")
    _check_entries(idx, val, size, what, exc=FormatError)
    return idx, val


def encode(obj) -> bytes:
    """Serialize a SparseFactorPair, SparseMatrix, or dense FactorPair."""
    if isinstance(obj, SparseFactorPair):
        head = _OSD_HEAD.pack(OSD_MAGIC, obj.n, obj.d, obj.k, obj.r, obj.c,
                              obj.idx_u.size, obj.idx_v.size, obj.idx_bits_u, obj.idx_bits_v)
        return b"".join([head,
                         pack_indices(obj.idx_u, obj.idx_bits_u), obj.val_u.astype(_F32).tobytes(),
                         pack_indices(obj.idx_v, obj.idx_bits_v), obj.val_v.astype(_F32).tobytes()])
    if isinstance(obj, SparseMatrix):
        head = _SPM_HEAD.pack(SPM_MAGIC, obj.rows, obj.cols, obj.nnz, obj.idx_bits)
        return head + pack_indices(obj.idx, obj.idx_bits) + obj.val.astype(_F32).tobytes()
    if isinstance(obj, FactorPair):
        n, d = obj.shape
        head = _TSV_HEAD.pack(TSV_MAGIC, n, d, obj.rank)
        return (head + np.ascontiguousarray(obj.u_prime, dtype=_F32).tobytes()
                + np.ascontiguousarray(obj.v_prime, dtype=_F32).tobytes())
    raise ArgumentError(f"cannot encode {type(obj).__name__}")


def _decode_osd(buf: bytes) -> SparseFactorPair:
    if len(buf) < _OSD_HEAD.size:
        raise IntegrityError("truncated OSD1 header")
    _, n, d, k, r, c, s_u, s_v, bu, bv = _OSD_HEAD.unpack_from(buf)
    if min(n, d, k, r) < 1 or k != r + c:
        raise FormatError(f"inconsistent OSD1 header: n={n} d={d} k={k} r={r} c={c}")
    if bu != ceil_log2(n * k) or bv != ceil_log2(k * d):
        raise FormatError(f"index widths ({bu}, {bv}) do not match factor sizes")
    if s_u > n * k or s_v > k * d:
        raise FormatError(f"entry counts ({s_u}, {s_v}) exceed factor sizes")
    rd = _Reader(buf, _OSD_HEAD.size)
    iu, vu = _read_stream(rd, s_u, bu, n * k, "U'")
    iv, vv = _read_stream(rd, s_v, bv, k * d, "V'")
    rd.finish()
    return SparseFactorPair(n, d, k, r, c, iu, vu, iv, vv)


def _decode_spm(buf: bytes) -> SparseMatrix:
    if len(buf) < _SPM_HEAD.size:
        raise IntegrityError("truncated SPM1 header")
    _, rows, cols, s, b = _SPM_HEAD.unpack_from(buf)
    if min(rows, cols) < 1 or b != ceil_log2(rows * cols) or s > rows * cols:
        raise FormatError(f"inconsistent SPM1 header: {rows}x{cols}, s={s}, idx_bits={b}")
    rd = _Reader(buf, _SPM_HEAD.size)
    idx, val = _read_stream(rd, s, b, rows * cols, "matrix")
    rd.finish()
    return SparseMatrix(rows, cols, idx, val)


def _decode_tsv(buf: bytes) -> FactorPair:
    if len(buf) < _TSV_HEAD.size:
        raise IntegrityError("truncated TSV1 header")
    _, n, d, k = _TSV_HEAD.unpack_from(buf)
    if min(n, d, k) < 1:
        raise FormatError(f"inconsistent TSV1 header: n={n} d={d} k={k}")
    rd = _Reader(buf, _TSV_HEAD.size)
    u = np.frombuffer(rd.take(4 * n * k, "U'"), dtype=_F32).astype(np.float32).reshape(n, k)
    v = np.frombuffer(rd.take(4 * k * d, "V'"), dtype=_F32).astype(np.float32).reshape(k, d)
    rd.finish()
    sv = np.linalg.norm(u.astype(np.float64), axis=0)
    return FactorPair(_frozen(u), _frozen(v), _frozen(sv))


def decode(buf: bytes):
    magic = bytes(buf[:4])
    if magic == OSD_MAGIC:
        return _decode_osd(buf)
    if magic == SPM_MAGIC:
        return _decode_spm(buf)
    if magic == TSV_MAGIC:
        return _decode_tsv(buf)
    raise FormatError(f"unknown record magic {magic!r}")


def header_bits(obj) -> int:
    """Bits of an encoded record outside the budgeted payload (header + padding)."""
    return 8 * len(encode(obj)) - record_cost(obj).total_bits
