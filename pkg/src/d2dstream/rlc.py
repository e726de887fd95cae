"""Random linear coding over GF(256).

Field arithmetic uses the AES reduction polynomial ``x^8+x^4+x^3+x+1``
with log/exp tables and a full 256x256 multiplication table, so that
vectors of field elements are handled by numpy indexing.

Wire format of a coded chunk::

    block_id : 4 bytes, big-endian
    coeffs   : N bytes
    payload  : remaining bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .model import _rng

POLY = 0x11B
GENERATOR = 0x03
DEFAULT_CHUNK_BYTES = 1500


def _tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        # multiply by the generator 0x03 = x + 1
        x2 = x << 1
        if x2 & 0x100:
            x2 ^= POLY
        x = x2 ^ x
    exp[255:510] = exp[:255]
    a = np.arange(256)
    mul = exp[(log[:, None] + log[None, :]) % 255].astype(np.uint8)
    mul[0, :] = 0
    mul[:, 0] = 0
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[a[1:]]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _tables()


class FieldElement:
    """An element of GF(256); ``+`` is XOR and ``*`` the field product."""

    __slots__ = ("value",)

    def __init__(self, value: int):
        if not 0 <= int(value) <= 255:
            raise ValueError("GF(256) elements are 0..255")
        self.value = int(value)

    def __add__(self, other):
        return FieldElement(self.value ^ _v(other))

    __sub__ = __add__
    __radd__ = __add__

    def __mul__(self, other):
        return FieldElement(int(MUL[self.value, _v(other)]))

    __rmul__ = __mul__

    def inverse(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError("0 has no inverse in GF(256)")
        return FieldElement(int(INV[self.value]))

    def __truediv__(self, other):
        return self * FieldElement(_v(other)).inverse()

    def __pow__(self, n: int):
        if self.value == 0:
            return FieldElement(0 if n else 1)
        return FieldElement(int(EXP[(LOG[self.value] * n) % 255]))

    def __eq__(self, other):
        return isinstance(other, (FieldElement, int)) and self.value == _v(other)

    def __hash__(self):
        return hash(self.value)

    def __repr__(self):
        return f"FieldElement({self.value:#04x})"


def _v(x) -> int:
    return x.value if isinstance(x, FieldElement) else int(x)


def gf_scale(c: int, v: np.ndarray) -> np.ndarray:
    return MUL[c][v]


def gf_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product over GF(256) for uint8 arrays ``(n, k) @ (k, m)``."""
    A = np.asarray(A, dtype=np.uint8)
    B = np.asarray(B, dtype=np.uint8)
    out = np.zeros((A.shape[0], B.shape[1]), dtype=np.uint8)
    for j in range(A.shape[1]):
        out ^= MUL[A[:, j][:, None], B[j][None, :]]
    return out


@dataclass(frozen=True, eq=False)
class CodedChunk:
    block_id: int
    coefficients: np.ndarray
    payload: np.ndarray

    @property
    def N(self) -> int:
        return len(self.coefficients)

    def to_bytes(self) -> bytes:
        return (struct.pack(">I", self.block_id) + self.coefficients.astype(np.uint8).tobytes()
                + self.payload.astype(np.uint8).tobytes())

    @classmethod
    def from_bytes(cls, data: bytes, N: int) -> "CodedChunk":
        if len(data) < 4 + N:
            raise ValueError("chunk shorter than its header")
        (bid,) = struct.unpack(">I", data[:4])
        coeffs = np.frombuffer(data[4:4 + N], dtype=np.uint8).copy()
        payload = np.frombuffer(data[4 + N:], dtype=np.uint8).copy()
        return cls(bid, coeffs, payload)


def split_block(data: bytes, N: int, chunk_bytes: int | None = None) -> np.ndarray:
    """Split ``data`` into ``N`` equal chunks, zero-padding the tail."""
    size = chunk_bytes or -(-len(data) // N)
    buf = np.zeros(N * size, dtype=np.uint8)
    raw = np.frombuffer(data, dtype=np.uint8)
    if len(raw) > len(buf):
        raise ValueError("block larger than N chunks")
    buf[: len(raw)] = raw
    return buf.reshape(N, size)


def encode_chunk(block, coefficients=None, rng=None, block_id: int = 0) -> CodedChunk:
    """One coded chunk ``sum_j coeff_j * chunk_j`` of the source chunks in ``block``."""
    if isinstance(block, np.ndarray) and block.ndim == 2:
        src = block.astype(np.uint8, copy=False)
    else:
        rows = [np.frombuffer(bytes(c), dtype=np.uint8) if not isinstance(c, np.ndarray) else c
                for c in block]
        if len({len(r) for r in rows}) > 1:
            raise ValueError("source chunks must have equal length")
        src = np.stack(rows).astype(np.uint8)
    N = src.shape[0]
    if coefficients is None:
        coefficients = _rng(rng).integers(0, 256, size=N, dtype=np.uint8)
    coefficients = np.asarray(coefficients, dtype=np.uint8)
    if len(coefficients) != N:
        raise ValueError("need one coefficient per source chunk")
    payload = gf_matmul(coefficients[None, :], src)[0]
    return CodedChunk(block_id, coefficients, payload)


class BlockMismatch(ValueError):
    pass


@dataclass
class DecoderState:
    """Reduced row-echelon rows with attached payloads for one block."""

    N: int
    block_id: int = 0
    coeffs: list = field(default_factory=list)
    payloads: list = field(default_factory=list)
    pivots: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def ready(self) -> bool:
        return self.rank == self.N

    def absorb(self, chunk: CodedChunk) -> bool:
        """Insert ``chunk``; returns True iff the rank grew."""
        if chunk.block_id != self.block_id:
            raise BlockMismatch(f"chunk for block {chunk.block_id}, decoder on {self.block_id}")
        if chunk.N != self.N:
            raise BlockMismatch(f"chunk has {chunk.N} coefficients, expected {self.N}")
        if self.payloads and len(chunk.payload) != len(self.payloads[0]):
            raise BlockMismatch("payload length differs within the block")
        c = chunk.coefficients.astype(np.uint8).copy()
        p = chunk.payload.astype(np.uint8).copy()
        for row, pay, col in zip(self.coeffs, self.payloads, self.pivots):
            f = c[col]
            if f:
                c ^= MUL[f][row]
                p ^= MUL[f][pay]
        nz = np.flatnonzero(c)
        if len(nz) == 0:
            return False
        col = int(nz[0])
        inv = INV[c[col]]
        c = MUL[inv][c]
        p = MUL[inv][p]
        for i, (row, pay) in enumerate(zip(self.coeffs, self.payloads)):
            f = row[col]
            if f:
                self.coeffs[i] = row ^ MUL[f][c]
                self.payloads[i] = pay ^ MUL[f][p]
        self.coeffs.append(c)
        self.payloads.append(p)
        self.pivots.append(col)
        return True


def absorb(state: DecoderState, chunk: CodedChunk) -> DecoderState:
    state.absorb(chunk)
    return state


def decode_block(state: DecoderState):
    """Source chunks as an ``(N, size)`` array, or None while rank < N."""
    if not state.ready:
        return None
    out = np.empty((state.N, len(state.payloads[0])), dtype=np.uint8)
    for pay, col in zip(state.payloads, state.pivots):
        out[col] = pay
    return out


def batch_rank(mats: np.ndarray) -> np.ndarray:
    """Ranks over GF(256) of a stack of matrices ``(B, rows, cols)``."""
    A = np.array(mats, dtype=np.uint8, copy=True)
    Bn, n, m = A.shape
    rank = np.zeros(Bn, dtype=np.int64)
    rows = np.arange(n)
    for c in range(m):
        col = A[:, :, c]
        ok = (col != 0) & (rows[None, :] >= rank[:, None])
        has = ok.any(axis=1)
        b = np.flatnonzero(has)
        if len(b) == 0:
            continue
        piv = np.argmax(ok[b], axis=1)
        r = rank[b]
        top = A[b, r].copy()
        A[b, r] = A[b, piv]
        A[b, piv] = top
        lead = A[b, r, c]
        A[b, r] = MUL[INV[lead][:, None], A[b, r]]
        f = A[b, :, c].copy()
        f[np.arange(len(b)), r] = 0
        A[b] ^= MUL[f[:, :, None], A[b, r][:, None, :]]
        rank[b] += 1
    return rank


def full_rank_probability(N: int, q: int = 256) -> float:
    """``prod_{k=1..N} (1 - q^-k)``: N uniform random vectors are independent."""
    return float(np.prod([1.0 - float(q) ** (-k) for k in range(1, N + 1)]))


def full_rank_trials(N: int, trials: int, rng, batch: int = 20_000) -> int:
    """How many of ``trials`` random ``N x N`` coefficient matrices have full rank."""
    gen = _rng(rng)
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        mats = gen.integers(0, 256, size=(b, N, N), dtype=np.uint8)
        hits += int((batch_rank(mats) == N).sum())
        done += b
    return hits


def round_trip(data: bytes, N: int, rng, extra: int = 0) -> bytes | None:
    """Encode into ``N + extra`` random chunks, push them through the wire
    format and decode; returns the reconstructed bytes or None."""
    gen = _rng(rng)
    src = split_block(data, N)
    dec = DecoderState(N)
    for _ in range(N + extra):
        ch = encode_chunk(src, rng=gen)
        dec.absorb(CodedChunk.from_bytes(ch.to_bytes(), N))
        if dec.ready:
            break
    out = decode_block(dec)
    if out is None:
        return None
    return out.tobytes()[: len(data)]
