"""Chunked compression with a deterministic reference LZ77 codec.

Input is split into fixed-size chunks and each chunk is compressed on its own,
so any chunk can be decoded without the others. A chunk that does not shrink
is stored raw.

Reference codec token layout (one sequence)::

    token    bit 7      repeat the previous match offset (starts at 1)
             bits 6-5   literal count 0..2, 3 = 3 + varint follows
             bits 4-0   match length - 4 for 0..30, 31 = 35 + one extra byte
    [varint  literal count - 3]
    literals
    [varint  offset]             only when bit 7 is clear
    [u8      match length - 35]  only when the match code is 31

The decoder stops as soon as the chunk's original length is reached, so the
final literal-only sequence needs no terminator.
"""

import struct
import time
from dataclasses import dataclass
from statistics import median

import numpy as np
from numba import njit

from .errors import CodecError
from .sizes import check_chunk_class

RAW_CODEC = 0
LZ_CODEC = 1

CHUNK_HEADER = struct.Struct("<BII")  # flag/codec id, compressed length, original length
HEADER_SIZE = CHUNK_HEADER.size

MIN_MATCH = 4
MAX_MATCH = 271
MAX_CHAIN = 256
_HASH_BITS = 16


@njit(cache=True, nogil=True)
def _put_varint(out, op, v):
    while v >= 0x80:
        out[op] = (v & 0x7F) | 0x80
        v >>= 7
        op += 1
    out[op] = v
    return op + 1


@njit(cache=True, nogil=True)
def _hash4(src, i):
    v = (
        np.uint32(src[i])
        | (np.uint32(src[i + 1]) << 8)
        | (np.uint32(src[i + 2]) << 16)
        | (np.uint32(src[i + 3]) << 24)
    )
    return ((np.uint64(v) * np.uint64(2654435761)) & np.uint64(0xFFFFFFFF)) >> np.uint64(32 - _HASH_BITS)


@njit(cache=True, nogil=True)
def _encode_chunk(src, start, end, out, op0, limit, head, prev):
    """Encode src[start:end] at out[op0:]; returns end offset, or -1 once limit is hit.

    head/prev hold absolute positions; anything below ``start`` belongs to an
    earlier chunk and terminates the chain walk.
    """
    op = op0
    n = end - start
    lit_start = start
    rep = 1
    i = start
    while i + MIN_MATCH <= end:
        best_len = 0
        best_off = 0
        # repeat offset first: ties go to the cheaper encoding
        if i - rep >= start:
            j = i - rep
            m = 0
            lim = min(MAX_MATCH, end - i)
            while m < lim and src[j + m] == src[i + m]:
                m += 1
            if m >= MIN_MATCH:
                best_len = m
                best_off = rep
        h = _hash4(src, i)
        if best_len < MAX_MATCH:
            cand = head[h]
            chain = 0
            lim = min(MAX_MATCH, end - i)
            while cand >= start and chain < MAX_CHAIN:
                m = 0
                while m < lim and src[cand + m] == src[i + m]:
                    m += 1
                if m > best_len:
                    best_len = m
                    best_off = i - cand
                    if m == lim:
                        break
                cand = prev[cand]
                chain += 1
        if best_len < MIN_MATCH:
            prev[i] = head[h]
            head[h] = i
            i += 1
            continue
        # emit literals + match
        nlit = i - lit_start
        is_rep = best_off == rep
        tok = 0x80 if is_rep else 0
        tok |= (nlit if nlit < 3 else 3) << 5
        mcode = best_len - MIN_MATCH
        tok |= mcode if mcode < 31 else 31
        if op - op0 + nlit + 1 >= limit:
            return -1
        out[op] = tok
        op += 1
        if nlit >= 3:
            op = _put_varint(out, op, nlit - 3)
        for k in range(nlit):
            out[op + k] = src[lit_start + k]
        op += nlit
        if not is_rep:
            op = _put_varint(out, op, best_off)
        if mcode >= 31:
            out[op] = best_len - 35
            op += 1
        rep = best_off
        stop = i + best_len
        while i < stop:
            if i + MIN_MATCH <= end:
                h = _hash4(src, i)
                prev[i] = head[h]
                head[h] = i
            i += 1
        lit_start = i
    nlit = end - lit_start
    if nlit > 0:
        if op - op0 + nlit + 1 >= limit:
            return -1
        out[op] = (nlit if nlit < 3 else 3) << 5
        op += 1
        if nlit >= 3:
            op = _put_varint(out, op, nlit - 3)
        for k in range(nlit):
            out[op + k] = src[lit_start + k]
        op += nlit
    if op - op0 >= n:
        return -1
    return op


@njit(cache=True, nogil=True)
def _compress_all(src, chunk):
    """Compress every chunk of src into one wire buffer plus a per-chunk index.

    index rows: (data offset in out, data length, original start, original length, codec id)
    """
    n = src.shape[0]
    nchunks = (n + chunk - 1) // chunk
    out = np.empty(n + nchunks * 9 + 32, dtype=np.uint8)
    index = np.empty((nchunks, 5), dtype=np.int64)
    head = np.full(1 << _HASH_BITS, -1, dtype=np.int64)
    prev = np.empty(max(n, 1), dtype=np.int64)
    op = 0
    for c in range(nchunks):
        start = c * chunk
        end = min(n, start + chunk)
        olen = end - start
        data_at = op + 9
        res = _encode_chunk(src, start, end, out, data_at, olen, head, prev)
        if res < 0:
            flag = 0
            for k in range(olen):
                out[data_at + k] = src[start + k]
            dlen = olen
        else:
            flag = 1
            dlen = res - data_at
        out[op] = flag
        for k in range(4):
            out[op + 1 + k] = (dlen >> (8 * k)) & 0xFF
            out[op + 5 + k] = (olen >> (8 * k)) & 0xFF
        index[c, 0] = data_at
        index[c, 1] = dlen
        index[c, 2] = start
        index[c, 3] = olen
        index[c, 4] = flag
        op = data_at + dlen
    return out[:op], index


@njit(cache=True, nogil=True)
def _decode_chunk(data, ip, iend, out, op, olen):
    """Decode one LZ chunk; returns 0 on success, negative on malformed input."""
    oend = op + olen
    ostart = op
    rep = 1
    while op < oend:
        if ip >= iend:
            return -1
        tok = data[ip]
        ip += 1
        nlit = (tok >> 5) & 3
        if nlit == 3:
            shift = 0
            v = 0
            while True:
                if ip >= iend or shift > 28:
                    return -2
                b = data[ip]
                ip += 1
                v |= (b & 0x7F) << shift
                shift += 7
                if b < 0x80:
                    break
            nlit = 3 + v
        if nlit > oend - op or nlit > iend - ip:
            return -3
        for k in range(nlit):
            out[op + k] = data[ip + k]
        op += nlit
        ip += nlit
        if op == oend:
            break
        if tok & 0x80:
            off = rep
        else:
            shift = 0
            off = 0
            while True:
                if ip >= iend or shift > 28:
                    return -4
                b = data[ip]
                ip += 1
                off |= (b & 0x7F) << shift
                shift += 7
                if b < 0x80:
                    break
        mlen = (tok & 0x1F) + MIN_MATCH
        if (tok & 0x1F) == 31:
            if ip >= iend:
                return -5
            mlen = 35 + data[ip]
            ip += 1
        if off < 1 or off > op - ostart or mlen > oend - op:
            return -6
        for k in range(mlen):
            out[op + k] = out[op - off + k]
        op += mlen
        rep = off
    if ip != iend:
        return -7
    return 0


@njit(cache=True, nogil=True)
def _decompress_all(data, index, total):
    """Decode chunks described by index rows (data offset, data len, out offset, orig len, codec).

    Returns (output, failing row or -1).
    """
    out = np.empty(total, dtype=np.uint8)
    for c in range(index.shape[0]):
        ip = index[c, 0]
        dlen = index[c, 1]
        op = index[c, 2]
        olen = index[c, 3]
        codec = index[c, 4]
        if codec == 0:
            if dlen != olen:
                return out, c
            for k in range(olen):
                out[op + k] = data[ip + k]
        elif codec == 1:
            if _decode_chunk(data, ip, ip + dlen, out, op, olen) != 0:
                return out, c
        else:
            return out, c
    return out, -1


@dataclass(frozen=True, slots=True)
class CompressedChunk:
    start: int
    length: int
    data: bytes
    codec_id: int = LZ_CODEC

    @property
    def stored_raw(self):
        return self.codec_id == RAW_CODEC

    @property
    def wire_size(self):
        return HEADER_SIZE + len(self.data)

    def to_wire(self):
        return CHUNK_HEADER.pack(self.codec_id, len(self.data), self.length) + self.data


class Codec:
    """Interface for codecs that plug in behind :func:`compress`.

    Subclasses encode one chunk at a time. ``encode`` returns ``None`` when the
    chunk does not shrink; the caller then stores it raw.
    """

    codec_id = None
    name = None

    def encode(self, chunk):
        raise NotImplementedError

    def decode(self, data, original_length):
        raise NotImplementedError

    def compress_many(self, data, chunk_size):
        chunks = []
        for start in range(0, len(data), chunk_size):
            piece = bytes(data[start:start + chunk_size])
            enc = self.encode(piece)
            if enc is None or len(enc) >= len(piece):
                chunks.append(CompressedChunk(start, len(piece), piece, RAW_CODEC))
            else:
                chunks.append(CompressedChunk(start, len(piece), bytes(enc), self.codec_id))
        return chunks


class ReferenceLZ(Codec):
    codec_id = LZ_CODEC
    name = "reference-lz"
    version = 1

    def encode(self, chunk):
        src = np.frombuffer(chunk, dtype=np.uint8)
        wire, index = _compress_all(src, len(src))
        if index[0, 4] == RAW_CODEC:
            return None
        return wire[index[0, 0]:index[0, 0] + index[0, 1]].tobytes()

    def decode(self, data, original_length):
        arr = np.frombuffer(data, dtype=np.uint8)
        index = np.array([[0, len(arr), 0, original_length, LZ_CODEC]], dtype=np.int64)
        out, bad = _decompress_all(arr, index, original_length)
        if bad >= 0:
            raise CodecError(0)
        return out.tobytes()

    def compress_many(self, data, chunk_size):
        src = np.frombuffer(data, dtype=np.uint8)
        wire, index = _compress_all(src, chunk_size)
        wire_b = wire.tobytes()
        return [
            CompressedChunk(int(s), int(ol), wire_b[int(a):int(a) + int(dl)], int(f))
            for a, dl, s, ol, f in index
        ]


_REGISTRY = {LZ_CODEC: ReferenceLZ()}


def register_codec(codec):
    if codec.codec_id is None or codec.codec_id == RAW_CODEC:
        raise ValueError("codec id 0 is reserved for stored-raw chunks")
    _REGISTRY[codec.codec_id] = codec
    return codec


def get_codec(codec_id=LZ_CODEC):
    try:
        return _REGISTRY[codec_id]
    except KeyError:
        raise CodecError(-1, f"unknown codec id {codec_id}") from None


def compress(data, chunk_size, codec_id=LZ_CODEC):
    """Split ``data`` into ``chunk_size`` pieces and compress each one independently."""
    if len(data) == 0:
        raise ValueError("compress() needs a non-empty input")
    check_chunk_class(chunk_size)
    return get_codec(codec_id).compress_many(data, chunk_size)


def decompress(chunks):
    """Decode chunks back to bytes.

    Any subset of chunks may be passed; output is the concatenation of their
    original spans in the order given.
    """
    chunks = list(chunks)
    if not chunks:
        return b""
    if all(c.codec_id in (RAW_CODEC, LZ_CODEC) for c in chunks):
        return _decompress_fast(chunks)
    parts = []
    for i, c in enumerate(chunks):
        if c.codec_id == RAW_CODEC:
            if len(c.data) != c.length:
                raise CodecError(i, "raw chunk length mismatch")
            parts.append(c.data)
            continue
        try:
            out = get_codec(c.codec_id).decode(c.data, c.length)
        except CodecError:
            raise CodecError(i) from None
        except Exception as exc:
            raise CodecError(i, str(exc)) from exc
        if len(out) != c.length:
            raise CodecError(i, "decoded length mismatch")
        parts.append(out)
    return b"".join(parts)


def _decompress_fast(chunks):
    data = b"".join(c.data for c in chunks)
    index = np.empty((len(chunks), 5), dtype=np.int64)
    ip = op = 0
    for i, c in enumerate(chunks):
        index[i] = (ip, len(c.data), op, c.length, c.codec_id)
        ip += len(c.data)
        op += c.length
    out, bad = _decompress_all(np.frombuffer(data, dtype=np.uint8), index, op)
    if bad >= 0:
        raise CodecError(int(bad))
    return out.tobytes()


def wire_size(chunks):
    """Stored size of a chunk sequence, headers included."""
    return sum(HEADER_SIZE + len(c.data) for c in chunks)


def chunks_to_wire(chunks):
    return b"".join(c.to_wire() for c in chunks)


def chunks_from_wire(buf):
    chunks = []
    pos = 0
    start = 0
    i = 0
    while pos < len(buf):
        if pos + HEADER_SIZE > len(buf):
            raise CodecError(i, "truncated header")
        codec_id, dlen, olen = CHUNK_HEADER.unpack_from(buf, pos)
        pos += HEADER_SIZE
        if pos + dlen > len(buf):
            raise CodecError(i, "truncated payload")
        chunks.append(CompressedChunk(start, olen, bytes(buf[pos:pos + dlen]), codec_id))
        pos += dlen
        start += olen
        i += 1
    return chunks


@dataclass(frozen=True)
class CodecSample:
    chunk: int
    compress_ns: int
    decompress_ns: int
    ratio: float
    original_bytes: int
    compressed_bytes: int


def measure_codec(corpus, chunk_size, repetitions=1, codec_id=LZ_CODEC):
    """Time compress/decompress of ``corpus`` at one chunk size.

    Only the codec call is timed; returned times are medians over ``repetitions``.
    ``ratio`` counts chunk headers in the compressed size.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    check_chunk_class(chunk_size)
    corpus = bytes(corpus)
    codec = get_codec(codec_id)
    c_times, d_times = [], []
    chunks = None
    if isinstance(codec, ReferenceLZ):
        src = np.frombuffer(corpus, dtype=np.uint8)
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            wire, index = _compress_all(src, chunk_size)
            c_times.append(time.perf_counter_ns() - t0)
            t0 = time.perf_counter_ns()
            out, bad = _decompress_all(wire, index, len(corpus))
            d_times.append(time.perf_counter_ns() - t0)
            if bad >= 0 or out.tobytes() != corpus:
                raise CodecError(int(bad), "round trip mismatch during measurement")
        size = int(index[:, 1].sum()) + HEADER_SIZE * len(index)
    else:
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            chunks = codec.compress_many(corpus, chunk_size)
            c_times.append(time.perf_counter_ns() - t0)
            t0 = time.perf_counter_ns()
            out = decompress(chunks)
            d_times.append(time.perf_counter_ns() - t0)
            if out != corpus:
                raise CodecError(-1, "round trip mismatch during measurement")
        size = wire_size(chunks)
    return CodecSample(
        chunk=chunk_size,
        compress_ns=int(median(c_times)),
        decompress_ns=int(median(d_times)),
        ratio=len(corpus) / size,
        original_bytes=len(corpus),
        compressed_bytes=size,
    )
