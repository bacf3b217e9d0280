"""Lossless block compression with two built-in codecs.

Container layout (see docs/codec.md for golden vectors):

    ┌──────────┬───────┬────────────┬──────┐
    │ codec_id │ flags │ raw_len    │ body │
    │ u8       │ u8=0  │ u32 LE     │ …    │
    └──────────┴───────┴────────────┴──────┘

codec_id 0 is the stored form (body == raw input verbatim); 1 is
`rle0`, a zero-run-length code; 2 is `lz`, a greedy LZ77 over a 4 KiB
window.  `flags` is reserved and must be zero.  `compress` applies a
stored fallback whenever the codec's body would be as large as the
input, so output never exceeds input by more than the 6-byte header.

rle0 token stream: a 0x00 byte followed by a count byte 1..255 expands
to that many zero bytes; any nonzero byte stands for itself.

lz token stream: a tag byte below 0x80 introduces a literal run of
(tag + 1) bytes, copied verbatim from the next (tag + 1) stream bytes;
a tag byte 0x80|code introduces a back-reference of length (code + 3)
(3..130) at a distance given by the following u16 LE (1..4096, counted
from the end of the output so far; distances shorter than the length
repeat the pattern).
"""

from __future__ import annotations

import re
import struct

HEADER_SIZE = 6
_HEADER = struct.Struct("<BBI")

CODEC_STORED = 0
CODEC_RLE0 = 1
CODEC_LZ = 2

CODEC_NAMES = {"stored": CODEC_STORED, "rle0": CODEC_RLE0, "lz": CODEC_LZ}

_LZ_WINDOW = 4096
_LZ_MIN_MATCH = 3
_LZ_MAX_MATCH = 130
_LZ_MAX_LITERAL_RUN = 128

_ZERO_RUNS = re.compile(rb"\x00+")


class CodecError(Exception):
    """Base class for compression-container errors."""


class UnsupportedCodec(CodecError):
    """codec_id names no known codec (or one not valid in this context)."""


class MalformedBlock(CodecError):
    """Block too short to contain the 6-byte header, or reserved
    flags set."""


class CorruptBlock(CodecError):
    """Header parsed but the body does not decode to raw_len bytes."""


def compress(data: bytes, codec_id: int) -> bytes:
    """Encode data as a compressed block.

    Args:
        data: Input bytes.
        codec_id: CODEC_RLE0 or CODEC_LZ.  The stored form cannot be
            requested directly; it is applied automatically whenever
            the codec fails to shrink the input.

    Returns:
        A serialized block: 6-byte header plus body.  Always at most
        len(data) + 6 bytes, and decompress() inverts it exactly.

    Raises:
        UnsupportedCodec: codec_id is not a compressing codec.
    """
    if codec_id == CODEC_RLE0:
        body = _rle0_encode(data)
    elif codec_id == CODEC_LZ:
        body = _lz_encode(data)
    else:
        raise UnsupportedCodec(f"cannot compress with codec_id {codec_id}")
    if len(body) >= len(data) and data:
        return _HEADER.pack(CODEC_STORED, 0, len(data)) + data
    return _HEADER.pack(codec_id, 0, len(data)) + body


def decompress(block: bytes) -> bytes:
    """Decode a compressed block back to the original bytes.

    Args:
        block: Untrusted serialized block.

    Returns:
        Exactly raw_len bytes.

    Raises:
        MalformedBlock: Shorter than the 6-byte header, or nonzero
            reserved flags.
        UnsupportedCodec: Unknown codec_id.
        CorruptBlock: Body fails to decode, decodes to a length other
            than raw_len, or (stored form) has length != raw_len.
    """
    if len(block) < HEADER_SIZE:
        raise MalformedBlock(f"{len(block)} bytes is shorter than the header")
    codec_id, flags, raw_len = _HEADER.unpack_from(block)
    if flags != 0:
        raise MalformedBlock(f"reserved flags byte is {flags:#04x}")
    body = block[HEADER_SIZE:]
    if codec_id == CODEC_STORED:
        if len(body) != raw_len:
            raise CorruptBlock(f"stored body is {len(body)} bytes, header says {raw_len}")
        return bytes(body)
    if codec_id == CODEC_RLE0:
        out = _rle0_decode(body, raw_len)
    elif codec_id == CODEC_LZ:
        out = _lz_decode(body, raw_len)
    else:
        raise UnsupportedCodec(f"unknown codec_id {codec_id}")
    if len(out) != raw_len:
        raise CorruptBlock(f"body decoded to {len(out)} bytes, header says {raw_len}")
    return out


# --- rle0 ------------------------------------------------------------------

def _rle0_encode(data: bytes) -> bytes:
    out = bytearray()
    pos = 0
    for match in _ZERO_RUNS.finditer(data):
        start, end = match.span()
        out += data[pos:start]
        run = end - start
        while run:
            step = min(run, 255)
            out.append(0)
            out.append(step)
            run -= step
        pos = end
    out += data[pos:]
    return bytes(out)


def _rle0_decode(body: bytes, raw_len: int) -> bytes:
    out = bytearray()
    i = 0
    n = len(body)
    while i < n:
        zero = body.find(0, i)
        if zero < 0:
            out += body[i:]
            break
        out += body[i:zero]
        if zero + 1 >= n:
            raise CorruptBlock("zero-run marker at end of body")
        run = body[zero + 1]
        if run == 0:
            raise CorruptBlock("zero-length zero run")
        out += bytes(run)
        i = zero + 2
        if len(out) > raw_len:
            raise CorruptBlock("body decodes past raw_len")
    return bytes(out)


# --- lz ---------------------------------------------------------------------

def _lz_encode(data: bytes) -> bytes:
    out = bytearray()
    literals = bytearray()
    # Last position each 3-byte sequence was seen at; one candidate is
    # enough for a greedy matcher and keeps the scan O(n).
    last_seen: dict[bytes, int] = {}
    i = 0
    n = len(data)
    while i < n:
        key = data[i : i + _LZ_MIN_MATCH]
        candidate = last_seen.get(key, -1) if len(key) == _LZ_MIN_MATCH else -1
        if candidate >= 0 and i - candidate <= _LZ_WINDOW:
            limit = min(n - i, _LZ_MAX_MATCH)
            length = _LZ_MIN_MATCH
            while length < limit and data[candidate + length] == data[i + length]:
                length += 1
            _flush_literals(out, literals)
            out.append(0x80 | (length - _LZ_MIN_MATCH))
            out += (i - candidate).to_bytes(2, "little")
            stop = min(i + length, n - _LZ_MIN_MATCH + 1)
            for j in range(i, stop):
                last_seen[data[j : j + _LZ_MIN_MATCH]] = j
            i += length
        else:
            if len(key) == _LZ_MIN_MATCH:
                last_seen[key] = i
            literals.append(data[i])
            i += 1
    _flush_literals(out, literals)
    return bytes(out)


def _flush_literals(out: bytearray, literals: bytearray) -> None:
    pos = 0
    while pos < len(literals):
        chunk = literals[pos : pos + _LZ_MAX_LITERAL_RUN]
        out.append(len(chunk) - 1)
        out += chunk
        pos += len(chunk)
    literals.clear()


def _lz_decode(body: bytes, raw_len: int) -> bytes:
    out = bytearray()
    i = 0
    n = len(body)
    while i < n:
        tag = body[i]
        i += 1
        if tag < 0x80:
            run = tag + 1
            if i + run > n:
                raise CorruptBlock("literal run extends past body")
            out += body[i : i + run]
            i += run
        else:
            length = (tag & 0x7F) + _LZ_MIN_MATCH
            if i + 2 > n:
                raise CorruptBlock("match token missing distance")
            distance = int.from_bytes(body[i : i + 2], "little")
            i += 2
            if not 1 <= distance <= _LZ_WINDOW:
                raise CorruptBlock(f"match distance {distance} out of range")
            if distance > len(out):
                raise CorruptBlock("match distance reaches before output start")
            start = len(out) - distance
            if distance >= length:
                out += out[start : start + length]
            else:
                pattern = out[start:]
                repeats = -(-length // distance)
                out += (bytes(pattern) * repeats)[:length]
        if len(out) > raw_len:
            raise CorruptBlock("body decodes past raw_len")
    return bytes(out)
