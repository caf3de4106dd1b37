"""Framed binary protocol between scheduler and workers.

Frame layout: a big-endian u32 length covering everything after itself,
then one tag byte, then the payload.  Payload integers are little-endian
u32, reals little-endian f8.  ``decode_frame`` distinguishes "need more
bytes" (returns None) from "malformed" (raises FrameError); payload decoders
validate declared sizes against the actual byte count before touching the
buffer, so hostile lengths fail cleanly instead of over-reading or
over-allocating.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "FrameError",
    "TAG_ASSIGN_PARTITION",
    "TAG_INIT_RESULT",
    "TAG_BROADCAST_XBAR",
    "TAG_UPDATE_RESULT",
    "TAG_SHUTDOWN",
    "TAG_ASSIGN_PARTITION_PATH",
    "TAG_ERROR",
    "KNOWN_TAGS",
    "ERR_PROTOCOL_ORDER",
    "ERR_MALFORMED",
    "ERR_NUMERICAL",
    "ERR_INTERNAL",
    "ERROR_CODE_NAMES",
    "MODE_TO_BYTE",
    "BYTE_TO_MODE",
    "MAX_FRAME_LEN",
    "encode_frame",
    "decode_frame",
    "encode_assign",
    "decode_assign",
    "encode_assign_path",
    "decode_assign_path",
    "encode_init_result",
    "decode_init_result",
    "encode_broadcast",
    "decode_broadcast",
    "encode_update_result",
    "decode_update_result",
    "encode_shutdown",
    "encode_error",
    "decode_error",
]

TAG_ASSIGN_PARTITION = 0x01
TAG_INIT_RESULT = 0x02
TAG_BROADCAST_XBAR = 0x03
TAG_UPDATE_RESULT = 0x04
TAG_SHUTDOWN = 0x05
TAG_ASSIGN_PARTITION_PATH = 0x06
TAG_ERROR = 0x7F

KNOWN_TAGS = frozenset(
    {
        TAG_ASSIGN_PARTITION,
        TAG_INIT_RESULT,
        TAG_BROADCAST_XBAR,
        TAG_UPDATE_RESULT,
        TAG_SHUTDOWN,
        TAG_ASSIGN_PARTITION_PATH,
        TAG_ERROR,
    }
)

ERR_PROTOCOL_ORDER = 1
ERR_MALFORMED = 2
ERR_NUMERICAL = 3
ERR_INTERNAL = 4
ERROR_CODE_NAMES = {
    ERR_PROTOCOL_ORDER: "protocol-order",
    ERR_MALFORMED: "malformed",
    ERR_NUMERICAL: "numerical",
    ERR_INTERNAL: "internal",
}

MODE_TO_BYTE = {"decomposed": 0, "classical": 1}
BYTE_TO_MODE = {v: k for k, v in MODE_TO_BYTE.items()}

MAX_FRAME_LEN = 2**31

_HEADER = struct.Struct(">I")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


class FrameError(ValueError):
    """Malformed frame or payload (distinct from 'incomplete, read more')."""


def encode_frame(tag: int, payload: bytes = b"") -> bytes:
    if tag not in KNOWN_TAGS:
        raise ValueError(f"unknown tag 0x{tag:02x}")
    length = 1 + len(payload)
    if length > MAX_FRAME_LEN:
        raise FrameError(f"frame length {length} exceeds {MAX_FRAME_LEN}")
    return _HEADER.pack(length) + bytes((tag,)) + payload


def decode_frame(buf) -> tuple[int, bytes, int] | None:
    """Try to decode one frame from the head of ``buf``.

    Returns (tag, payload, bytes_consumed), or None when the buffer does not
    yet hold a complete frame.  Raises FrameError for structurally invalid
    input (zero/oversized length, unknown tag).
    """
    view = memoryview(buf)
    if len(view) < _HEADER.size:
        return None
    (length,) = _HEADER.unpack_from(view, 0)
    if length < 1:
        raise FrameError("frame length 0 cannot cover the tag byte")
    if length > MAX_FRAME_LEN:
        raise FrameError(f"frame length {length} exceeds {MAX_FRAME_LEN}")
    total = _HEADER.size + length
    if len(view) < total:
        return None
    tag = view[_HEADER.size]
    if tag not in KNOWN_TAGS:
        raise FrameError(f"unknown tag 0x{tag:02x}")
    payload = bytes(view[_HEADER.size + 1 : total])
    return tag, payload, total


# --- payload primitives ------------------------------------------------------


def _take_u32(buf: bytes, off: int) -> tuple[int, int]:
    if off + 4 > len(buf):
        raise FrameError(f"truncated u32 at offset {off}")
    return _U32.unpack_from(buf, off)[0], off + 4


def _take_f64(buf: bytes, off: int) -> tuple[float, int]:
    if off + 8 > len(buf):
        raise FrameError(f"truncated f64 at offset {off}")
    return _F64.unpack_from(buf, off)[0], off + 8


def _take_vector(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    n, off = _take_u32(buf, off)
    nbytes = 8 * n
    if off + nbytes > len(buf):
        raise FrameError(f"vector of {n} reals exceeds payload ({len(buf)} bytes)")
    vec = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    return vec, off + nbytes


def _take_matrix(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    nrows, off = _take_u32(buf, off)
    ncols, off = _take_u32(buf, off)
    nbytes = 8 * nrows * ncols
    if off + nbytes > len(buf):
        raise FrameError(
            f"matrix {nrows}x{ncols} exceeds payload ({len(buf)} bytes)"
        )
    flat = np.frombuffer(buf, dtype="<f8", count=nrows * ncols, offset=off)
    return flat.astype(np.float64).reshape(nrows, ncols), off + nbytes


def _take_str(buf: bytes, off: int) -> tuple[str, int]:
    n, off = _take_u32(buf, off)
    if off + n > len(buf):
        raise FrameError(f"string of {n} bytes exceeds payload ({len(buf)} bytes)")
    try:
        text = bytes(buf[off : off + n]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FrameError(f"invalid utf-8 in string field: {exc}") from None
    return text, off + n


def _pack_vector(v: np.ndarray) -> bytes:
    v = np.ascontiguousarray(v, dtype=np.float64)
    return _U32.pack(v.shape[0]) + v.astype("<f8").tobytes()


def _pack_matrix(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype=np.float64)
    return (
        _U32.pack(m.shape[0]) + _U32.pack(m.shape[1]) + m.astype("<f8").tobytes()
    )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def _done(buf: bytes, off: int) -> None:
    if off != len(buf):
        raise FrameError(f"{len(buf) - off} trailing bytes after payload")


def _mode_byte(mode: str) -> bytes:
    if mode not in MODE_TO_BYTE:
        raise ValueError(f"mode {mode!r} not shippable (use decomposed/classical)")
    return bytes((MODE_TO_BYTE[mode],))


def _take_mode(buf: bytes, off: int) -> tuple[str, int]:
    if off + 1 > len(buf):
        raise FrameError(f"truncated mode byte at offset {off}")
    code = buf[off]
    if code not in BYTE_TO_MODE:
        raise FrameError(f"unknown mode byte 0x{code:02x}")
    return BYTE_TO_MODE[code], off + 1


# --- message codecs ----------------------------------------------------------


def encode_assign(j, mode, gamma, a_block, b_block) -> bytes:
    """ASSIGN_PARTITION payload: u32 j, mode byte, f8 gamma, matrix, vector."""
    return (
        _U32.pack(j)
        + _mode_byte(mode)
        + _F64.pack(gamma)
        + _pack_matrix(a_block)
        + _pack_vector(b_block)
    )


def decode_assign(payload: bytes):
    j, off = _take_u32(payload, 0)
    mode, off = _take_mode(payload, off)
    gamma, off = _take_f64(payload, off)
    a_block, off = _take_matrix(payload, off)
    b_block, off = _take_vector(payload, off)
    _done(payload, off)
    if a_block.shape[0] != b_block.shape[0]:
        raise FrameError(
            f"block rows {a_block.shape[0]} != rhs length {b_block.shape[0]}"
        )
    return j, mode, gamma, a_block, b_block


def encode_assign_path(j, mode, gamma, a_path: str, b_path: str) -> bytes:
    """ASSIGN_PARTITION_PATH payload: like ASSIGN but block shipped by file path."""
    return (
        _U32.pack(j)
        + _mode_byte(mode)
        + _F64.pack(gamma)
        + _pack_str(a_path)
        + _pack_str(b_path)
    )


def decode_assign_path(payload: bytes):
    j, off = _take_u32(payload, 0)
    mode, off = _take_mode(payload, off)
    gamma, off = _take_f64(payload, off)
    a_path, off = _take_str(payload, off)
    b_path, off = _take_str(payload, off)
    _done(payload, off)
    return j, mode, gamma, a_path, b_path


def encode_init_result(x0, p_max: float) -> bytes:
    """INIT_RESULT payload: vector x0, f8 max |P| diagnostic."""
    return _pack_vector(x0) + _F64.pack(p_max)


def decode_init_result(payload: bytes):
    x0, off = _take_vector(payload, 0)
    p_max, off = _take_f64(payload, off)
    _done(payload, off)
    return x0, p_max


def encode_broadcast(epoch: int, x_bar) -> bytes:
    """BROADCAST_XBAR payload: u32 epoch, vector x_bar."""
    return _U32.pack(epoch) + _pack_vector(x_bar)


def decode_broadcast(payload: bytes):
    epoch, off = _take_u32(payload, 0)
    x_bar, off = _take_vector(payload, off)
    _done(payload, off)
    return epoch, x_bar


def encode_update_result(epoch: int, x) -> bytes:
    """UPDATE_RESULT payload: u32 epoch, vector x."""
    return _U32.pack(epoch) + _pack_vector(x)


def decode_update_result(payload: bytes):
    epoch, off = _take_u32(payload, 0)
    x, off = _take_vector(payload, off)
    _done(payload, off)
    return epoch, x


def encode_shutdown() -> bytes:
    """The complete SHUTDOWN frame (empty payload): 00 00 00 01 05."""
    return encode_frame(TAG_SHUTDOWN)


def encode_error(code: int, message: str) -> bytes:
    """ERROR payload: u32 code, utf-8 message."""
    if code not in ERROR_CODE_NAMES:
        raise ValueError(f"unknown error code {code}")
    return _U32.pack(code) + message.encode("utf-8")


def decode_error(payload: bytes):
    code, off = _take_u32(payload, 0)
    try:
        message = payload[off:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FrameError(f"invalid utf-8 in error message: {exc}") from None
    if code not in ERROR_CODE_NAMES:
        raise FrameError(f"unknown error code {code}")
    return code, message
