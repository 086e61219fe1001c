"""Worker/master message types and their binary wire layout.

Every frame is::

    magic   4 bytes   b"HIBP"
    version u16       PROTOCOL_VERSION
    kind    u8        1 = SyncMessage, 2 = BroadcastMessage
    pad     u8        0
    blocks  ...       one length-prefixed block per field, in field order

and each block is ``u64 nbytes`` followed by ``nbytes`` of payload. Scalars
are ``<i8`` or ``<f8``. Arrays are ``u8 dtype-code, u8 ndim, ndim x u64
shape`` then the C-ordered little-endian data. All integers little-endian.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct

import numpy as np

from .model import HyperParams

MAGIC = b"HIBP"
PROTOCOL_VERSION = 1
KIND_SYNC = 1
KIND_BROADCAST = 2

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class ProtocolError(RuntimeError):
    """Malformed, stale or inconsistent message."""


@dataclasses.dataclass
class SyncMessage:
    """Worker -> master summary after L sub-iterations.

    ``ztz``/``ztx``/``first_active`` cover the combined local columns: the
    K+ instantiated features followed by the ``k_tail`` tail features.
    ``first_active`` holds shard-local row indices, -1 for an empty column.
    """

    shard_id: int
    iteration: int
    n_rows: int
    row_offset: int
    counts: np.ndarray
    k_tail: int
    tail_block: np.ndarray
    ztz: np.ndarray
    ztx: np.ndarray
    xtx: float
    first_active: np.ndarray
    loglik: float
    rows_updated: int


@dataclasses.dataclass
class BroadcastMessage:
    """Master -> workers global state for the next global step.

    Workers rebuild their columns as ``hstack(Z+, promoted tail)[:, keep]``
    where the promoted block has ``n_promoted`` columns (zeros off p').
    """

    iteration: int
    k_plus: int
    keep: np.ndarray
    n_promoted: int
    A: np.ndarray
    pi: np.ndarray
    hyper: HyperParams
    p_prime: int


class _Writer:
    def __init__(self, kind: int):
        self.parts = [MAGIC, struct.pack("<HBB", PROTOCOL_VERSION, kind, 0)]

    def _block(self, payload: bytes) -> None:
        self.parts.append(struct.pack("<Q", len(payload)))
        self.parts.append(payload)

    def int(self, value) -> None:
        self._block(struct.pack("<q", int(value)))

    def float(self, value) -> None:
        self._block(struct.pack("<d", float(value)))

    def array(self, arr, dtype) -> None:
        dt = np.dtype(dtype)
        arr = np.ascontiguousarray(arr, dtype=dt)
        head = struct.pack("<BB", _CODES[dt], arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        self._block(head + arr.tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, kind: int):
        if len(data) < 8 or data[:4] != MAGIC:
            raise ProtocolError("bad magic")
        version, got, _ = struct.unpack_from("<HBB", data, 4)
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version}")
        if got != kind:
            raise ProtocolError(f"expected message kind {kind}, got {got}")
        self.data = data
        self.pos = 8

    def _block(self) -> memoryview:
        if self.pos + 8 > len(self.data):
            raise ProtocolError("truncated frame")
        (n,) = struct.unpack_from("<Q", self.data, self.pos)
        start = self.pos + 8
        if start + n > len(self.data):
            raise ProtocolError("truncated block")
        self.pos = start + n
        return memoryview(self.data)[start:start + n]

    def int(self) -> int:
        return struct.unpack("<q", self._block())[0]

    def float(self) -> float:
        return struct.unpack("<d", self._block())[0]

    def array(self) -> np.ndarray:
        buf = self._block()
        code, ndim = struct.unpack_from("<BB", buf, 0)
        shape = struct.unpack_from(f"<{ndim}Q", buf, 2)
        dt = _DTYPES[code]
        return np.frombuffer(buf[2 + 8 * ndim:], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ProtocolError("trailing bytes after last block")


def encode_sync(msg: SyncMessage) -> bytes:
    w = _Writer(KIND_SYNC)
    w.int(msg.shard_id)
    w.int(msg.iteration)
    w.int(msg.n_rows)
    w.int(msg.row_offset)
    w.array(msg.counts, "<i8")
    w.int(msg.k_tail)
    w.array(msg.tail_block, "u1")
    w.array(msg.ztz, "<f8")
    w.array(msg.ztx, "<f8")
    w.float(msg.xtx)
    w.array(msg.first_active, "<i8")
    w.float(msg.loglik)
    w.int(msg.rows_updated)
    return w.bytes()


def decode_sync(data: bytes) -> SyncMessage:
    r = _Reader(data, KIND_SYNC)
    msg = SyncMessage(
        shard_id=r.int(), iteration=r.int(), n_rows=r.int(), row_offset=r.int(),
        counts=r.array(), k_tail=r.int(), tail_block=r.array(), ztz=r.array(),
        ztx=r.array(), xtx=r.float(), first_active=r.array(), loglik=r.float(),
        rows_updated=r.int(),
    )
    r.done()
    return msg


def encode_broadcast(msg: BroadcastMessage) -> bytes:
    h = msg.hyper
    w = _Writer(KIND_BROADCAST)
    w.int(msg.iteration)
    w.int(msg.k_plus)
    w.array(msg.keep, "<i8")
    w.int(msg.n_promoted)
    w.array(msg.A, "<f8")
    w.array(msg.pi, "<f8")
    w.array([h.alpha, h.sigma_x, h.sigma_a, h.alpha_prior[0], h.alpha_prior[1],
             h.variance_step], "<f8")
    w.int(h.resample_alpha | (h.resample_sigma_x << 1) | (h.resample_sigma_a << 2))
    w.int(msg.p_prime)
    return w.bytes()


def decode_broadcast(data: bytes) -> BroadcastMessage:
    r = _Reader(data, KIND_BROADCAST)
    iteration, k_plus, keep, n_promoted = r.int(), r.int(), r.array(), r.int()
    A, pi = r.array(), r.array()
    alpha, sx, sa, pa, pb, step = r.array().tolist()
    flags = r.int()
    hyper = HyperParams(alpha=alpha, sigma_x=sx, sigma_a=sa, alpha_prior=(pa, pb),
                        variance_step=step, resample_alpha=bool(flags & 1),
                        resample_sigma_x=bool(flags & 2), resample_sigma_a=bool(flags & 4))
    msg = BroadcastMessage(iteration=iteration, k_plus=k_plus, keep=keep, n_promoted=n_promoted,
                           A=A, pi=pi, hyper=hyper, p_prime=r.int())
    r.done()
    if not (A.shape[0] == pi.shape[0] == k_plus):
        raise ProtocolError(f"|pi|={pi.shape[0]}, rows(A)={A.shape[0]}, K+={k_plus}")
    return msg


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
