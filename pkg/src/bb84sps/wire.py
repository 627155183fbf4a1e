"""Classical-channel message schema, framing, and transports.

Frame layout (byte-exact):

    +----------------+--------+-----------------+
    | length u32 BE  | type   | payload         |
    | (payload bytes)| 1 byte | length bytes    |
    +----------------+--------+-----------------+

Payloads use canonical encodings: all integers big-endian, floats IEEE-754
big-endian doubles, bit strings packed 8 bits per byte MSB-first and
preceded by an explicit u32 bit count.  Maximum payload is 16 MiB.

Message type tags:

    0x01 HELLO                 version, role, config digest, session id
    0x02 DETECTION_ANNOUNCE    slot indices + basis bits + ambiguous flags
    0x03 SIFT_REPLY            kept slot indices
    0x04 QBER_SAMPLE           sampled key positions + sampler's bits
    0x05 QBER_RESULT           estimated error rate + abort flag
    0x06 CASCADE_PARITY_REQ    list of (pass, lo, hi) ranges
    0x07 CASCADE_PARITY_RESP   parity bits for the requested ranges
    0x08 SHUFFLE_SEED          pass index + permutation seed (or none)
    0x09 VERIFY_HASH           digest of the reconciled key
    0x0A PA_SEED               final length + hashing seed
    0x0B DONE                  (empty)
    0x0F ABORT                 reason code

The announcement carries only slot indices, the one-bit measurement basis
per slot and an ambiguity flag; detector identities and unsifted bit values
never appear in any message.  A reliable ordered stream is assumed
underneath (TCP or the in-memory pipe); there is no retransmission logic.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass, fields

from .errors import ChannelClosed, ChannelTimeout, ProtocolViolation, SessionAbort

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
DEFAULT_TIMEOUT = 30.0

ROLE_ALICE = 0
ROLE_BOB = 1

# Abort reason codes.
ABORT_PARAMETER_MISMATCH = 1
ABORT_QBER_TOO_HIGH = 2
ABORT_TOO_MANY_MULTI_DETECTIONS = 3
ABORT_VERIFY_FAILED = 4
ABORT_TIMEOUT = 5
ABORT_PROTOCOL_VIOLATION = 6
ABORT_INSUFFICIENT_DATA = 7

ABORT_NAMES = {
    ABORT_PARAMETER_MISMATCH: "parameter mismatch",
    ABORT_QBER_TOO_HIGH: "error rate above threshold",
    ABORT_TOO_MANY_MULTI_DETECTIONS: "too many multi-detector slots",
    ABORT_VERIFY_FAILED: "key verification failed",
    ABORT_TIMEOUT: "peer timeout",
    ABORT_PROTOCOL_VIOLATION: "protocol violation",
    ABORT_INSUFFICIENT_DATA: "not enough sifted data",
}


@dataclass(frozen=True)
class Hello:
    version: int
    role: int
    config_digest: bytes  # 32 bytes
    session_id: int


@dataclass(frozen=True)
class DetectionAnnounce:
    indices: tuple  # strictly increasing slot numbers
    bases: tuple    # one basis bit per slot (0 linear, 1 circular)
    ambiguous: tuple  # one flag per slot: more than one detector fired


@dataclass(frozen=True)
class SiftReply:
    positions: tuple  # slot indices where the bases matched


@dataclass(frozen=True)
class QberSample:
    positions: tuple  # indices into the sifted key
    bits: tuple


@dataclass(frozen=True)
class QberResult:
    e: float
    abort: bool


@dataclass(frozen=True)
class CascadeParityReq:
    ranges: tuple  # (pass_index, lo, hi) triples over the permuted key


@dataclass(frozen=True)
class CascadeParityResp:
    parities: tuple


@dataclass(frozen=True)
class ShuffleSeed:
    pass_index: int
    seed: int | None  # None = identity order


@dataclass(frozen=True)
class VerifyHash:
    digest: bytes


@dataclass(frozen=True)
class PaSeed:
    length: int
    seed: bytes  # 16 bytes


@dataclass(frozen=True)
class Done:
    pass


@dataclass(frozen=True)
class Abort:
    code: int


Message = (
    Hello | DetectionAnnounce | SiftReply | QberSample | QberResult
    | CascadeParityReq | CascadeParityResp | ShuffleSeed | VerifyHash
    | PaSeed | Done | Abort
)

TAG_HELLO = 0x01
TAG_DETECTION_ANNOUNCE = 0x02
TAG_SIFT_REPLY = 0x03
TAG_QBER_SAMPLE = 0x04
TAG_QBER_RESULT = 0x05
TAG_CASCADE_PARITY_REQ = 0x06
TAG_CASCADE_PARITY_RESP = 0x07
TAG_SHUFFLE_SEED = 0x08
TAG_VERIFY_HASH = 0x09
TAG_PA_SEED = 0x0A
TAG_DONE = 0x0B
TAG_ABORT = 0x0F


def _pack_bits(bits) -> bytes:
    out = bytearray(struct.pack(">I", len(bits)))
    byte = 0
    for i, b in enumerate(bits):
        byte = (byte << 1) | (int(b) & 1)
        if i % 8 == 7:
            out.append(byte)
            byte = 0
    tail = len(bits) % 8
    if tail:
        out.append(byte << (8 - tail))
    return bytes(out)


def _unpack_bits(buf: memoryview, off: int) -> tuple[tuple, int]:
    (n,) = struct.unpack_from(">I", buf, off)
    off += 4
    nbytes = (n + 7) // 8
    if off + nbytes > len(buf):
        raise ProtocolViolation("bit field overruns payload")
    bits = []
    for i in range(n):
        bits.append((buf[off + i // 8] >> (7 - i % 8)) & 1)
    return tuple(bits), off + nbytes


def _pack_u32s(values) -> bytes:
    return struct.pack(f">I{len(values)}I", len(values), *[int(v) for v in values])


def _unpack_u32s(buf: memoryview, off: int) -> tuple[tuple, int]:
    (n,) = struct.unpack_from(">I", buf, off)
    off += 4
    vals = struct.unpack_from(f">{n}I", buf, off)
    return vals, off + 4 * n


def _enc_hello(m: Hello) -> bytes:
    if len(m.config_digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    return struct.pack(">HB32sQ", m.version, m.role, m.config_digest, m.session_id)


def _dec_hello(p: memoryview) -> Hello:
    version, role, digest, session_id = struct.unpack(">HB32sQ", p)
    return Hello(version, role, digest, session_id)


def _enc_announce(m: DetectionAnnounce) -> bytes:
    if not (len(m.indices) == len(m.bases) == len(m.ambiguous)):
        raise ValueError("announcement fields must have equal length")
    return _pack_u32s(m.indices) + _pack_bits(m.bases) + _pack_bits(m.ambiguous)


def _dec_announce(p: memoryview) -> DetectionAnnounce:
    indices, off = _unpack_u32s(p, 0)
    bases, off = _unpack_bits(p, off)
    ambiguous, off = _unpack_bits(p, off)
    if not (len(indices) == len(bases) == len(ambiguous)):
        raise ProtocolViolation("announcement field lengths disagree")
    return DetectionAnnounce(indices, bases, ambiguous)


def _enc_sift(m: SiftReply) -> bytes:
    return _pack_u32s(m.positions)


def _dec_sift(p: memoryview) -> SiftReply:
    positions, _ = _unpack_u32s(p, 0)
    return SiftReply(positions)


def _enc_sample(m: QberSample) -> bytes:
    if len(m.positions) != len(m.bits):
        raise ValueError("sample positions and bits must have equal length")
    return _pack_u32s(m.positions) + _pack_bits(m.bits)


def _dec_sample(p: memoryview) -> QberSample:
    positions, off = _unpack_u32s(p, 0)
    bits, _ = _unpack_bits(p, off)
    if len(positions) != len(bits):
        raise ProtocolViolation("sample field lengths disagree")
    return QberSample(positions, bits)


def _enc_qber(m: QberResult) -> bytes:
    return struct.pack(">dB", m.e, 1 if m.abort else 0)


def _dec_qber(p: memoryview) -> QberResult:
    e, flag = struct.unpack(">dB", p)
    return QberResult(e, bool(flag))


def _enc_parity_req(m: CascadeParityReq) -> bytes:
    out = bytearray(struct.pack(">I", len(m.ranges)))
    for pass_index, lo, hi in m.ranges:
        out += struct.pack(">BII", pass_index, lo, hi)
    return bytes(out)


def _dec_parity_req(p: memoryview) -> CascadeParityReq:
    (n,) = struct.unpack_from(">I", p, 0)
    off = 4
    ranges = []
    for _ in range(n):
        ranges.append(struct.unpack_from(">BII", p, off))
        off += 9
    return CascadeParityReq(tuple(ranges))


def _enc_parity_resp(m: CascadeParityResp) -> bytes:
    return _pack_bits(m.parities)


def _dec_parity_resp(p: memoryview) -> CascadeParityResp:
    parities, _ = _unpack_bits(p, 0)
    return CascadeParityResp(parities)


def _enc_shuffle(m: ShuffleSeed) -> bytes:
    has_seed = m.seed is not None
    return struct.pack(">BBQ", m.pass_index, 1 if has_seed else 0,
                       m.seed if has_seed else 0)


def _dec_shuffle(p: memoryview) -> ShuffleSeed:
    pass_index, has_seed, seed = struct.unpack(">BBQ", p)
    return ShuffleSeed(pass_index, seed if has_seed else None)


def _enc_verify(m: VerifyHash) -> bytes:
    return struct.pack(">B", len(m.digest)) + m.digest


def _dec_verify(p: memoryview) -> VerifyHash:
    (n,) = struct.unpack_from(">B", p, 0)
    if len(p) != 1 + n:
        raise ProtocolViolation("verify digest length mismatch")
    return VerifyHash(bytes(p[1 : 1 + n]))


def _enc_pa_seed(m: PaSeed) -> bytes:
    if len(m.seed) != 16:
        raise ValueError("hashing seed must be 16 bytes")
    return struct.pack(">I16s", m.length, m.seed)


def _dec_pa_seed(p: memoryview) -> PaSeed:
    length, seed = struct.unpack(">I16s", p)
    return PaSeed(length, seed)


def _enc_done(_: Done) -> bytes:
    return b""


def _dec_done(p: memoryview) -> Done:
    if len(p):
        raise ProtocolViolation("DONE carries no payload")
    return Done()


def _enc_abort(m: Abort) -> bytes:
    return struct.pack(">B", m.code)


def _dec_abort(p: memoryview) -> Abort:
    (code,) = struct.unpack(">B", p)
    return Abort(code)


_CODECS = {
    TAG_HELLO: (Hello, _enc_hello, _dec_hello),
    TAG_DETECTION_ANNOUNCE: (DetectionAnnounce, _enc_announce, _dec_announce),
    TAG_SIFT_REPLY: (SiftReply, _enc_sift, _dec_sift),
    TAG_QBER_SAMPLE: (QberSample, _enc_sample, _dec_sample),
    TAG_QBER_RESULT: (QberResult, _enc_qber, _dec_qber),
    TAG_CASCADE_PARITY_REQ: (CascadeParityReq, _enc_parity_req, _dec_parity_req),
    TAG_CASCADE_PARITY_RESP: (CascadeParityResp, _enc_parity_resp, _dec_parity_resp),
    TAG_SHUFFLE_SEED: (ShuffleSeed, _enc_shuffle, _dec_shuffle),
    TAG_VERIFY_HASH: (VerifyHash, _enc_verify, _dec_verify),
    TAG_PA_SEED: (PaSeed, _enc_pa_seed, _dec_pa_seed),
    TAG_DONE: (Done, _enc_done, _dec_done),
    TAG_ABORT: (Abort, _enc_abort, _dec_abort),
}

_TAG_BY_TYPE = {cls: tag for tag, (cls, _, _) in _CODECS.items()}


def message_field_names(msg: Message) -> tuple[str, ...]:
    """Schema introspection helper for the no-secret-leakage property test."""
    return tuple(f.name for f in fields(msg))


def encode_frame(msg: Message) -> bytes:
    """Canonical frame bytes for a message; deterministic for equal inputs."""
    tag = _TAG_BY_TYPE.get(type(msg))
    if tag is None:
        raise ValueError(f"not a wire message: {type(msg).__name__}")
    _, enc, _ = _CODECS[tag]
    payload = enc(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds the 16 MiB cap")
    return struct.pack(">IB", len(payload), tag) + payload


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[Message, int] | None:
    """Decode one frame from the head of ``buf``.

    Returns ``(message, bytes_consumed)``, or None when the buffer holds an
    incomplete frame (nothing is consumed).  Unknown tags and malformed
    payloads raise :class:`ProtocolViolation`.
    """
    view = memoryview(buf)
    if len(view) < 5:
        return None
    length, tag = struct.unpack_from(">IB", view, 0)
    if length > MAX_PAYLOAD:
        raise ProtocolViolation(f"declared payload of {length} bytes exceeds the cap")
    if len(view) < 5 + length:
        return None
    codec = _CODECS.get(tag)
    if codec is None:
        raise ProtocolViolation(f"unknown frame type {tag:#04x}")
    _, _, dec = codec
    try:
        msg = dec(view[5 : 5 + length])
    except struct.error as exc:
        raise ProtocolViolation(f"malformed payload for tag {tag:#04x}: {exc}") from exc
    return msg, 5 + length


class MessageChannel:
    """Ordered, reliable, logged message pipe over some byte transport.

    Subclasses provide ``_send_bytes`` and ``_recv_bytes``; this base class
    does framing, the per-message timeout, and the frame log used for
    replay and leakage audits.  Entries in ``log`` are ``(direction,
    frame_bytes)`` with direction "sent" or "recv".
    """

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.log: list[tuple[str, bytes]] = []
        self._buffer = bytearray()

    def send(self, msg: Message) -> None:
        frame = encode_frame(msg)
        self.log.append(("sent", frame))
        self._send_bytes(frame)

    def recv(self) -> Message:
        while True:
            got = decode_frame(self._buffer)
            if got is not None:
                msg, consumed = got
                self.log.append(("recv", bytes(self._buffer[:consumed])))
                del self._buffer[:consumed]
                return msg
            chunk = self._recv_bytes()
            if not chunk:
                raise ChannelClosed("peer disconnected mid-session")
            self._buffer.extend(chunk)

    def expect(self, *types: type) -> Message:
        """Receive a message that must be one of ``types``.

        A received ABORT raises :class:`SessionAbort`; anything else
        outside ``types`` is a protocol violation.
        """
        msg = self.recv()
        if isinstance(msg, Abort):
            raise SessionAbort(msg.code, f"peer aborted: {ABORT_NAMES.get(msg.code, msg.code)}")
        if not isinstance(msg, types):
            expected = "/".join(t.__name__ for t in types)
            raise ProtocolViolation(f"expected {expected}, got {type(msg).__name__}")
        return msg

    def abort(self, code: int) -> None:
        """Best-effort ABORT notification; never raises."""
        try:
            self.send(Abort(code))
        except Exception:
            pass

    def close(self) -> None:  # pragma: no cover - overridden
        pass

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self) -> bytes:
        raise NotImplementedError


class MemoryChannel(MessageChannel):
    """In-memory duplex endpoint for single-process sessions and tests."""

    @classmethod
    def pair(cls, timeout: float = DEFAULT_TIMEOUT) -> tuple["MemoryChannel", "MemoryChannel"]:
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        a = cls(a_to_b, b_to_a, timeout)
        b = cls(b_to_a, a_to_b, timeout)
        return a, b

    def __init__(self, out_q: queue.Queue, in_q: queue.Queue, timeout: float):
        super().__init__(timeout)
        self._out = out_q
        self._in = in_q
        self._closed = False

    def _send_bytes(self, data: bytes) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        self._out.put(data)

    def _recv_bytes(self) -> bytes:
        try:
            data = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelTimeout(f"no message within {self.timeout} s") from None
        return data

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(b"")


class SocketChannel(MessageChannel):
    """Stream-socket endpoint; one session per connection."""

    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(timeout)
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(timeout)

    def _send_bytes(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc

    def _recv_bytes(self) -> bytes:
        try:
            return self._sock.recv(65536)
        except socket.timeout:
            raise ChannelTimeout(f"no message within {self.timeout} s") from None
        except OSError as exc:
            raise ChannelClosed(f"receive failed: {exc}") from exc

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect_channel(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> SocketChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    return SocketChannel(sock, timeout)


def listen_channel(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> tuple[SocketChannel, int]:
    """Accept one connection; returns the channel and the bound port."""
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    bound_port = server.getsockname()[1]
    server.listen(1)
    server.settimeout(timeout)
    try:
        conn, _ = server.accept()
    except socket.timeout:
        raise ChannelTimeout(f"no connection within {timeout} s") from None
    finally:
        server.close()
    return SocketChannel(conn, timeout), bound_port
