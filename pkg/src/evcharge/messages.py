"""Wire messages and their fixed-width binary framing.

Every frame is a one-byte type tag followed by the message fields in
declaration order. Integers are big-endian; all other fields are 16-byte
blocks. Frame length is fixed per type.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

from .crypto import BLOCK_SIZE, ZERO_BLOCK, check_block
from .errors import MalformedMessage


class MessageType(enum.IntEnum):
    AUTH_REQUEST = 0x01
    LOOKUP_REQUEST = 0x02
    LOOKUP_RESPONSE = 0x03
    CHALLENGE = 0x04
    SESSION_REPORT = 0x05


class LookupOutcome(enum.IntEnum):
    SUCCESS = 0
    NOT_FOUND = 1
    REPLAY_DETECTED = 2


@dataclass(frozen=True)
class AuthRequest:
    m3: bytes
    mac: bytes
    n_a: bytes

    def __post_init__(self):
        check_block(self.m3, "m3")
        check_block(self.mac, "mac")
        check_block(self.n_a, "n_a")

    def mac_input(self) -> bytes:
        return self.m3 + self.n_a


@dataclass(frozen=True)
class LookupRequest:
    m5: bytes
    n_a: bytes

    def __post_init__(self):
        check_block(self.m5, "m5")
        check_block(self.n_a, "n_a")


@dataclass(frozen=True)
class LookupResponse:
    outcome: LookupOutcome
    id_a: bytes | None = None
    k_a: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "outcome", LookupOutcome(self.outcome))
        if self.outcome is LookupOutcome.SUCCESS:
            if self.id_a is None or self.k_a is None:
                raise ValueError("successful lookup needs identity and key")
            check_block(self.id_a, "id_a")
            check_block(self.k_a, "k_a")
        elif self.id_a is not None or self.k_a is not None:
            raise ValueError("failed lookups carry no identity or key")

    @classmethod
    def success(cls, id_a: bytes, k_a: bytes) -> "LookupResponse":
        return cls(LookupOutcome.SUCCESS, id_a, k_a)


@dataclass(frozen=True)
class ChallengeMessage:
    m8: bytes
    mac: bytes
    n_t: bytes

    def __post_init__(self):
        check_block(self.m8, "m8")
        check_block(self.mac, "mac")
        check_block(self.n_t, "n_t")

    def mac_input(self) -> bytes:
        return self.m8 + self.n_t


@dataclass(frozen=True)
class SessionReport:
    id_a: bytes
    t_start: int
    t_end: int

    def __post_init__(self):
        check_block(self.id_a, "id_a")
        for t in (self.t_start, self.t_end):
            if not 0 <= t < 1 << 64:
                raise ValueError("timestamps must be 64-bit unsigned")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes t_start")


ProtocolMessage = Union[
    AuthRequest, LookupRequest, LookupResponse, ChallengeMessage, SessionReport
]

FRAME_LENGTH = {
    MessageType.AUTH_REQUEST: 1 + 3 * BLOCK_SIZE,
    MessageType.LOOKUP_REQUEST: 1 + 2 * BLOCK_SIZE,
    MessageType.LOOKUP_RESPONSE: 2 + 2 * BLOCK_SIZE,
    MessageType.CHALLENGE: 1 + 3 * BLOCK_SIZE,
    MessageType.SESSION_REPORT: 1 + BLOCK_SIZE + 16,
}


def message_type(msg: ProtocolMessage) -> MessageType:
    if isinstance(msg, AuthRequest):
        return MessageType.AUTH_REQUEST
    if isinstance(msg, LookupRequest):
        return MessageType.LOOKUP_REQUEST
    if isinstance(msg, LookupResponse):
        return MessageType.LOOKUP_RESPONSE
    if isinstance(msg, ChallengeMessage):
        return MessageType.CHALLENGE
    if isinstance(msg, SessionReport):
        return MessageType.SESSION_REPORT
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def encode(msg: ProtocolMessage) -> bytes:
    tag = bytes([message_type(msg)])
    if isinstance(msg, AuthRequest):
        return tag + msg.m3 + msg.mac + msg.n_a
    if isinstance(msg, LookupRequest):
        return tag + msg.m5 + msg.n_a
    if isinstance(msg, LookupResponse):
        id_a = msg.id_a or ZERO_BLOCK
        k_a = msg.k_a or ZERO_BLOCK
        return tag + bytes([msg.outcome]) + id_a + k_a
    if isinstance(msg, ChallengeMessage):
        return tag + msg.m8 + msg.mac + msg.n_t
    return tag + msg.id_a + struct.pack(">QQ", msg.t_start, msg.t_end)


def _blocks(body: bytes, n: int) -> list[bytes]:
    return [body[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE] for i in range(n)]


def decode(data: bytes) -> ProtocolMessage:
    if not data:
        raise MalformedMessage("empty frame")
    try:
        kind = MessageType(data[0])
    except ValueError:
        raise MalformedMessage(f"unknown message tag 0x{data[0]:02x}") from None
    if len(data) != FRAME_LENGTH[kind]:
        raise MalformedMessage(
            f"{kind.name} frame must be {FRAME_LENGTH[kind]} bytes, got {len(data)}"
        )
    body = bytes(data[1:])
    try:
        if kind is MessageType.AUTH_REQUEST:
            return AuthRequest(*_blocks(body, 3))
        if kind is MessageType.LOOKUP_REQUEST:
            return LookupRequest(*_blocks(body, 2))
        if kind is MessageType.CHALLENGE:
            return ChallengeMessage(*_blocks(body, 3))
        if kind is MessageType.SESSION_REPORT:
            t_start, t_end = struct.unpack(">QQ", body[BLOCK_SIZE:])
            return SessionReport(body[:BLOCK_SIZE], t_start, t_end)
        outcome = LookupOutcome(body[0])
        id_a, k_a = _blocks(body[1:], 2)
        if outcome is LookupOutcome.SUCCESS:
            return LookupResponse(outcome, id_a, k_a)
        if id_a != ZERO_BLOCK or k_a != ZERO_BLOCK:
            raise ValueError("failed lookup carries non-zero payload")
        return LookupResponse(outcome)
    except ValueError as exc:
        raise MalformedMessage(f"invalid {kind.name}: {exc}") from None


def try_decode(data: bytes) -> ProtocolMessage | None:
    try:
        return decode(data)
    except MalformedMessage:
        return None
