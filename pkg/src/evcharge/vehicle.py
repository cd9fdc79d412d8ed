"""Vehicle side of the charging handshake."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable

from .crypto import (
    PrngState,
    block_timestamp,
    check_block,
    compute_mac,
    decrypt_block,
    encrypt_block,
    verify_mac,
    xor_combine,
)
from .errors import ProtocolOrderViolation
from .messages import AuthRequest, ChallengeMessage

logger = logging.getLogger(__name__)


class VehiclePhase(enum.Enum):
    IDLE = "Idle"
    AWAITING_CHALLENGE = "AwaitingChallenge"
    CHARGING = "Charging"
    COMPLETED = "Completed"
    FAILED = "Failed"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class VehicleIdentity:
    id_a: bytes
    k_a: bytes
    k_g: bytes

    def __post_init__(self):
        check_block(self.id_a, "id_a")
        check_block(self.k_a, "k_a")
        check_block(self.k_g, "k_g")


class VehicleSession:
    """One vehicle's protocol state.

    Phases only move Idle -> AwaitingChallenge -> Charging -> Completed,
    with Failed reachable from AwaitingChallenge. A finished or failed
    session must be :meth:`reset` before the next attempt.
    """

    def __init__(
        self,
        identity: VehicleIdentity,
        prng: PrngState,
        clock: Callable[[], int],
        verify_macs: bool = True,
    ):
        self.identity = identity
        self.prng = prng
        self.clock = clock
        self.verify_macs = verify_macs
        self.phase = VehiclePhase.IDLE
        self.n_a: bytes | None = None
        self.t_2: int | None = None
        self.t_4_duration: int | None = None
        self.skew_warning = False
        self.failure_reason: str | None = None

    def _require(self, phase: VehiclePhase, op: str):
        if self.phase is not phase:
            raise ProtocolOrderViolation(f"{op} requires {phase}, vehicle is {self.phase}")

    def begin_auth(self) -> AuthRequest:
        self._require(VehiclePhase.IDLE, "begin_auth")
        ident = self.identity
        n_a, self.prng = self.prng.next_nonce()
        m1 = encrypt_block(ident.id_a, ident.k_a)
        m2 = xor_combine(m1, n_a)
        m3 = encrypt_block(m2, ident.k_g)
        mac = compute_mac(m3 + n_a, ident.k_g)
        self.n_a = n_a
        self.phase = VehiclePhase.AWAITING_CHALLENGE
        return AuthRequest(m3, mac, n_a)

    def handle_challenge(self, msg: ChallengeMessage) -> VehiclePhase:
        """Recover the terminal's start time; a forged challenge fails the session."""
        self._require(VehiclePhase.AWAITING_CHALLENGE, "handle_challenge")
        ident = self.identity
        if self.verify_macs and not verify_mac(msg.mac_input(), msg.mac, ident.k_g):
            return self._fail("challenge MAC mismatch")
        m9 = decrypt_block(msg.m8, ident.k_g)
        m10 = decrypt_block(m9, ident.k_a)
        t_2 = block_timestamp(xor_combine(m10, msg.n_t))
        if t_2 is None:
            return self._fail("timestamp padding not zero")
        self.t_2 = t_2
        self.phase = VehiclePhase.CHARGING
        return self.phase

    def _fail(self, reason: str) -> VehiclePhase:
        logger.info("vehicle %s: %s", self.identity.id_a.hex()[:8], reason)
        self.failure_reason = reason
        self.phase = VehiclePhase.FAILED
        return self.phase

    def on_energy_stop(self) -> int:
        """Close the session locally and return the informational duration (ms)."""
        self._require(VehiclePhase.CHARGING, "on_energy_stop")
        t_3 = self.clock()
        if t_3 < self.t_2:
            # terminal clock ahead of ours
            self.skew_warning = True
        self.t_4_duration = max(0, t_3 - self.t_2)
        self.phase = VehiclePhase.COMPLETED
        return self.t_4_duration

    def reset(self):
        if self.phase is VehiclePhase.CHARGING:
            raise ProtocolOrderViolation("cannot reset while charging; stop energy first")
        self.phase = VehiclePhase.IDLE
        self.n_a = None
        self.t_2 = None
        self.t_4_duration = None
        self.skew_warning = False
        self.failure_reason = None
