"""Charging terminal: unwraps the vehicle request, consults the registry,
issues the time-bound challenge and reports finished sessions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from .crypto import (
    PrngState,
    check_block,
    compute_mac,
    decrypt_block,
    encrypt_block,
    timestamp_block,
    verify_mac,
    xor_combine,
)
from .errors import ProtocolOrderViolation, TerminalBusy
from .messages import (
    AuthRequest,
    ChallengeMessage,
    LookupOutcome,
    LookupRequest,
    LookupResponse,
    SessionReport,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rejection:
    reason: str


@dataclass(frozen=True)
class SessionAbort:
    outcome: LookupOutcome


@dataclass
class TerminalSession:
    n_a: bytes
    m5: bytes
    id_a: bytes | None = None
    k_a: bytes | None = None
    t_1: int | None = None
    energy_active: bool = False

    @property
    def pending_lookup(self) -> bool:
        return self.id_a is None


class Terminal:
    """Single-bay terminal; at most one session at a time."""

    def __init__(
        self,
        k_g: bytes,
        prng: PrngState,
        clock: Callable[[], int],
        verify_macs: bool = True,
    ):
        self.k_g = check_block(k_g, "k_g")
        self.prng = prng
        self.clock = clock
        self.verify_macs = verify_macs
        self.session: TerminalSession | None = None

    @property
    def energy_active(self) -> bool:
        return self.session is not None and self.session.energy_active

    def handle_auth_request(self, msg: AuthRequest) -> LookupRequest | Rejection:
        if self.session is not None:
            raise TerminalBusy("terminal already has an active session")
        if self.verify_macs and not verify_mac(msg.mac_input(), msg.mac, self.k_g):
            return Rejection("auth request MAC mismatch")
        m4 = decrypt_block(msg.m3, self.k_g)
        m5 = xor_combine(m4, msg.n_a)
        self.session = TerminalSession(n_a=msg.n_a, m5=m5)
        return LookupRequest(m5, msg.n_a)

    def handle_lookup_response(self, resp: LookupResponse) -> ChallengeMessage | SessionAbort:
        if self.session is None or not self.session.pending_lookup:
            raise ProtocolOrderViolation("no lookup pending")
        if resp.outcome is not LookupOutcome.SUCCESS:
            logger.info("lookup failed: %s", resp.outcome.name)
            self.session = None
            return SessionAbort(resp.outcome)

        s = self.session
        s.id_a, s.k_a = resp.id_a, resp.k_a
        s.t_1 = self.clock()
        n_t, self.prng = self.prng.next_nonce()
        m6 = xor_combine(timestamp_block(s.t_1), n_t)
        m7 = encrypt_block(m6, s.k_a)
        m8 = encrypt_block(m7, self.k_g)
        mac = compute_mac(m8 + n_t, self.k_g)
        # energy goes on before the challenge leaves the terminal
        s.energy_active = True
        return ChallengeMessage(m8, mac, n_t)

    def on_session_end(self) -> SessionReport:
        if not self.energy_active:
            raise ProtocolOrderViolation("no active charging session")
        s = self.session
        t_5 = max(self.clock(), s.t_1)
        self.session = None
        return SessionReport(s.id_a, s.t_1, t_5)

    def abandon(self):
        """Drop a session without billing (only valid before energy is on)."""
        if self.energy_active:
            raise ProtocolOrderViolation("energy is on; end the session instead")
        self.session = None
