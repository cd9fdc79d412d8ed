"""Mutual authentication, charging and billing for electric vehicles at
street-side terminals, as deterministic state machines over an
attacker-controlled radio link."""

from .channel import Adversary, ChannelEvent, Direction, Disposition, Rule, Simulation
from .crypto import (
    PrngState,
    compute_mac,
    decrypt_block,
    encrypt_block,
    prng_next_nonce,
    verify_mac,
    xor_combine,
)
from .messages import (
    AuthRequest,
    ChallengeMessage,
    LookupOutcome,
    LookupRequest,
    LookupResponse,
    SessionReport,
    decode,
    encode,
)
from .registry import Invoice, Registry, VehicleRecord
from .scenario import load_scenario, parse_scenario, run_scenario
from .terminal import Rejection, SessionAbort, Terminal
from .vehicle import VehicleIdentity, VehiclePhase, VehicleSession

__version__ = "0.1.0"
