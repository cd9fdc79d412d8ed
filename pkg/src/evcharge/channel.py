"""Interceptable vehicle/terminal radio link and the simulation driver.

The attacker sits on the radio side only: it sees every frame, and its
script may block, rewrite, replay or replace frames. The terminal/server
link is trusted, so those frames, like energy switch events, are recorded
in the transcript but never handed to the attacker.

Everything is single-threaded and driven by explicit steps, so a run is a
pure function of the party seeds, the script and the schedule.
"""

from __future__ import annotations

import enum
import json
from collections import Counter, deque
from dataclasses import dataclass, field

from .clock import SimClock
from .crypto import (
    BLOCK_SIZE,
    PrngState,
    decrypt_block,
    encrypt_block,
    xor_combine,
)
from .errors import ProtocolError, ScenarioError
from .messages import (
    FRAME_LENGTH,
    AuthRequest,
    ChallengeMessage,
    LookupOutcome,
    MessageType,
    encode,
    try_decode,
)
from .registry import Registry
from .terminal import Rejection, SessionAbort, Terminal
from .vehicle import VehicleIdentity, VehiclePhase, VehicleSession


class Direction(str, enum.Enum):
    V2T = "vehicle->terminal"
    T2V = "terminal->vehicle"
    T2S = "terminal->server"
    S2T = "server->terminal"
    ENERGY = "energy-switch"


RADIO = frozenset({Direction.V2T, Direction.T2V})


class Disposition(str, enum.Enum):
    DELIVERED = "delivered"
    BLOCKED = "blocked"
    MODIFIED = "modified"
    INJECTED = "injected"
    REPLAYED = "replayed"


ENERGY_ON = b"\x01"
ENERGY_OFF = b"\x00"


@dataclass(frozen=True)
class ChannelEvent:
    seq: int
    direction: Direction
    link: str
    payload: bytes
    disposition: Disposition = Disposition.DELIVERED
    original: bytes | None = None
    source_seq: int | None = None

    def to_record(self) -> dict:
        rec = {
            "seq": self.seq,
            "direction": self.direction.value,
            "link": self.link,
            "payload": self.payload.hex(),
            "disposition": self.disposition.value,
        }
        if self.original is not None:
            rec["original"] = self.original.hex()
        if self.source_seq is not None:
            rec["source_seq"] = self.source_seq
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


def transcript_text(events) -> str:
    return "".join(ev.to_json() + "\n" for ev in events)


# -- adversary ---------------------------------------------------------------


class Action(str, enum.Enum):
    PASS = "pass"
    BLOCK = "block"
    MUTATE = "mutate"
    REPLAY = "replay"
    INJECT = "inject"


@dataclass(frozen=True)
class CaptureRef:
    """The ``index``-th radio frame of ``message_type`` the attacker has seen
    (``None`` matches any type)."""

    message_type: MessageType | None
    index: int


@dataclass
class Rule:
    direction: Direction
    message_type: MessageType | None = None
    occurrence: int | None = None
    action: Action = Action.PASS
    offset: int = 0
    mask: int = 0
    capture: CaptureRef | None = None
    payload: bytes | None = None
    random_type: MessageType | None = None

    def __post_init__(self):
        self.direction = Direction(self.direction)
        self.action = Action(self.action)
        if self.direction not in RADIO:
            raise ValueError("attacker rules apply to the radio link only")
        if self.action is Action.MUTATE and not 0 < self.mask <= 0xFF:
            raise ValueError("mutate mask must be a non-zero byte")
        if self.action is Action.REPLAY and self.capture is None:
            raise ValueError("replay needs a capture reference")
        if self.action is Action.INJECT and self.payload is None and self.random_type is None:
            raise ValueError("inject needs a payload or a random frame type")

    def matches(self, direction: Direction, mtype: MessageType | None, occurrence: int) -> bool:
        if direction is not self.direction:
            return False
        if self.message_type is not None and mtype is not self.message_type:
            return False
        return self.occurrence is None or self.occurrence == occurrence


@dataclass(frozen=True)
class Capture:
    seq: int
    direction: Direction
    link: str
    payload: bytes


def _frame_type(payload: bytes) -> MessageType | None:
    try:
        return MessageType(payload[0]) if payload else None
    except ValueError:
        return None


class Adversary:
    """Scripted network attacker.

    Holds no protocol secrets. It can use the public primitives (cipher,
    XOR, its own PRNG) with keys of its own choosing over captured bytes.
    """

    encrypt = staticmethod(encrypt_block)
    decrypt = staticmethod(decrypt_block)
    xor = staticmethod(xor_combine)

    def __init__(self, rules=(), prng: PrngState | None = None):
        self.rules = list(rules)
        self.prng = prng or PrngState(0x5EED, 0xA77AC)
        self.captures: list[Capture] = []
        self._seen = Counter()

    def observe(self, event: ChannelEvent):
        self.captures.append(Capture(event.seq, event.direction, event.link, event.payload))

    def decide(self, direction: Direction, payload: bytes) -> Rule | None:
        """Pick the first rule matching an honestly emitted frame."""
        mtype = _frame_type(payload)
        occurrence = self._seen[direction, mtype]
        self._seen[direction, mtype] += 1
        for rule in self.rules:
            if rule.matches(direction, mtype, occurrence):
                return rule
        return None

    def resolve(self, ref: CaptureRef) -> Capture:
        matching = [
            c for c in self.captures
            if ref.message_type is None or _frame_type(c.payload) is ref.message_type
        ]
        if ref.index >= len(matching):
            raise ScenarioError(f"no captured frame for {ref}")
        return matching[ref.index]

    def random_frame(self, mtype: MessageType) -> bytes:
        body, self.prng = self.prng.next_bytes(FRAME_LENGTH[mtype] - 1)
        return bytes([mtype]) + body

    def forge(self, ref: CaptureRef, block_index: int, op: str, operand: bytes) -> tuple[Capture, bytes]:
        """Rewrite one 16-byte field of a captured frame with E, D or XOR."""
        cap = self.resolve(ref)
        start = 1 + block_index * BLOCK_SIZE
        block = cap.payload[start:start + BLOCK_SIZE]
        if len(block) != BLOCK_SIZE:
            raise ScenarioError(f"frame has no block {block_index}")
        if op == "enc":
            new = self.encrypt(block, operand)
        elif op == "dec":
            new = self.decrypt(block, operand)
        elif op == "xor":
            new = self.xor(block, operand)
        else:
            raise ScenarioError(f"unknown forge operation {op!r}")
        return cap, cap.payload[:start] + new + cap.payload[start + BLOCK_SIZE:]


# -- simulation --------------------------------------------------------------


class StepLimitExceeded(Exception):
    pass


@dataclass
class VehicleNode:
    name: str
    session: VehicleSession
    clock: SimClock
    terminal: str | None = None


@dataclass
class TerminalNode:
    name: str
    terminal: Terminal
    clock: SimClock
    vehicle: str | None = None
    budget_deadline: int | None = None


@dataclass
class EnergyWindow:
    """One energised interval of a terminal, with whether the vehicle on the
    cable ever accepted the matching challenge."""

    link: str
    vehicle: str | None
    on_seq: int
    t_on: int
    off_seq: int | None = None
    t_off: int | None = None
    vehicle_confirmed: bool = False
    trigger: str | None = None

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Note:
    seq: int
    party: str
    event: str
    detail: str = ""

    def to_record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Simulation:
    registry: Registry
    k_g: bytes
    adversary: Adversary = field(default_factory=Adversary)
    tariff_rate: int = 0
    verify_macs: bool = True
    max_events: int = 10_000

    def __post_init__(self):
        self.vehicles: dict[str, VehicleNode] = {}
        self.terminals: dict[str, TerminalNode] = {}
        self.transcript: list[ChannelEvent] = []
        self.notes: list[Note] = []
        self.energy_windows: list[EnergyWindow] = []
        self.invoices = []
        self.honest_frames = 0
        # server-link lookup seq -> radio frame seq that triggered it
        self.lookup_triggers: dict[int, int] = {}
        # (vehicle, radio frame seq) for every accepted challenge
        self.accepted_challenges: list[tuple[str, int]] = []
        self._queue: deque = deque()

    # setup

    def add_vehicle(self, name: str, identity: VehicleIdentity, prng: PrngState,
                    start_ms: int = 0) -> VehicleSession:
        self._check_new_name(name)
        clock = SimClock(start_ms)
        session = VehicleSession(identity, prng, clock, verify_macs=self.verify_macs)
        self.vehicles[name] = VehicleNode(name, session, clock)
        return session

    def add_terminal(self, name: str, prng: PrngState, start_ms: int = 0) -> Terminal:
        self._check_new_name(name)
        clock = SimClock(start_ms)
        term = Terminal(self.k_g, prng, clock, verify_macs=self.verify_macs)
        self.terminals[name] = TerminalNode(name, term, clock)
        return term

    def _check_new_name(self, name):
        if name in self.vehicles or name in self.terminals or name == "all":
            raise ScenarioError(f"party name {name!r} already used or reserved")

    def _vehicle(self, name) -> VehicleNode:
        try:
            return self.vehicles[name]
        except KeyError:
            raise ScenarioError(f"unknown vehicle {name!r}") from None

    def _terminal(self, name) -> TerminalNode:
        try:
            return self.terminals[name]
        except KeyError:
            raise ScenarioError(f"unknown terminal {name!r}") from None

    # schedule steps

    def plug(self, vehicle: str, terminal: str):
        v, t = self._vehicle(vehicle), self._terminal(terminal)
        if t.vehicle is not None and t.vehicle != vehicle:
            raise ScenarioError(f"terminal {terminal} already has {t.vehicle} plugged in")
        if v.terminal is not None:
            self.terminals[v.terminal].vehicle = None
        v.terminal, t.vehicle = terminal, vehicle

    def unplug(self, vehicle: str):
        v = self._vehicle(vehicle)
        if v.terminal is not None:
            t = self.terminals[v.terminal]
            # pulling the cable interrupts any energy flow
            if t.terminal.energy_active:
                self.stop(t.name, trigger="cable")
            t.vehicle = None
            v.terminal = None

    def auth(self, vehicle: str):
        v = self._vehicle(vehicle)
        if v.terminal is None:
            raise ScenarioError(f"vehicle {vehicle} is not plugged in")
        try:
            req = v.session.begin_auth()
        except ProtocolError as exc:
            self._note(vehicle, "auth-refused", str(exc))
            return
        self._send(v.terminal, Direction.V2T, encode(req))
        self._pump()

    def reset(self, vehicle: str):
        v = self._vehicle(vehicle)
        try:
            v.session.reset()
        except ProtocolError as exc:
            self._note(vehicle, "reset-refused", str(exc))

    def advance(self, names, ms: int):
        """Advance the named clocks (or ``"all"``), stopping any terminal
        whose session runs out of prepaid balance on the way."""
        if isinstance(names, str):
            names = [names]
        if ms < 0:
            raise ScenarioError("cannot advance a clock backwards")
        if list(names) == ["all"]:
            names = list(self.vehicles) + list(self.terminals)
        clocks = []
        for n in names:
            node = self.vehicles.get(n) or self.terminals.get(n)
            if node is None:
                raise ScenarioError(f"unknown party {n!r}")
            clocks.append(node.clock)
        remaining = ms
        while True:
            due = [
                (t.budget_deadline - t.clock(), t.name)
                for t in (self.terminals[n] for n in names if n in self.terminals)
                if t.terminal.energy_active and t.budget_deadline is not None
            ]
            due = [d for d in due if d[0] <= remaining]
            if not due:
                break
            delta, tname = min(due)
            delta = max(delta, 0)
            for c in clocks:
                c.advance(delta)
            remaining -= delta
            self.stop(tname, trigger="balance")
        for c in clocks:
            c.advance(remaining)

    def stop(self, terminal: str, trigger: str = "manual"):
        """Energy flow ends at a terminal: bill the session and tell the vehicle."""
        t = self._terminal(terminal)
        if t.terminal.energy_active:
            report = t.terminal.on_session_end()
            off = self._record(Direction.ENERGY, terminal, ENERGY_OFF)
            self._record(Direction.T2S, terminal, encode(report))
            window = self._open_window(terminal)
            window.off_seq, window.t_off, window.trigger = off.seq, report.t_end, trigger
            t.budget_deadline = None
            invoice = self.registry.bill_session(report, self.tariff_rate)
            self.invoices.append(invoice)
            self._note(terminal, "invoice", f"{invoice.duration_ms} ms, amount {invoice.amount}")
        else:
            self._note(terminal, "stop-idle", trigger)
        if t.vehicle is not None:
            v = self.vehicles[t.vehicle]
            if v.session.phase is VehiclePhase.CHARGING:
                duration = v.session.on_energy_stop()
                detail = f"{duration} ms" + (" (clock skew)" if v.session.skew_warning else "")
                self._note(v.name, "completed", detail)

    def inject(self, terminal: str, direction: Direction, payload: bytes,
               disposition: Disposition = Disposition.INJECTED, source_seq: int | None = None):
        """Attacker-originated frame on the given radio link."""
        self._terminal(terminal)
        direction = Direction(direction)
        if direction not in RADIO:
            raise ScenarioError("the attacker cannot reach the server link")
        ev = self._record(direction, terminal, payload, disposition, source_seq=source_seq)
        self.adversary.observe(ev)
        self._queue.append((terminal, direction, payload, ev.seq))
        self._pump()

    def replay(self, terminal: str, ref: CaptureRef, direction: Direction | None = None):
        cap = self.adversary.resolve(ref)
        self.inject(terminal, direction or cap.direction, cap.payload,
                    Disposition.REPLAYED, source_seq=cap.seq)

    def forge(self, terminal: str, direction: Direction, ref: CaptureRef,
              block_index: int, op: str, operand: bytes):
        cap, payload = self.adversary.forge(ref, block_index, op, operand)
        self.inject(terminal, direction, payload, Disposition.INJECTED, source_seq=cap.seq)

    # transport

    def _record(self, direction, link, payload, disposition=Disposition.DELIVERED,
                original=None, source_seq=None) -> ChannelEvent:
        if len(self.transcript) >= self.max_events:
            raise StepLimitExceeded(f"more than {self.max_events} channel events")
        ev = ChannelEvent(len(self.transcript), Direction(direction), link, bytes(payload),
                          Disposition(disposition), original, source_seq)
        self.transcript.append(ev)
        return ev

    def _note(self, party, event, detail=""):
        self.notes.append(Note(len(self.transcript) - 1, party, event, detail))

    def _send(self, link: str, direction: Direction, payload: bytes):
        """Honest party puts a frame on the radio; the attacker may interfere."""
        self.honest_frames += 1
        adv = self.adversary
        rule = adv.decide(direction, payload)
        action = rule.action if rule is not None else Action.PASS
        if action is Action.PASS:
            out = self._record(direction, link, payload)
        elif action is Action.BLOCK:
            adv.observe(self._record(direction, link, payload, Disposition.BLOCKED))
            return
        elif action is Action.MUTATE:
            mutated = bytearray(payload)
            if rule.offset < len(mutated):
                mutated[rule.offset] ^= rule.mask
            out = self._record(direction, link, mutated, Disposition.MODIFIED, original=payload)
        else:
            adv.observe(self._record(direction, link, payload, Disposition.BLOCKED))
            if action is Action.REPLAY:
                cap = adv.resolve(rule.capture)
                out = self._record(direction, link, cap.payload, Disposition.REPLAYED,
                                   source_seq=cap.seq)
            else:
                data = rule.payload if rule.payload is not None else adv.random_frame(rule.random_type)
                out = self._record(direction, link, data, Disposition.INJECTED)
        adv.observe(out)
        self._queue.append((link, direction, out.payload, out.seq))

    def _pump(self):
        while self._queue:
            link, direction, payload, seq = self._queue.popleft()
            if direction is Direction.V2T:
                self._terminal_receive(self.terminals[link], payload, seq)
            else:
                self._vehicle_receive(self.terminals[link], payload, seq)

    def _terminal_receive(self, t: TerminalNode, payload: bytes, seq: int):
        msg = try_decode(payload)
        if not isinstance(msg, AuthRequest):
            self._note(t.name, "dropped", "not an auth request")
            return
        if t.terminal.session is not None:
            self._note(t.name, "busy")
            return
        out = t.terminal.handle_auth_request(msg)
        if isinstance(out, Rejection):
            self._note(t.name, "rejected", out.reason)
            return
        lookup = self._record(Direction.T2S, t.name, encode(out))
        self.lookup_triggers[lookup.seq] = seq
        resp = self.registry.lookup_and_verify(out.m5, out.n_a)
        self._record(Direction.S2T, t.name, encode(resp))
        result = t.terminal.handle_lookup_response(resp)
        if isinstance(result, SessionAbort):
            self._note(t.name, "aborted", result.outcome.name)
            return
        on = self._record(Direction.ENERGY, t.name, ENERGY_ON)
        session = t.terminal.session
        self.energy_windows.append(EnergyWindow(t.name, t.vehicle, on.seq, session.t_1))
        if self.tariff_rate > 0:
            balance = self.registry.get(session.id_a).balance
            t.budget_deadline = session.t_1 + balance * 60_000 // self.tariff_rate
        self._send(t.name, Direction.T2V, encode(result))

    def _vehicle_receive(self, t: TerminalNode, payload: bytes, seq: int):
        if t.vehicle is None:
            self._note(t.name, "unheard", "no vehicle on the cable")
            return
        v = self.vehicles[t.vehicle]
        msg = try_decode(payload)
        if not isinstance(msg, ChallengeMessage):
            self._note(v.name, "dropped", "not a challenge")
            return
        if v.session.phase is not VehiclePhase.AWAITING_CHALLENGE:
            self._note(v.name, "dropped", f"unexpected challenge in {v.session.phase}")
            return
        phase = v.session.handle_challenge(msg)
        if phase is VehiclePhase.CHARGING:
            self._note(v.name, "charging", f"t_2={v.session.t_2}")
            self.accepted_challenges.append((v.name, seq))
            window = self._open_window(t.name)
            if window is not None:
                window.vehicle_confirmed = True
        else:
            self._note(v.name, "failed", v.session.failure_reason or "")

    def _open_window(self, link: str) -> EnergyWindow | None:
        for w in reversed(self.energy_windows):
            if w.link == link:
                return w if w.off_seq is None else None
        return None

    # results

    def lookups(self) -> list[tuple[int, str, LookupOutcome]]:
        out = []
        for ev in self.transcript:
            if ev.direction is Direction.S2T:
                msg = try_decode(ev.payload)
                out.append((ev.seq, ev.link, msg.outcome))
        return out

    def energy_events(self) -> list[tuple[int, str, bool]]:
        return [
            (ev.seq, ev.link, ev.payload == ENERGY_ON)
            for ev in self.transcript if ev.direction is Direction.ENERGY
        ]

    def party_verdicts(self) -> dict:
        vehicles = {}
        for name, v in self.vehicles.items():
            s = v.session
            vehicles[name] = {
                "phase": s.phase.value,
                "t_2": s.t_2,
                "t_4_duration": s.t_4_duration,
                "skew_warning": s.skew_warning,
                "failure_reason": s.failure_reason,
            }
        terminals = {
            name: {"energy_active": t.terminal.energy_active, "busy": t.terminal.session is not None}
            for name, t in self.terminals.items()
        }
        return {"vehicles": vehicles, "terminals": terminals}
