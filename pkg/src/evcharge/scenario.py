"""Scenario files: provisioning, attacker rules, a step schedule and the
expected outcome, in a line-oriented text format.

Example::

    name honest
    seed 7
    tariff 5
    group-key 03030303030303030303030303030303
    vehicle car1 id=0101... key=0202... balance=1000 channel=sms contact=+905550000000
    terminal T1 clock=1700000000000
    step plug car1 T1
    step auth car1
    step advance all 60000
    step stop T1
    expect phase car1 Completed
    expect invoices 1

See README.md for the full directive list.
"""

from __future__ import annotations

import hashlib
import re
import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .channel import (
    Action,
    Adversary,
    CaptureRef,
    Direction,
    Rule,
    Simulation,
    StepLimitExceeded,
    transcript_text,
)
from .checks import CheckResult, run_builtin_checks
from .crypto import check_block, derive_seed
from .errors import DuplicateVehicle, ScenarioError
from .messages import LookupOutcome, MessageType
from .registry import NotifyChannel, Registry
from .vehicle import VehicleIdentity, VehiclePhase

_COMMENT = re.compile(r"(^|\s)#.*$")

TYPE_NAMES = {
    "auth": MessageType.AUTH_REQUEST,
    "challenge": MessageType.CHALLENGE,
    "lookup": MessageType.LOOKUP_REQUEST,
    "response": MessageType.LOOKUP_RESPONSE,
    "report": MessageType.SESSION_REPORT,
    "any": None,
}
DIRECTION_NAMES = {"v2t": Direction.V2T, "t2v": Direction.T2V}

STEP_ARITY = {
    "plug": (2, 2), "unplug": (1, 1), "auth": (1, 1), "advance": (2, 2),
    "stop": (1, 1), "reset": (1, 1), "replay": (2, 3), "inject": (3, 3), "forge": (6, 6),
}
EXPECT_ARITY = {
    "phase": 2, "lookups": 2, "energy-on": 1, "invoices": 1, "server-contacts": 1,
    "rejected": 1, "duration": 2, "exposure": 1, "skew": 2, "t2": 2, "invoice-duration": 2,
    "invoice-amount": 2, "underfunded": 1,
}


@dataclass
class VehicleSpec:
    name: str
    id_a: bytes
    k_a: bytes | None
    balance: int = 0
    channel: NotifyChannel = NotifyChannel.SMS
    contact: str = ""
    clock: int = 0
    register: bool = True


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 1
    tariff: int = 0
    k_g: bytes | None = None
    max_events: int = 10_000
    strict_replay: bool = False
    registry_path: Path | None = None
    vehicles: list[VehicleSpec] = field(default_factory=list)
    terminals: list[tuple[str, int]] = field(default_factory=list)
    rules: list[Rule] = field(default_factory=list)
    steps: list[tuple[int, list[str]]] = field(default_factory=list)
    expectations: list[tuple[int, list[str]]] = field(default_factory=list)


def _hex_block(text: str, what: str, lineno: int) -> bytes:
    try:
        return check_block(bytes.fromhex(text), what)
    except ValueError as exc:
        raise ScenarioError(f"bad {what}: {exc}", lineno) from None


def _int(text: str, what: str, lineno: int) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise ScenarioError(f"bad {what}: {text!r}", lineno) from None
    if value < 0:
        raise ScenarioError(f"{what} must be non-negative", lineno)
    return value


def _msg_type(text: str, lineno: int) -> MessageType | None:
    if text in TYPE_NAMES:
        return TYPE_NAMES[text]
    raise ScenarioError(f"unknown message type {text!r}", lineno)


def _direction(text: str, lineno: int) -> Direction:
    try:
        return DIRECTION_NAMES[text]
    except KeyError:
        raise ScenarioError(f"direction must be v2t or t2v, got {text!r}", lineno) from None


def parse_capture_ref(text: str, lineno: int = 0) -> CaptureRef:
    kind, sep, index = text.partition("#")
    if not sep:
        raise ScenarioError(f"capture reference must look like auth#0, got {text!r}", lineno)
    return CaptureRef(_msg_type(kind, lineno), _int(index, "capture index", lineno))


def _payload_arg(text: str, lineno: int) -> tuple[bytes | None, MessageType | None]:
    if text.startswith("random:"):
        mtype = _msg_type(text[len("random:"):], lineno)
        if mtype is None:
            raise ScenarioError("random frames need a concrete type", lineno)
        return None, mtype
    try:
        return bytes.fromhex(text), None
    except ValueError:
        raise ScenarioError(f"bad hex payload {text!r}", lineno) from None


def _kv(args: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for a in args:
        k, sep, v = a.partition("=")
        if not sep:
            raise ScenarioError(f"expected key=value, got {a!r}", lineno)
        out[k] = v
    return out


def _parse_rule(args: list[str], lineno: int) -> Rule:
    if len(args) < 4:
        raise ScenarioError("rule needs: <v2t|t2v> <type> <occurrence|*> <action> [args]", lineno)
    direction = _direction(args[0], lineno)
    mtype = _msg_type(args[1], lineno)
    occurrence = None if args[2] == "*" else _int(args[2], "occurrence", lineno)
    try:
        action = Action(args[3])
    except ValueError:
        raise ScenarioError(f"unknown rule action {args[3]!r}", lineno) from None
    rest = args[4:]
    expected = {Action.PASS: 0, Action.BLOCK: 0, Action.MUTATE: 2,
                Action.REPLAY: 1, Action.INJECT: 1}[action]
    if len(rest) != expected:
        raise ScenarioError(f"{action.value} takes {expected} argument(s)", lineno)
    kw = {}
    if action is Action.MUTATE:
        kw["offset"] = _int(rest[0], "offset", lineno)
        kw["mask"] = _int("0x" + rest[1], "mask", lineno)
    elif action is Action.REPLAY:
        kw["capture"] = parse_capture_ref(rest[0], lineno)
    elif action is Action.INJECT:
        kw["payload"], kw["random_type"] = _payload_arg(rest[0], lineno)
    try:
        return Rule(direction, mtype, occurrence, action, **kw)
    except ValueError as exc:
        raise ScenarioError(str(exc), lineno) from None


def parse_scenario(text: str, base_dir: Path | None = None) -> Scenario:
    sc = Scenario()
    for lineno, raw in enumerate(text.splitlines(), 1):
        # '#' only opens a comment at a token boundary; auth#0 is a capture ref
        line = _COMMENT.sub("", raw)
        try:
            toks = shlex.split(line)
        except ValueError as exc:
            raise ScenarioError(str(exc), lineno) from None
        if not toks:
            continue
        head, args = toks[0], toks[1:]

        if head == "name" and len(args) == 1:
            sc.name = args[0]
        elif head == "seed" and len(args) == 1:
            sc.seed = _int(args[0], "seed", lineno)
        elif head == "tariff" and len(args) == 1:
            sc.tariff = _int(args[0], "tariff", lineno)
        elif head == "max-events" and len(args) == 1:
            sc.max_events = _int(args[0], "max-events", lineno)
        elif head == "strict-replay" and not args:
            sc.strict_replay = True
        elif head == "group-key" and len(args) == 1:
            sc.k_g = _hex_block(args[0], "group key", lineno)
        elif head == "registry" and len(args) == 1:
            sc.registry_path = (base_dir or Path.cwd()) / args[0]
        elif head == "vehicle" and args:
            kv = _kv(args[1:], lineno)
            unknown = set(kv) - {"id", "key", "balance", "channel", "contact", "clock", "register"}
            if unknown or "id" not in kv:
                raise ScenarioError(f"vehicle needs id=; unknown fields {sorted(unknown)}", lineno)
            try:
                channel = NotifyChannel(kv.get("channel", "sms"))
            except ValueError:
                raise ScenarioError(f"bad channel {kv['channel']!r}", lineno) from None
            sc.vehicles.append(VehicleSpec(
                name=args[0],
                id_a=_hex_block(kv["id"], "vehicle id", lineno),
                k_a=_hex_block(kv["key"], "vehicle key", lineno) if "key" in kv else None,
                balance=_int(kv.get("balance", "0"), "balance", lineno),
                channel=channel,
                contact=kv.get("contact", ""),
                clock=_int(kv.get("clock", "0"), "clock", lineno),
                register=kv.get("register", "yes") != "no",
            ))
        elif head == "terminal" and args:
            kv = _kv(args[1:], lineno)
            if set(kv) - {"clock"}:
                raise ScenarioError("terminal only takes clock=", lineno)
            sc.terminals.append((args[0], _int(kv.get("clock", "0"), "clock", lineno)))
        elif head == "rule":
            sc.rules.append(_parse_rule(args, lineno))
        elif head == "step" and args:
            lo, hi = STEP_ARITY.get(args[0], (None, None))
            if lo is None:
                raise ScenarioError(f"unknown step {args[0]!r}", lineno)
            if not lo <= len(args) - 1 <= hi:
                raise ScenarioError(f"step {args[0]} takes {lo}-{hi} arguments", lineno)
            sc.steps.append((lineno, args))
        elif head == "expect" and args:
            if EXPECT_ARITY.get(args[0]) != len(args) - 1:
                raise ScenarioError(f"bad expectation {' '.join(args)!r}", lineno)
            sc.expectations.append((lineno, args))
        else:
            raise ScenarioError(f"unrecognised directive {line.strip()!r}", lineno)
    if sc.k_g is None:
        raise ScenarioError("scenario has no group-key")
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    sc = parse_scenario(path.read_text(), base_dir=path.parent)
    if sc.name == "scenario":
        sc.name = path.stem
    return sc


def bundled_scenarios() -> list[Path]:
    root = resources.files("evcharge") / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".scn"))


# -- running -----------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    sim: Simulation
    checks: list[CheckResult]
    deadlock: bool = False
    files: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.deadlock and all(c.passed for c in self.checks)

    @property
    def transcript(self) -> str:
        return transcript_text(self.sim.transcript)

    def transcript_digest(self) -> str:
        return hashlib.sha256(self.transcript.encode()).hexdigest()

    def to_report(self) -> dict:
        sim = self.sim
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "tariff": sim.tariff_rate,
            "status": "pass" if self.passed else "fail",
            "deadlock_suspected": self.deadlock,
            "verdicts": {
                **sim.party_verdicts(),
                "lookups": [
                    {"seq": s, "link": link, "outcome": o.name} for s, link, o in sim.lookups()
                ],
                "energy_windows": [w.to_record() for w in sim.energy_windows],
                "invoices": [
                    {"id_a": inv.id_a.hex(), "t_start": inv.t_start, "t_end": inv.t_end,
                     "duration_ms": inv.duration_ms, "amount": inv.amount,
                     "underfunded": inv.underfunded, "notification": inv.notification.text}
                    for inv in sim.invoices
                ],
                "notes": [n.to_record() for n in sim.notes],
            },
            "checks": [c.to_record() for c in self.checks],
            "transcript_sha256": self.transcript_digest(),
            "files": dict(self.files),
        }


def build_simulation(
    sc: Scenario,
    seed: int | None = None,
    tariff: int | None = None,
    registry: Registry | None = None,
    verify_macs: bool = True,
    strict_replay: bool | None = None,
) -> Simulation:
    seed = sc.seed if seed is None else seed
    strict = sc.strict_replay if strict_replay is None else strict_replay
    if registry is None:
        registry = (
            Registry.load(sc.registry_path, strict_replay=strict)
            if sc.registry_path else Registry(strict_replay=strict)
        )
    adversary = Adversary(sc.rules, prng=derive_seed(seed, "adversary"))
    sim = Simulation(
        registry, sc.k_g, adversary,
        tariff_rate=sc.tariff if tariff is None else tariff,
        verify_macs=verify_macs, max_events=sc.max_events,
    )
    for spec in sc.vehicles:
        k_a = spec.k_a
        if k_a is None:
            k_a = _registered_key(registry, spec)
        elif spec.register:
            try:
                registry.register_vehicle(spec.id_a, k_a, spec.balance, spec.contact, spec.channel)
            except DuplicateVehicle as exc:
                raise ScenarioError(f"vehicle {spec.name}: {exc}") from None
        sim.add_vehicle(spec.name, VehicleIdentity(spec.id_a, k_a, sc.k_g),
                        derive_seed(seed, "vehicle:" + spec.name), spec.clock)
    for name, clock in sc.terminals:
        sim.add_terminal(name, derive_seed(seed, "terminal:" + name), clock)
    return sim


def _registered_key(registry: Registry, spec: VehicleSpec) -> bytes:
    for record in registry:
        if record.id_a == spec.id_a:
            return record.k_a
    raise ScenarioError(f"vehicle {spec.name} has no key= and is not in the registry")


def apply_step(sim: Simulation, args: list[str], lineno: int = 0):
    op, a = args[0], args[1:]
    if op == "plug":
        sim.plug(a[0], a[1])
    elif op == "unplug":
        sim.unplug(a[0])
    elif op == "auth":
        sim.auth(a[0])
    elif op == "advance":
        sim.advance(a[0].split(","), _int(a[1], "milliseconds", lineno))
    elif op == "stop":
        sim.stop(a[0])
    elif op == "reset":
        sim.reset(a[0])
    elif op == "replay":
        direction = _direction(a[2], lineno) if len(a) == 3 else None
        sim.replay(a[0], parse_capture_ref(a[1], lineno), direction)
    elif op == "inject":
        direction = _direction(a[1], lineno)
        payload, mtype = _payload_arg(a[2], lineno)
        if payload is None:
            payload = sim.adversary.random_frame(mtype)
        sim.inject(a[0], direction, payload)
    elif op == "forge":
        direction = _direction(a[1], lineno)
        ref = parse_capture_ref(a[2], lineno)
        block = _int(a[3], "block index", lineno)
        if a[4] not in ("enc", "dec", "xor"):
            raise ScenarioError(f"forge op must be enc, dec or xor, got {a[4]!r}", lineno)
        sim.forge(a[0], direction, ref, block, a[4], _hex_block(a[5], "forge operand", lineno))


def evaluate_expectation(sim: Simulation, args: list[str], lineno: int) -> CheckResult:
    kind, a = args[0], args[1:]
    name = "expect " + " ".join(args)
    notes = sim.notes

    def count(value: int, want: str, evidence=()):
        target = _int(want, kind, lineno)
        return CheckResult(name, value == target, list(evidence), f"observed {value}")

    if kind == "phase":
        node = sim._vehicle(a[0])
        try:
            want = VehiclePhase(a[1])
        except ValueError:
            raise ScenarioError(f"unknown phase {a[1]!r}", lineno) from None
        got = node.session.phase
        return CheckResult(name, got is want, [], f"observed {got}")
    if kind == "lookups":
        try:
            outcome = LookupOutcome[a[0]]
        except KeyError:
            raise ScenarioError(f"unknown lookup outcome {a[0]!r}", lineno) from None
        seqs = [s for s, _, o in sim.lookups() if o is outcome]
        return count(len(seqs), a[1], seqs)
    if kind == "energy-on":
        seqs = [s for s, _, on in sim.energy_events() if on]
        return count(len(seqs), a[0], seqs)
    if kind == "invoices":
        return count(len(sim.invoices), a[0])
    if kind == "server-contacts":
        return count(len(sim.lookup_triggers), a[0], sorted(sim.lookup_triggers))
    if kind == "rejected":
        seqs = [n.seq for n in notes if n.event == "rejected"]
        return count(len(seqs), a[0], seqs)
    if kind == "exposure":
        seqs = [w.on_seq for w in sim.energy_windows if not w.vehicle_confirmed]
        return count(len(seqs), a[0], seqs)
    if kind == "underfunded":
        return count(sum(inv.underfunded for inv in sim.invoices), a[0])
    if kind == "duration":
        got = sim._vehicle(a[0]).session.t_4_duration
        return CheckResult(name, got == _int(a[1], "duration", lineno), [], f"observed {got}")
    if kind == "t2":
        got = sim._vehicle(a[0]).session.t_2
        return CheckResult(name, got == _int(a[1], "t2", lineno), [], f"observed {got}")
    if kind == "skew":
        got = sim._vehicle(a[0]).session.skew_warning
        return CheckResult(name, got == (a[1] == "yes"), [], f"observed {got}")
    # invoice-duration / invoice-amount: <index> <value>
    idx = _int(a[0], "invoice index", lineno)
    if idx >= len(sim.invoices):
        return CheckResult(name, False, [], f"only {len(sim.invoices)} invoice(s)")
    inv = sim.invoices[idx]
    got = inv.duration_ms if kind == "invoice-duration" else inv.amount
    return CheckResult(name, got == _int(a[1], kind, lineno), [], f"observed {got}")


def run_scenario(
    sc: Scenario,
    seed: int | None = None,
    tariff: int | None = None,
    registry: Registry | None = None,
    verify_macs: bool = True,
    strict_replay: bool | None = None,
) -> RunResult:
    """Execute the schedule to the end (or the event limit) and judge it."""
    seed = sc.seed if seed is None else seed
    sim = build_simulation(sc, seed, tariff, registry, verify_macs, strict_replay)
    deadlock = False
    try:
        for lineno, args in sc.steps:
            try:
                apply_step(sim, args, lineno)
            except ScenarioError as exc:
                if exc.line is None:
                    raise ScenarioError(str(exc), lineno) from None
                raise
    except StepLimitExceeded:
        deadlock = True
    checks = run_builtin_checks(sim)
    checks += [evaluate_expectation(sim, args, lineno) for lineno, args in sc.expectations]
    if deadlock:
        checks.append(CheckResult("deadlock-suspected", False, [], "event limit reached"))
    return RunResult(sc, seed, sim, checks, deadlock)
