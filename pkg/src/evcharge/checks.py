"""Invariant checks evaluated over a finished simulation.

The checker is an omniscient observer: it knows every secret so it can
judge what the parties did, but it only inspects the transcript and final
party state, never influences the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .channel import RADIO, Direction, Disposition, Simulation
from .crypto import decrypt_block, verify_mac, xor_combine
from .messages import AuthRequest, ChallengeMessage, LookupOutcome, LookupRequest, try_decode
from .registry import charge_amount


@dataclass
class CheckResult:
    name: str
    passed: bool
    evidence: list[int] = field(default_factory=list)
    detail: str = ""

    def to_record(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "evidence": self.evidence, "detail": self.detail}


def secret_patterns(sim: Simulation) -> list[tuple[str, bytes]]:
    secrets = [("k_g", sim.k_g)]
    for name, v in sim.vehicles.items():
        secrets += [(f"{name}.id_a", v.session.identity.id_a), (f"{name}.k_a", v.session.identity.k_a)]
    patterns = []
    for label, raw in secrets:
        patterns.append((label, raw))
        patterns.append((label + " (hex)", raw.hex().encode()))
        patterns.append((label + " (HEX)", raw.hex().upper().encode()))
    return patterns


def check_confidentiality(sim: Simulation) -> CheckResult:
    hits, labels = [], set()
    patterns = secret_patterns(sim)
    for ev in sim.transcript:
        if ev.direction not in RADIO:
            continue
        for label, pat in patterns:
            blobs = [ev.payload] + ([ev.original] if ev.original is not None else [])
            if any(pat in blob for blob in blobs):
                hits.append(ev.seq)
                labels.add(label)
    return CheckResult("confidentiality", not hits, sorted(set(hits)), ", ".join(sorted(labels)))


def check_energy_after_success(sim: Simulation) -> CheckResult:
    bad = []
    last_lookup: dict[str, LookupOutcome | None] = {}
    for ev in sim.transcript:
        if ev.direction is Direction.S2T:
            last_lookup[ev.link] = try_decode(ev.payload).outcome
        elif ev.direction is Direction.ENERGY and ev.payload == b"\x01":
            if last_lookup.get(ev.link) is not LookupOutcome.SUCCESS:
                bad.append(ev.seq)
            # each success licenses one activation
            last_lookup[ev.link] = None
    return CheckResult("energy-after-success", not bad, bad)


def check_transcript_complete(sim: Simulation) -> CheckResult:
    bad = [ev.seq for i, ev in enumerate(sim.transcript) if ev.seq != i]
    bad += [
        ev.seq for ev in sim.transcript
        if ev.disposition is Disposition.MODIFIED and ev.original is None
    ]
    honest = sum(
        1 for ev in sim.transcript
        if ev.direction in RADIO and ev.disposition in
        (Disposition.DELIVERED, Disposition.BLOCKED, Disposition.MODIFIED)
    )
    detail = f"{honest} recorded / {sim.honest_frames} emitted"
    return CheckResult("transcript-complete", not bad and honest == sim.honest_frames, bad, detail)


def check_mac_gate(sim: Simulation) -> CheckResult:
    """Every lookup the server saw came from a MAC-valid auth request."""
    bad = []
    for ev in sim.transcript:
        if ev.direction is not Direction.T2S:
            continue
        lookup = try_decode(ev.payload)
        if not isinstance(lookup, LookupRequest):
            continue
        frame = sim.transcript[sim.lookup_triggers[ev.seq]]
        req = try_decode(frame.payload)
        ok = (
            isinstance(req, AuthRequest)
            and verify_mac(req.mac_input(), req.mac, sim.k_g)
            and xor_combine(decrypt_block(req.m3, sim.k_g), req.n_a) == lookup.m5
        )
        if not ok:
            bad.append(ev.seq)
    return CheckResult("mac-gate", not bad, bad)


def check_charging_gate(sim: Simulation) -> CheckResult:
    """No vehicle started charging on a challenge with a bad MAC."""
    bad = []
    for _, seq in sim.accepted_challenges:
        msg = try_decode(sim.transcript[seq].payload)
        if not (isinstance(msg, ChallengeMessage)
                and verify_mac(msg.mac_input(), msg.mac, sim.k_g)):
            bad.append(seq)
    return CheckResult("charging-gate", not bad, bad)


def check_billing(sim: Simulation) -> CheckResult:
    bad = [
        i for i, inv in enumerate(sim.invoices)
        if inv.duration_ms != inv.t_end - inv.t_start
        or inv.amount != charge_amount(inv.duration_ms, sim.tariff_rate)
    ]
    return CheckResult("billing-consistent", not bad, bad, "evidence lists invoice indices")


BUILTIN_CHECKS = (
    check_confidentiality,
    check_energy_after_success,
    check_transcript_complete,
    check_mac_gate,
    check_charging_gate,
    check_billing,
)


def run_builtin_checks(sim: Simulation) -> list[CheckResult]:
    return [check(sim) for check in BUILTIN_CHECKS]
