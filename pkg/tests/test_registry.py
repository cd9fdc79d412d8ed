import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import ID_A, K_A
from evcharge.errors import DuplicateVehicle, InvalidReport, ScenarioError, UnknownVehicle
from evcharge.messages import LookupOutcome, SessionReport
from evcharge.registry import (
    NotifyChannel,
    Registry,
    charge_amount,
    parse_invoice_line,
    parse_vehicle_line,
)

PSEUDONYM = oracles.aes_encrypt(ID_A, K_A)


def test_register_computes_pseudonym(registry):
    rec = registry.get(ID_A)
    assert rec.pseudonym == PSEUDONYM
    assert rec.last_n_a is None


def test_duplicate_registration(registry):
    with pytest.raises(DuplicateVehicle) as err:
        registry.register_vehicle(ID_A, K_A)
    assert PSEUDONYM.hex() in str(err.value)


def test_shared_key_distinct_ids():
    reg = Registry()
    a = reg.register_vehicle(bytes([1]) * 16, K_A)
    b = reg.register_vehicle(bytes([4]) * 16, K_A)
    assert a.pseudonym != b.pseudonym
    assert a.pseudonym == oracles.aes_encrypt(bytes([1]) * 16, K_A)
    assert b.pseudonym == oracles.aes_encrypt(bytes([4]) * 16, K_A)


def test_unknown_pseudonym(registry):
    assert registry.lookup_and_verify(bytes(16), bytes(16)).outcome is LookupOutcome.NOT_FOUND


def test_replay_rule(registry):
    n1, n2 = bytes([0xAA]) * 16, bytes([0xBB]) * 16
    first = registry.lookup_and_verify(PSEUDONYM, n1)
    assert first.outcome is LookupOutcome.SUCCESS
    assert (first.id_a, first.k_a) == (ID_A, K_A)
    assert registry.lookup_and_verify(PSEUDONYM, n1).outcome is LookupOutcome.REPLAY_DETECTED
    assert registry.get(ID_A).last_n_a == n1
    assert registry.lookup_and_verify(PSEUDONYM, n2).outcome is LookupOutcome.SUCCESS
    assert registry.get(ID_A).last_n_a == n2


def test_single_nonce_memory_accepts_older_replay(registry):
    n1, n2 = bytes([1]) * 16, bytes([2]) * 16
    registry.lookup_and_verify(PSEUDONYM, n1)
    registry.lookup_and_verify(PSEUDONYM, n2)
    # the known limitation of remembering only the last nonce
    assert registry.lookup_and_verify(PSEUDONYM, n1).outcome is LookupOutcome.SUCCESS


def test_strict_mode_refuses_any_old_nonce():
    reg = Registry(strict_replay=True)
    reg.register_vehicle(ID_A, K_A)
    n1, n2 = bytes([1]) * 16, bytes([2]) * 16
    reg.lookup_and_verify(PSEUDONYM, n1)
    reg.lookup_and_verify(PSEUDONYM, n2)
    assert reg.lookup_and_verify(PSEUDONYM, n1).outcome is LookupOutcome.REPLAY_DETECTED


@settings(max_examples=100)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_never_two_successes_in_a_row_with_same_nonce(schedule):
    reg = Registry()
    reg.register_vehicle(ID_A, K_A)
    previous = None
    for pick in schedule:
        n_a = bytes([pick]) * 16
        out = reg.lookup_and_verify(PSEUDONYM, n_a).outcome
        if out is LookupOutcome.SUCCESS:
            assert previous != n_a
            previous = n_a
        else:
            assert previous == n_a


@settings(max_examples=100)
@given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
def test_success_pseudonym_consistency(id_a, k_a):
    reg = Registry()
    rec = reg.register_vehicle(id_a, k_a)
    out = reg.lookup_and_verify(rec.pseudonym, bytes(16))
    assert oracles.aes_encrypt(out.id_a, out.k_a) == rec.pseudonym


@pytest.mark.parametrize(
    "duration,rate,amount",
    [(60_000, 5, 5), (90_000, 5, 8), (0, 5, 0), (1, 5, 1), (120_000, 0, 0)],
)
def test_charge_amount(duration, rate, amount):
    assert charge_amount(duration, rate) == amount


def test_bill_session(registry):
    inv = registry.bill_session(SessionReport(ID_A, 1_000, 91_000), tariff_rate=5)
    assert (inv.duration_ms, inv.amount, inv.underfunded) == (90_000, 8, False)
    assert registry.get(ID_A).balance == 992
    assert inv.notification.channel is NotifyChannel.SMS
    assert inv.notification.contact == "+905550000001"
    assert "charged 8" in inv.notification.text
    assert registry.invoices == [inv]


def test_bill_zero_duration(registry):
    inv = registry.bill_session(SessionReport(ID_A, 5, 5), tariff_rate=5)
    assert inv.amount == 0 and inv.duration_ms == 0


def test_bill_underfunded_saturates():
    reg = Registry()
    reg.register_vehicle(ID_A, K_A, balance=3)
    inv = reg.bill_session(SessionReport(ID_A, 0, 60_000), tariff_rate=5)
    assert inv.amount == 5 and inv.underfunded
    assert reg.get(ID_A).balance == 0


def test_bill_errors(registry):
    with pytest.raises(UnknownVehicle):
        registry.bill_session(SessionReport(bytes(16), 0, 1), 5)

    class Backwards:
        id_a, t_start, t_end = ID_A, 10, 5

    with pytest.raises(InvalidReport):
        registry.bill_session(Backwards(), 5)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 3_600_000), max_size=20), st.integers(1, 50))
def test_billing_conservation(durations, rate):
    initial = sum(charge_amount(d, rate) for d in durations) + 17
    reg = Registry()
    reg.register_vehicle(ID_A, K_A, balance=initial)
    t = 0
    for d in durations:
        reg.bill_session(SessionReport(ID_A, t, t + d), rate)
        t += d
    assert sum(i.amount for i in reg.invoices) + reg.get(ID_A).balance == initial


def test_registry_file_round_trip(tmp_path, registry):
    registry.lookup_and_verify(PSEUDONYM, bytes([7]) * 16)
    registry.register_vehicle(bytes([5]) * 16, K_A, 50, "a@b.example", "email")
    path = tmp_path / "reg.txt"
    registry.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == (
        f"vehicle {ID_A.hex()} {K_A.hex()} {PSEUDONYM.hex()} {'07' * 16} 1000 sms +905550000001"
    )
    assert lines[1].endswith(" - 50 email a@b.example")
    loaded = Registry.load(path)
    assert len(loaded) == 2
    assert loaded.get(ID_A).last_n_a == bytes([7]) * 16
    assert loaded.lookup_and_verify(PSEUDONYM, bytes([7]) * 16).outcome is LookupOutcome.REPLAY_DETECTED


def test_registry_autosaves_on_mutation(tmp_path):
    path, inv_path = tmp_path / "reg.txt", tmp_path / "inv.txt"
    reg = Registry(path=path, invoice_path=inv_path)
    reg.register_vehicle(ID_A, K_A, 100)
    assert path.read_text().count("vehicle ") == 1
    reg.lookup_and_verify(PSEUDONYM, bytes([9]) * 16)
    assert ("09" * 16) in path.read_text()
    reg.bill_session(SessionReport(ID_A, 0, 60_000), 5)
    assert " 95 " in path.read_text()
    line = inv_path.read_text().strip()
    assert line == f"invoice {ID_A.hex()} 0 60000 60000 5 sms "[:-1]
    inv = parse_invoice_line(line)
    assert (inv.duration_ms, inv.amount) == (60_000, 5)
    assert not list(tmp_path.glob("*.tmp"))


def test_registry_file_rejects_bad_pseudonym():
    line = f"vehicle {ID_A.hex()} {K_A.hex()} {'00' * 16} - 0 sms x"
    with pytest.raises(ScenarioError, match="pseudonym"):
        parse_vehicle_line(line, 3)


def test_registry_file_rejects_duplicates(tmp_path, registry):
    path = tmp_path / "reg.txt"
    registry.save(path)
    path.write_text(path.read_text() * 2)
    with pytest.raises(ScenarioError, match="line 2"):
        Registry.load(path)


def test_invoice_line_checks_duration():
    with pytest.raises(ScenarioError):
        parse_invoice_line(f"invoice {ID_A.hex()} 0 10 11 1 sms x")


def test_concurrent_lookups_distinct_vehicles():
    reg = Registry()
    rng = random.Random(9)
    vehicles = [(rng.randbytes(16), rng.randbytes(16)) for _ in range(16)]
    records = [reg.register_vehicle(i, k) for i, k in vehicles]
    results = {r.pseudonym: [] for r in records}

    def worker(rec, seed):
        local = random.Random(seed)
        for _ in range(200):
            n = local.randbytes(16)
            results[rec.pseudonym].append((n, reg.lookup_and_verify(rec.pseudonym, n)))

    threads = [threading.Thread(target=worker, args=(r, i)) for i, r in enumerate(records)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for rec in records:
        outs = results[rec.pseudonym]
        assert all(resp.outcome is LookupOutcome.SUCCESS and resp.id_a == rec.id_a for _, resp in outs)
        assert rec.last_n_a == outs[-1][0]


def test_concurrent_same_nonce_admits_exactly_one():
    reg = Registry()
    rec = reg.register_vehicle(ID_A, K_A)
    barrier = threading.Barrier(8)
    outcomes = []

    def worker():
        barrier.wait()
        outcomes.append(reg.lookup_and_verify(rec.pseudonym, bytes([3]) * 16).outcome)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert outcomes.count(LookupOutcome.SUCCESS) == 1
    assert outcomes.count(LookupOutcome.REPLAY_DETECTED) == 7
