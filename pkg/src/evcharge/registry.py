"""Registry server: pseudonym lookup with replay detection, billing, and
the line-oriented registry/invoice file formats."""

from __future__ import annotations

import enum
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import check_block, encrypt_block
from .errors import DuplicateVehicle, InvalidReport, ScenarioError, UnknownVehicle
from .messages import LookupOutcome, LookupResponse, SessionReport

logger = logging.getLogger(__name__)

MINUTE_MS = 60_000


class NotifyChannel(str, enum.Enum):
    SMS = "sms"
    EMAIL = "email"


@dataclass
class VehicleRecord:
    id_a: bytes
    k_a: bytes
    pseudonym: bytes
    last_n_a: bytes | None = None
    balance: int = 0
    owner_contact: str = ""
    notify_channel: NotifyChannel = NotifyChannel.SMS
    seen_nonces: set[bytes] = field(default_factory=set, repr=False)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def to_line(self) -> str:
        last = self.last_n_a.hex() if self.last_n_a is not None else "-"
        return (
            f"vehicle {self.id_a.hex()} {self.k_a.hex()} {self.pseudonym.hex()} "
            f"{last} {self.balance} {self.notify_channel.value} {self.owner_contact}"
        )


@dataclass(frozen=True)
class Notification:
    channel: NotifyChannel
    contact: str
    text: str


@dataclass(frozen=True)
class Invoice:
    id_a: bytes
    t_start: int
    t_end: int
    duration_ms: int
    amount: int
    notification: Notification
    underfunded: bool = False

    def to_line(self) -> str:
        return (
            f"invoice {self.id_a.hex()} {self.t_start} {self.t_end} {self.duration_ms} "
            f"{self.amount} {self.notification.channel.value} {self.notification.contact}"
        )


def charge_amount(duration_ms: int, tariff_rate: int) -> int:
    """Per-minute tariff, rounded up to the next minor currency unit."""
    return -(-duration_ms * tariff_rate // MINUTE_MS)


def _render_notice(record: VehicleRecord, duration_ms: int, amount: int) -> str:
    minutes, rem = divmod(duration_ms, MINUTE_MS)
    return (
        f"Charging session finished: {minutes} min {rem // 1000} s, "
        f"charged {amount}, remaining balance {record.balance}"
    )


class Registry:
    """Server-side vehicle database.

    Safe to share between terminals running on different threads: the
    nonce check-then-update and the balance deduction are atomic per record.

    With ``strict_replay`` every nonce ever seen for a vehicle is refused,
    not only the most recent one.
    """

    def __init__(self, strict_replay: bool = False, path=None, invoice_path=None):
        self.strict_replay = strict_replay
        # when set, every mutation rewrites the corresponding file
        self.path = path
        self.invoice_path = invoice_path
        self._by_pseudonym: dict[bytes, VehicleRecord] = {}
        self._by_id: dict[bytes, VehicleRecord] = {}
        self._index_lock = threading.Lock()
        self._invoice_lock = threading.Lock()
        self.invoices: list[Invoice] = []

    def __len__(self):
        return len(self._by_pseudonym)

    def __iter__(self):
        return iter(list(self._by_pseudonym.values()))

    def register_vehicle(
        self,
        id_a: bytes,
        k_a: bytes,
        balance: int = 0,
        owner_contact: str = "",
        notify_channel: NotifyChannel | str = NotifyChannel.SMS,
    ) -> VehicleRecord:
        check_block(id_a, "id_a")
        check_block(k_a, "k_a")
        if balance < 0:
            raise ValueError("balance must be non-negative")
        record = VehicleRecord(
            id_a=id_a,
            k_a=k_a,
            pseudonym=encrypt_block(id_a, k_a),
            balance=balance,
            owner_contact=owner_contact,
            notify_channel=NotifyChannel(notify_channel),
        )
        self._insert(record)
        self._persist()
        return record

    def _insert(self, record: VehicleRecord):
        with self._index_lock:
            if record.pseudonym in self._by_pseudonym:
                raise DuplicateVehicle(record.pseudonym)
            if record.id_a in self._by_id:
                # billing resolves records by identity
                raise DuplicateVehicle(record.pseudonym)
            self._by_pseudonym[record.pseudonym] = record
            self._by_id[record.id_a] = record

    def get(self, id_a: bytes) -> VehicleRecord:
        try:
            return self._by_id[id_a]
        except KeyError:
            raise UnknownVehicle(f"no vehicle {id_a.hex()}") from None

    def lookup_and_verify(self, m5: bytes, n_a: bytes) -> LookupResponse:
        record = self._by_pseudonym.get(m5)
        if record is None:
            return LookupResponse(LookupOutcome.NOT_FOUND)
        with record.lock:
            replayed = record.last_n_a == n_a or (
                self.strict_replay and n_a in record.seen_nonces
            )
            if replayed:
                logger.warning("replayed nonce %s for %s", n_a.hex(), m5.hex())
                return LookupResponse(LookupOutcome.REPLAY_DETECTED)
            record.last_n_a = n_a
            if self.strict_replay:
                record.seen_nonces.add(n_a)
        self._persist()
        return LookupResponse.success(record.id_a, record.k_a)

    def bill_session(self, report: SessionReport, tariff_rate: int) -> Invoice:
        if report.t_end < report.t_start:
            raise InvalidReport("session ends before it starts")
        if tariff_rate < 0:
            raise ValueError("tariff rate must be non-negative")
        record = self.get(report.id_a)
        duration = report.t_end - report.t_start
        amount = charge_amount(duration, tariff_rate)
        with record.lock:
            underfunded = amount > record.balance
            record.balance = max(0, record.balance - amount)
            text = _render_notice(record, duration, amount)
        notice = Notification(record.notify_channel, record.owner_contact, text)
        invoice = Invoice(
            report.id_a, report.t_start, report.t_end, duration, amount, notice, underfunded
        )
        with self._invoice_lock:
            self.invoices.append(invoice)
        self._persist()
        if self.invoice_path is not None:
            self.save_invoices(self.invoice_path)
        return invoice

    # persistence

    def _persist(self):
        if self.path is not None:
            self.save(self.path)

    def save(self, path: str | os.PathLike):
        with self._index_lock:
            lines = [r.to_line() for r in self._by_pseudonym.values()]
        _atomic_write(path, lines)

    def save_invoices(self, path: str | os.PathLike):
        with self._invoice_lock:
            lines = [inv.to_line() for inv in self.invoices]
        _atomic_write(path, lines)

    @classmethod
    def load(cls, path: str | os.PathLike, strict_replay: bool = False) -> "Registry":
        reg = cls(strict_replay=strict_replay)
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            record = parse_vehicle_line(line, lineno)
            if record.last_n_a is not None:
                record.seen_nonces.add(record.last_n_a)
            try:
                reg._insert(record)
            except DuplicateVehicle as exc:
                raise ScenarioError(str(exc), lineno) from None
        return reg


def parse_vehicle_line(line: str, lineno: int | None = None) -> VehicleRecord:
    parts = line.split(maxsplit=7)
    if len(parts) < 7 or parts[0] != "vehicle":
        raise ScenarioError(f"expected a 'vehicle' record, got {line!r}", lineno)
    contact = parts[7] if len(parts) == 8 else ""
    try:
        id_a = check_block(bytes.fromhex(parts[1]), "id_a")
        k_a = check_block(bytes.fromhex(parts[2]), "k_a")
        pseudonym = check_block(bytes.fromhex(parts[3]), "pseudonym")
        last = None if parts[4] == "-" else check_block(bytes.fromhex(parts[4]), "last_n_a")
        balance = int(parts[5])
        channel = NotifyChannel(parts[6])
    except ValueError as exc:
        raise ScenarioError(str(exc), lineno) from None
    if pseudonym != encrypt_block(id_a, k_a):
        raise ScenarioError(f"pseudonym {parts[3]} does not match id/key", lineno)
    if balance < 0:
        raise ScenarioError("balance must be non-negative", lineno)
    return VehicleRecord(id_a, k_a, pseudonym, last, balance, contact, channel)


def _atomic_write(path, lines: list[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("".join(line + "\n" for line in lines))
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def parse_invoice_line(line: str, lineno: int | None = None) -> Invoice:
    """Read back one ``invoice`` line; the rendered notice text is not stored."""
    parts = line.split(maxsplit=7)
    if len(parts) < 7 or parts[0] != "invoice":
        raise ScenarioError(f"expected an 'invoice' record, got {line!r}", lineno)
    try:
        id_a = check_block(bytes.fromhex(parts[1]), "id_a")
        t_start, t_end, duration, amount = (int(p) for p in parts[2:6])
        channel = NotifyChannel(parts[6])
    except ValueError as exc:
        raise ScenarioError(str(exc), lineno) from None
    if duration != t_end - t_start:
        raise ScenarioError("duration does not match start/end", lineno)
    contact = parts[7] if len(parts) == 8 else ""
    return Invoice(id_a, t_start, t_end, duration, amount, Notification(channel, contact, ""))
