"""Simulated smart contract with an append-only, hash-chained event log.

Every mutation of a survey contract appends one event; each event hashes
its own canonical serialization and links to the previous event's hash, so
any byte of recorded history is tamper-evident. Money is integer units in
an in-process delta table (relative to each party's starting balance), no
real chain involved.

Canonical wire format, normative so event hashes reproduce anywhere:

    record  := u32 body_len | body
    body    := event_bytes | event_hash(32)
    event_bytes := u32 sequence_no | u8 kind | payload | prev_hash(32)
    payload := u16 field_count, then per field in ascending key order:
               u16 key_len | key utf8 | u8 tag | value
               tag 0x01 int   -> u64 big-endian
               tag 0x02 bytes -> u32 len | raw bytes
               tag 0x03 str   -> u32 len | utf8 bytes

The genesis event uses 32 zero bytes as prev_hash. All integers are
non-negative and big-endian. Digests render as lowercase hex.

All contract mutations assume a single logical writer: callers serialize
commands per contract (the protocol orchestrator applies them in arrival
order).
"""

from __future__ import annotations

import bisect
import enum
import struct
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .envelope import Digest, Nonce, Secret, digest, encode_bit_vector

ADDRESS_LEN = 20
GENESIS_PREV = b"\x00" * 32

PayloadValue = int | bytes | str
Payload = dict[str, PayloadValue]


class LedgerError(Exception):
    """A rule violation: wrong phase, duplicate, bad amount, failed check."""


class LogFormatError(Exception):
    """A serialized event log that cannot be parsed."""

    def __init__(self, record_index: int, message: str):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


@dataclass(frozen=True, order=True)
class Address:
    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != ADDRESS_LEN:
            raise ValueError(f"address must be exactly {ADDRESS_LEN} bytes")
        object.__setattr__(self, "value", bytes(self.value))

    def __str__(self) -> str:
        return "0x" + self.value.hex()


class ContractPhase(enum.IntEnum):
    CONFIGURED = 0
    COLLECTING = 1
    FILTERED = 2
    DEPOSITED = 3
    REVEALED = 4
    SETTLED = 5
    ABORTED = 99


class EventKind(enum.IntEnum):
    CREATED = 1
    COMMITTED = 2
    FILTER_RECORDED = 3
    DEPOSITED = 4
    REVEALED = 5
    TRANSFERRED = 6
    PAID_OUT = 7
    ABORTED = 8


_EVENT_NAMES = {
    EventKind.CREATED: "Created",
    EventKind.COMMITTED: "Committed",
    EventKind.FILTER_RECORDED: "FilterRecorded",
    EventKind.DEPOSITED: "Deposited",
    EventKind.REVEALED: "Revealed",
    EventKind.TRANSFERRED: "Transferred",
    EventKind.PAID_OUT: "PaidOut",
    EventKind.ABORTED: "Aborted",
}

_INT_TAG = 0x01
_BYTES_TAG = 0x02
_STR_TAG = 0x03


def _encode_payload(payload: Mapping[str, PayloadValue]) -> bytes:
    out = bytearray(struct.pack(">H", len(payload)))
    for key in sorted(payload):
        kb = key.encode("utf-8")
        out += struct.pack(">H", len(kb)) + kb
        value = payload[key]
        if isinstance(value, bool):
            raise TypeError("payload values must be int, bytes or str")
        if isinstance(value, int):
            if value < 0 or value >= 1 << 64:
                raise ValueError(f"payload int out of u64 range: {value}")
            out += bytes([_INT_TAG]) + struct.pack(">Q", value)
        elif isinstance(value, (bytes, bytearray)):
            out += bytes([_BYTES_TAG]) + struct.pack(">I", len(value)) + bytes(value)
        elif isinstance(value, str):
            sb = value.encode("utf-8")
            out += bytes([_STR_TAG]) + struct.pack(">I", len(sb)) + sb
        else:
            raise TypeError(f"unsupported payload value type: {type(value)!r}")
    return bytes(out)


class _Reader:
    """Bounds-checked cursor over one body slice."""

    def __init__(self, data: bytes, record_index: int):
        self.data = data
        self.offset = 0
        self.record_index = record_index

    def take(self, n: int) -> bytes:
        if n < 0 or self.offset + n > len(self.data):
            raise LogFormatError(self.record_index, "truncated field")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]


def _decode_payload(reader: _Reader) -> Payload:
    count = reader.u16()
    payload: Payload = {}
    for _ in range(count):
        key_len = reader.u16()
        try:
            key = reader.take(key_len).decode("utf-8")
        except UnicodeDecodeError:
            raise LogFormatError(reader.record_index, "payload key is not valid UTF-8")
        tag = reader.u8()
        if tag == _INT_TAG:
            payload[key] = reader.u64()
        elif tag == _BYTES_TAG:
            payload[key] = reader.take(reader.u32())
        elif tag == _STR_TAG:
            try:
                payload[key] = reader.take(reader.u32()).decode("utf-8")
            except UnicodeDecodeError:
                raise LogFormatError(reader.record_index, "payload string is not valid UTF-8")
        else:
            raise LogFormatError(reader.record_index, f"unknown payload tag 0x{tag:02x}")
    return payload


@dataclass(frozen=True)
class LedgerEvent:
    sequence_no: int
    kind: EventKind
    payload: Payload
    prev_hash: bytes
    event_hash: bytes

    def canonical_bytes(self) -> bytes:
        """Everything the event hash covers (all fields except the hash itself)."""
        return (
            struct.pack(">I", self.sequence_no)
            + bytes([self.kind])
            + _encode_payload(self.payload)
            + self.prev_hash
        )

    def compute_hash(self) -> bytes:
        return digest(self.canonical_bytes()).value

    def describe(self) -> str:
        parts = []
        for key in sorted(self.payload):
            value = self.payload[key]
            if isinstance(value, (bytes, bytearray)):
                parts.append(f"{key}={bytes(value).hex()}")
            else:
                parts.append(f"{key}={value}")
        return (
            f"{self.sequence_no} {_EVENT_NAMES[self.kind]}"
            f" event={self.event_hash.hex()} prev={self.prev_hash.hex()} {' '.join(parts)}"
        )


class EventLog:
    """Append-only sequence of hash-chained events."""

    def __init__(self):
        self.events: list[LedgerEvent] = []

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[LedgerEvent]:
        return iter(self.events)

    def append(self, kind: EventKind, payload: Payload) -> LedgerEvent:
        prev = self.events[-1].event_hash if self.events else GENESIS_PREV
        event = LedgerEvent(len(self.events), kind, dict(payload), prev, b"\x00" * 32)
        object.__setattr__(event, "event_hash", event.compute_hash())
        self.events.append(event)
        return event

    def to_bytes(self) -> bytes:
        out = bytearray()
        for event in self.events:
            body = event.canonical_bytes() + event.event_hash
            out += struct.pack(">I", len(body)) + body
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EventLog":
        log = cls()
        offset = 0
        index = 0
        while offset < len(data):
            if len(data) - offset < 4:
                raise LogFormatError(index, "truncated record length prefix")
            (body_len,) = struct.unpack(">I", data[offset : offset + 4])
            offset += 4
            if offset + body_len > len(data):
                raise LogFormatError(index, "record extends past end of data")
            reader = _Reader(data[offset : offset + body_len], index)
            sequence_no = reader.u32()
            kind_code = reader.u8()
            try:
                kind = EventKind(kind_code)
            except ValueError:
                raise LogFormatError(index, f"unknown event kind {kind_code}")
            payload = _decode_payload(reader)
            prev_hash = reader.take(32)
            event_hash = reader.take(32)
            if reader.offset != body_len:
                raise LogFormatError(index, "trailing bytes inside record")
            log.events.append(LedgerEvent(sequence_no, kind, payload, prev_hash, event_hash))
            offset += body_len
            index += 1
        return log

    def text_dump(self) -> str:
        return "\n".join(event.describe() for event in self.events) + ("\n" if self.events else "")


def verify_event_chain(log: EventLog) -> tuple[bool, int | None]:
    """Recompute every hash and link; returns (ok, first bad index)."""
    prev = GENESIS_PREV
    for i, event in enumerate(log.events):
        if event.sequence_no != i:
            return False, i
        if event.prev_hash != prev:
            return False, i
        if event.compute_hash() != event.event_hash:
            return False, i
        prev = event.event_hash
    return True, None


def check_transfer_safety(log: EventLog) -> bool:
    """No payment to the system operator, and no reveal, before a deposit."""
    deposited_at: int | None = None
    for i, event in enumerate(log.events):
        if event.kind == EventKind.DEPOSITED and deposited_at is None:
            deposited_at = i
        elif event.kind == EventKind.REVEALED and deposited_at is None:
            return False
        elif event.kind == EventKind.TRANSFERRED and event.payload.get("to_role") == "sysop":
            if deposited_at is None:
                return False
    return True


class CommitmentIndex:
    """Sorted map address -> response commitment.

    Iteration is strictly ascending by address bytes; an address's rank in
    that order is its filter index. Insertion (arrival) order is retained
    separately for eligibility screening.
    """

    def __init__(self):
        self._sorted: list[Address] = []
        self._digests: dict[Address, Digest] = {}
        self._arrival: list[Address] = []
        self._frozen = False

    def __len__(self) -> int:
        return len(self._sorted)

    def __contains__(self, address: Address) -> bool:
        return address in self._digests

    def __iter__(self) -> Iterator[tuple[Address, Digest]]:
        return ((a, self._digests[a]) for a in self._sorted)

    def add(self, address: Address, commitment: Digest) -> None:
        if self._frozen:
            raise LedgerError("commitments are frozen; no more responses are accepted")
        if address in self._digests:
            raise LedgerError(f"address {address} already committed (first commitment wins)")
        bisect.insort(self._sorted, address)
        self._digests[address] = commitment
        self._arrival.append(address)

    def freeze(self) -> None:
        self._frozen = True

    def index_of(self, address: Address) -> int:
        i = bisect.bisect_left(self._sorted, address)
        if i == len(self._sorted) or self._sorted[i] != address:
            raise KeyError(f"address {address} not present")
        return i

    def at(self, index: int) -> tuple[Address, Digest]:
        address = self._sorted[index]
        return address, self._digests[address]

    def digest_of(self, address: Address) -> Digest:
        return self._digests[address]

    def addresses_sorted(self) -> tuple[Address, ...]:
        return tuple(self._sorted)

    def arrival_order(self) -> tuple[Address, ...]:
        return tuple(self._arrival)


@dataclass
class SurveyContract:
    """On-ledger record of one survey. Mutate only through module functions."""

    contract_id: Digest
    config_uri: str
    config_digest: Digest
    required_responses: int
    fee: int
    n1: Nonce
    n2: Nonce
    s1: Secret
    h_s2: Digest
    authority: Address
    sysop: Address
    deadline: int
    phase: ContractPhase = ContractPhase.COLLECTING
    commitments: CommitmentIndex = field(default_factory=CommitmentIndex)
    filter_digest: Digest | None = None
    deposit_amount: int = 0
    revealed_s2: Secret | None = None
    log: EventLog = field(default_factory=EventLog)
    escrow_balance: int = 0
    balance_deltas: dict[Address, int] = field(default_factory=dict)

    @property
    def escrow_address(self) -> Address:
        """Synthetic address of the contract itself, for transfer records."""
        return Address(self.contract_id.value[:ADDRESS_LEN])

    def _credit(self, address: Address, amount: int) -> None:
        self.balance_deltas[address] = self.balance_deltas.get(address, 0) + amount


def create_contract(
    config_uri: str,
    config_digest: Digest,
    required_responses: int,
    fee: int,
    n1: Nonce,
    n2: Nonce,
    s1: Secret,
    h_s2: Digest,
    deadline: int,
    *,
    authority: Address,
    sysop: Address,
) -> SurveyContract:
    """Record a new survey; the contract starts collecting commitments."""
    if required_responses < 1:
        raise ValueError("required response count must be at least 1")
    if fee < 0:
        raise ValueError("fee must be non-negative")
    if deadline < 0:
        raise ValueError("deadline must be non-negative")
    payload: Payload = {
        "config_uri": config_uri,
        "config_digest": config_digest.value,
        "required_responses": required_responses,
        "fee": fee,
        "n1": n1.value,
        "n2": n2.value,
        "s1": s1.value,
        "h_s2": h_s2.value,
        "deadline": deadline,
        "authority": authority.value,
        "sysop": sysop.value,
    }
    contract_id = digest(_encode_payload(payload))
    contract = SurveyContract(
        contract_id=contract_id,
        config_uri=config_uri,
        config_digest=config_digest,
        required_responses=required_responses,
        fee=fee,
        n1=n1,
        n2=n2,
        s1=s1,
        h_s2=h_s2,
        authority=authority,
        sysop=sysop,
        deadline=deadline,
    )
    contract.log.append(EventKind.CREATED, payload)
    return contract


def commit_response(contract: SurveyContract, address: Address, commitment: Digest) -> SurveyContract:
    """Store one address's response commitment, first come first served."""
    if contract.phase != ContractPhase.COLLECTING:
        raise LedgerError(
            f"cannot commit in phase {contract.phase.name}: no more responses are accepted"
        )
    contract.commitments.add(address, commitment)
    contract.log.append(
        EventKind.COMMITTED, {"address": address.value, "commitment": commitment.value}
    )
    return contract


def finalize_filter(contract: SurveyContract, filter_digest: Digest) -> SurveyContract:
    """Record the eligibility filter's hash and stop accepting commitments."""
    if contract.phase != ContractPhase.COLLECTING:
        raise LedgerError(f"cannot finalize filter in phase {contract.phase.name}")
    contract.filter_digest = filter_digest
    contract.commitments.freeze()
    contract.phase = ContractPhase.FILTERED
    contract.log.append(EventKind.FILTER_RECORDED, {"filter_digest": filter_digest.value})
    return contract


def deposit(contract: SurveyContract, from_address: Address, amount: int) -> SurveyContract:
    """Escrow the agreed fee; only the authority, only the exact amount."""
    if contract.phase != ContractPhase.FILTERED:
        raise LedgerError(f"cannot deposit in phase {contract.phase.name}")
    if from_address != contract.authority:
        raise LedgerError("only the contract's authority may deposit")
    if amount != contract.fee:
        raise LedgerError(f"deposit must equal the agreed fee {contract.fee}, got {amount}")
    contract.deposit_amount = amount
    contract.escrow_balance += amount
    contract._credit(from_address, -amount)
    contract.phase = ContractPhase.DEPOSITED
    contract.log.append(EventKind.DEPOSITED, {"from": from_address.value, "amount": amount})
    return contract


def reveal_secret(contract: SurveyContract, s2_candidate: Secret) -> SurveyContract:
    """Atomically record s2 and release the deposit to the system operator.

    A candidate whose hash does not match the stored commitment changes
    nothing: no event, no phase change, no transfer.
    """
    if contract.phase != ContractPhase.DEPOSITED:
        raise LedgerError(f"cannot reveal in phase {contract.phase.name}")
    if digest(s2_candidate.value) != contract.h_s2:
        raise LedgerError("revealed secret does not match the stored hash")
    contract.revealed_s2 = s2_candidate
    contract.log.append(EventKind.REVEALED, {"s2": s2_candidate.value})
    contract.escrow_balance -= contract.fee
    contract._credit(contract.sysop, contract.fee)
    contract.log.append(
        EventKind.TRANSFERRED,
        {
            "from": contract.escrow_address.value,
            "to": contract.sysop.value,
            "to_role": "sysop",
            "amount": contract.fee,
        },
    )
    contract.phase = ContractPhase.REVEALED
    return contract


def _pack_distribution(distribution: Mapping[Address, int]) -> bytes:
    out = bytearray()
    for address in sorted(distribution):
        amount = distribution[address]
        if amount < 0:
            raise ValueError("payout amounts must be non-negative")
        out += address.value + struct.pack(">Q", amount)
    return bytes(out)


def payout(
    contract: SurveyContract,
    distribution: Mapping[Address, int],
    filter_bits: Sequence[int],
) -> SurveyContract:
    """Distribute operator compensation out of the released fee.

    The contract stores only the filter's hash, so the caller supplies the
    filter bits; they are checked against the recorded digest before any
    eligibility decision.
    """
    if contract.phase != ContractPhase.REVEALED:
        raise LedgerError(f"cannot pay out in phase {contract.phase.name}")
    if contract.filter_digest is None or digest(encode_bit_vector(filter_bits)) != contract.filter_digest:
        raise LedgerError("supplied filter does not match the recorded filter hash")
    total = sum(distribution.values())
    if total > contract.fee:
        raise LedgerError(f"distribution {total} exceeds the fee {contract.fee}")
    for address in distribution:
        if address not in contract.commitments:
            raise LedgerError(f"payout to unknown address {address}")
        if filter_bits[contract.commitments.index_of(address)] != 1:
            raise LedgerError(f"payout to filter-ineligible address {address}")
    packed = _pack_distribution(distribution)
    contract._credit(contract.sysop, -total)
    for address, amount in distribution.items():
        contract._credit(address, amount)
    contract.phase = ContractPhase.SETTLED
    contract.log.append(EventKind.PAID_OUT, {"distribution": packed, "total": total})
    return contract


def abort(contract: SurveyContract, now: int) -> SurveyContract:
    """Terminate a stalled survey after its deadline; refund any deposit."""
    if contract.phase in (ContractPhase.REVEALED, ContractPhase.SETTLED, ContractPhase.ABORTED):
        raise LedgerError(f"cannot abort in phase {contract.phase.name}")
    if now <= contract.deadline:
        raise LedgerError(f"deadline {contract.deadline} not yet passed at {now}")
    phase_before = contract.phase
    refund = 0
    if phase_before == ContractPhase.DEPOSITED:
        refund = contract.deposit_amount
        contract.escrow_balance -= refund
        contract._credit(contract.authority, refund)
        contract.deposit_amount = 0
        contract.log.append(
            EventKind.TRANSFERRED,
            {
                "from": contract.escrow_address.value,
                "to": contract.authority.value,
                "to_role": "authority",
                "amount": refund,
            },
        )
    contract.phase = ContractPhase.ABORTED
    contract.log.append(EventKind.ABORTED, {"phase_before": phase_before.name, "refund": refund})
    return contract
