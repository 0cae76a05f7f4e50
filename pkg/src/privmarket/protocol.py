"""Three-party survey lifecycle over the simulated ledger.

Parties: the authority (data consumer) funds the survey and aggregates
results; the system operator (broker) screens respondents and escrows the
second key secret; operators (data providers) submit locally randomized,
encrypted responses.

Honest lifecycle: configure -> commit -> filter -> deliver -> deposit ->
reveal -> pay out -> decrypt and aggregate. The deposit can only be
claimed by revealing s2 on the ledger, and the authority can only derive
the session key from that same reveal, which is what makes the exchange
fair.

The survey configuration file is line-based text, hashed as exact bytes
(verification never re-serializes parsed content). Tokens are
percent-encoded so labels may contain arbitrary characters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from urllib.parse import quote, unquote

import numpy as np

from . import ledger as ledger_mod
from .envelope import (
    Ciphertext,
    Digest,
    Nonce,
    PreSharedKey,
    Secret,
    canonical_encode_response,
    decode_response,
    decrypt,
    derive_session_key,
    digest,
    encode_bit_vector,
    encrypt,
    hmac_derive,
    DecryptionError,
)
from .ldp import (
    FrequencyEstimate,
    PrivacyParams,
    QuerySpec,
    ResponseVector,
    accumulate_counts,
    encode_one_hot,
    estimate_frequencies,
    randomize_response,
)
from .ledger import Address, ContractPhase, LedgerError, SurveyContract

CONFIG_HEADER = "survey-config/1"
DEFAULT_DEADLINE = 1 << 32
DEFAULT_OPERATOR_SHARE_PCT = 80


class ProtocolError(Exception):
    """A party refused to proceed, or an impossible state was reached."""

    def __init__(self, message: str, trace: list[str] | None = None):
        super().__init__(message)
        self.trace = trace or []


class ConfigIntegrityError(ProtocolError):
    """Retrieved configuration bytes do not hash to the on-ledger digest."""


class InsufficientEligibleError(ProtocolError):
    """Fewer eligible committed operators than required responses."""


@dataclass(frozen=True)
class FilterCriteria:
    """Conjunctive attribute predicates; an empty list accepts everyone."""

    predicates: tuple[tuple[str, tuple[str, ...]], ...]

    def __init__(self, predicates: Iterable[tuple[str, Iterable[str]]] = ()):
        normalized = tuple((attr, tuple(sorted(set(values)))) for attr, values in predicates)
        names = [attr for attr, _ in normalized]
        if len(set(names)) != len(names):
            raise ValueError("criteria attribute names must be distinct")
        object.__setattr__(self, "predicates", normalized)

    @classmethod
    def empty(cls) -> "FilterCriteria":
        return cls(())


@dataclass(frozen=True)
class SurveyConfiguration:
    query: QuerySpec
    criteria: FilterCriteria
    required_responses: int
    fee: int
    privacy: PrivacyParams

    def __post_init__(self):
        if self.required_responses < 1:
            raise ValueError("required response count must be at least 1")
        if self.fee < 0:
            raise ValueError("fee must be non-negative")


@dataclass
class OperatorProfile:
    """A data provider as the system operator knows it.

    true_choice exists for simulation: it is what the operator would
    answer; it never leaves the operator un-randomized.
    """

    operator_id: str
    addresses: tuple[Address, ...]
    attributes: Mapping[str, str] = field(default_factory=dict)
    true_choice: int = 0
    active_address: Address | None = None

    def __post_init__(self):
        if not self.addresses:
            raise ValueError("operator needs at least one address")
        if len(set(self.addresses)) != len(self.addresses):
            raise ValueError("operator addresses must be distinct")
        if self.active_address is None:
            self.active_address = self.addresses[0]
        elif self.active_address not in self.addresses:
            raise ValueError("active address must be one of the operator's addresses")


@dataclass(frozen=True)
class FilterVector:
    """Eligibility bits aligned with the sorted commitment index."""

    bits: tuple[int, ...]

    def __init__(self, bits: Sequence[int]):
        vals = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in vals):
            raise ValueError("filter bits must be 0 or 1")
        object.__setattr__(self, "bits", vals)

    @property
    def popcount(self) -> int:
        return sum(self.bits)


@dataclass(frozen=True)
class DeliveryMessage:
    """An eligible operator's (sorted index, ciphertext) submission."""

    index: int
    ciphertext: Ciphertext

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("delivery index must be non-negative")


class DeliveryVerdict(enum.Enum):
    ACCEPTED = "accepted"
    HASH_MISMATCH = "hash_mismatch"
    INELIGIBLE = "ineligible"
    DUPLICATE = "duplicate"


@dataclass
class AggregationOutcome:
    decrypted_vectors: list[ResponseVector]
    estimate: FrequencyEstimate


@dataclass(frozen=True)
class PskDistribution:
    """Record of which registered operators were issued the survey psk."""

    contract_id: Digest
    recipients: tuple[str, ...]


class ArtifactStore:
    """Stand-in for the pre-agreed publication URL: uri -> exact bytes."""

    def __init__(self):
        self._items: dict[str, bytes] = {}

    def put(self, uri: str, data: bytes) -> None:
        self._items[uri] = bytes(data)

    def get(self, uri: str) -> bytes:
        if uri not in self._items:
            raise KeyError(f"no artifact published at {uri}")
        return self._items[uri]


def filter_uri(contract: SurveyContract) -> str:
    return f"survey://{contract.contract_id.hex}/filter"


# ---------------------------------------------------------------------------
# survey configuration file


def render_config_file(config: SurveyConfiguration) -> bytes:
    """Canonical text form; identical configurations give identical bytes."""
    lines = [CONFIG_HEADER, f"choices {config.query.n}"]
    for i, label in enumerate(config.query.choices):
        lines.append(f"choice {i} {quote(label, safe='')}")
    lines.append(f"criteria {len(config.criteria.predicates)}")
    for attr, values in config.criteria.predicates:
        joined = ",".join(quote(v, safe="") for v in values)
        lines.append(f"require {quote(attr, safe='')} {joined}")
    lines.append(f"required-responses {config.required_responses}")
    lines.append(f"fee {config.fee}")
    lines.append(f"flip-probability {config.privacy.f!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_config_file(data: bytes) -> SurveyConfiguration:
    """Strict inverse of render_config_file."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError("configuration file is not valid UTF-8") from exc
    lines = text.split("\n")
    if not lines or lines[-1] != "":
        raise ValueError("configuration file must end with a newline")
    lines = lines[:-1]

    def expect(prefix: str, line: str) -> str:
        if not line.startswith(prefix + " "):
            raise ValueError(f"expected '{prefix} ...', got {line!r}")
        return line[len(prefix) + 1 :]

    try:
        pos = 0
        if lines[pos] != CONFIG_HEADER:
            raise ValueError("missing or unsupported configuration header")
        pos += 1
        n = int(expect("choices", lines[pos])); pos += 1
        labels = []
        for i in range(n):
            rest = expect("choice", lines[pos]); pos += 1
            idx_text, _, encoded = rest.partition(" ")
            if int(idx_text) != i:
                raise ValueError(f"choice index out of order at line {pos}")
            labels.append(unquote(encoded))
        k = int(expect("criteria", lines[pos])); pos += 1
        predicates = []
        for _ in range(k):
            rest = expect("require", lines[pos]); pos += 1
            attr_text, _, values_text = rest.partition(" ")
            values = [unquote(v) for v in values_text.split(",")] if values_text else []
            predicates.append((unquote(attr_text), values))
        required = int(expect("required-responses", lines[pos])); pos += 1
        fee = int(expect("fee", lines[pos])); pos += 1
        f = float(expect("flip-probability", lines[pos])); pos += 1
    except IndexError as exc:
        raise ValueError("configuration file truncated") from exc
    if pos != len(lines):
        raise ValueError("trailing content in configuration file")
    return SurveyConfiguration(
        query=QuerySpec(labels),
        criteria=FilterCriteria(predicates),
        required_responses=required,
        fee=fee,
        privacy=PrivacyParams(f),
    )


def build_survey_config(
    query: QuerySpec,
    criteria: FilterCriteria,
    required_responses: int,
    fee: int,
    privacy: PrivacyParams,
) -> tuple[SurveyConfiguration, bytes, Digest]:
    """Assemble a configuration plus its canonical bytes and digest."""
    config = SurveyConfiguration(query, criteria, required_responses, fee, privacy)
    file_bytes = render_config_file(config)
    return config, file_bytes, digest(file_bytes)


# ---------------------------------------------------------------------------
# parties


def random_address(rng: np.random.Generator) -> Address:
    return Address(rng.bytes(ledger_mod.ADDRESS_LEN))


class Authority:
    """Data consumer: verifies deliveries, deposits, decrypts after reveal."""

    def __init__(self, address: Address, config: SurveyConfiguration | None = None):
        self.address = address
        self.config = config
        self.accepted: dict[int, Ciphertext] = {}


class SystemOperator:
    """Broker: screens operators, escrows s2, distributes compensation."""

    def __init__(self, address: Address, rng: np.random.Generator):
        self.address = address
        self._rng = rng
        self.registry: dict[str, OperatorProfile] = {}
        self._survey_keys: dict[str, tuple[PreSharedKey, Secret]] = {}

    def register_operator(self, profile: OperatorProfile) -> None:
        self.registry[profile.operator_id] = profile

    def issue_psk(self, contract: SurveyContract, operator_id: str) -> PreSharedKey:
        if operator_id not in self.registry:
            raise ProtocolError(f"operator {operator_id} is not registered")
        psk, _ = self._survey_keys[contract.contract_id.hex]
        return psk

    def secret_for(self, contract: SurveyContract) -> Secret:
        return self._survey_keys[contract.contract_id.hex][1]


class Operator:
    """Data provider: encodes, randomizes, encrypts and commits one response."""

    def __init__(self, profile: OperatorProfile, rng: np.random.Generator):
        self.profile = profile
        self._rng = rng
        self.psk: PreSharedKey | None = None
        self.ciphertext: Ciphertext | None = None
        self.commitment: Digest | None = None


# ---------------------------------------------------------------------------
# lifecycle operations


def setup_survey(
    authority: Authority,
    sysop: SystemOperator,
    config: SurveyConfiguration,
    *,
    store: ArtifactStore,
    deadline: int = DEFAULT_DEADLINE,
    config_uri: str | None = None,
) -> tuple[SurveyContract, PskDistribution]:
    """Create the on-ledger contract and stage key material.

    The contract records s1 in the clear but only the hash of s2; s2 stays
    with the system operator until the deposit is in escrow.
    """
    file_bytes = render_config_file(config)
    config_digest = digest(file_bytes)
    uri = config_uri or f"survey://{config_digest.hex}/config"
    store.put(uri, file_bytes)

    psk = PreSharedKey(sysop._rng.bytes(32))
    n1 = Nonce(sysop._rng.bytes(16))
    n2 = Nonce(sysop._rng.bytes(16))
    s1 = hmac_derive(psk, n1)
    s2 = hmac_derive(psk, n2)
    contract = ledger_mod.create_contract(
        uri,
        config_digest,
        config.required_responses,
        config.fee,
        n1,
        n2,
        s1,
        digest(s2.value),
        deadline,
        authority=authority.address,
        sysop=sysop.address,
    )
    sysop._survey_keys[contract.contract_id.hex] = (psk, s2)
    authority.config = config
    record = PskDistribution(contract.contract_id, tuple(sorted(sysop.registry)))
    return contract, record


def evaluate_criteria(profile: OperatorProfile, criteria: FilterCriteria) -> bool:
    """True iff every predicate's attribute is present with an allowed value."""
    for attr, allowed in criteria.predicates:
        if profile.attributes.get(attr) not in allowed:
            return False
    return True


def operator_prepare_and_commit(
    operator: Operator,
    contract: SurveyContract,
    config_bytes: bytes,
    expected_digest: Digest,
    psk: PreSharedKey,
    n1: Nonce,
    n2: Nonce,
    rng: np.random.Generator,
) -> tuple[Ciphertext, Digest]:
    """Verify the configuration, randomize, encrypt, and commit on-ledger.

    Consumes from `rng`: first the randomization draw, then 12 bytes for
    the cipher nonce.
    """
    if digest(config_bytes) != expected_digest:
        raise ConfigIntegrityError(
            "configuration bytes do not match the on-ledger digest; refusing to participate"
        )
    config = parse_config_file(config_bytes)
    response = randomize_response(
        encode_one_hot(operator.profile.true_choice, config.query.n), config.privacy, rng
    )
    s1 = hmac_derive(psk, n1)
    s2 = hmac_derive(psk, n2)
    sk = derive_session_key(s1, s2)
    ciphertext = encrypt(sk, canonical_encode_response(response), rng.bytes(12))
    commitment = digest(ciphertext.serialize())
    assert operator.profile.active_address is not None
    ledger_mod.commit_response(contract, operator.profile.active_address, commitment)
    operator.psk = psk
    operator.ciphertext = ciphertext
    operator.commitment = commitment
    return ciphertext, commitment


def build_and_finalize_filter(
    sysop: SystemOperator,
    contract: SurveyContract,
    profiles_by_arrival: Sequence[OperatorProfile],
    criteria: FilterCriteria,
    *,
    store: ArtifactStore,
) -> FilterVector:
    """Screen commitments in arrival order and freeze the filter.

    Eligibility is granted first come first served until the required
    response count is reached; later operators stay at 0 even if they meet
    the criteria. Bit positions follow the sorted commitment index.
    """
    arrival = contract.commitments.arrival_order()
    if len(profiles_by_arrival) != len(arrival):
        raise ProtocolError(
            f"profile list ({len(profiles_by_arrival)}) does not cover commitments ({len(arrival)})"
        )
    marked: set[Address] = set()
    for address, profile in zip(arrival, profiles_by_arrival):
        if profile.active_address != address:
            raise ProtocolError(f"profile {profile.operator_id} does not match arrival {address}")
        if len(marked) == contract.required_responses:
            break
        if evaluate_criteria(profile, criteria):
            marked.add(address)
    if len(marked) < contract.required_responses:
        raise InsufficientEligibleError(
            f"only {len(marked)} eligible commitments, need {contract.required_responses}"
        )
    bits = [1 if address in marked else 0 for address in contract.commitments.addresses_sorted()]
    filter_vector = FilterVector(bits)
    filter_bytes = encode_bit_vector(filter_vector.bits)
    ledger_mod.finalize_filter(contract, digest(filter_bytes))
    store.put(filter_uri(contract), filter_bytes)
    return filter_vector


def operator_deliver(
    operator: Operator, filter_vector: FilterVector, commitments: ledger_mod.CommitmentIndex
) -> DeliveryMessage | None:
    """Send (index, ciphertext) if this operator's filter bit is set."""
    address = operator.profile.active_address
    assert address is not None
    try:
        index = commitments.index_of(address)
    except KeyError as exc:
        raise ProtocolError(f"operator address {address} absent from commitment index") from exc
    if filter_vector.bits[index] != 1:
        return None
    if operator.ciphertext is None:
        raise ProtocolError("operator has no prepared ciphertext to deliver")
    return DeliveryMessage(index, operator.ciphertext)


def authority_verify_delivery(
    authority: Authority,
    msg: DeliveryMessage,
    commitments: ledger_mod.CommitmentIndex,
    filter_vector: FilterVector,
) -> DeliveryVerdict:
    """Check eligibility and the on-ledger commitment before accepting."""
    if msg.index >= len(commitments):
        raise ValueError(f"delivery index {msg.index} out of range")
    if filter_vector.bits[msg.index] != 1:
        return DeliveryVerdict.INELIGIBLE
    _, expected = commitments.at(msg.index)
    if digest(msg.ciphertext.serialize()) != expected:
        return DeliveryVerdict.HASH_MISMATCH
    if msg.index in authority.accepted:
        return DeliveryVerdict.DUPLICATE
    authority.accepted[msg.index] = msg.ciphertext
    return DeliveryVerdict.ACCEPTED


def authority_deposit_and_await_reveal(authority: Authority, contract: SurveyContract) -> None:
    """Escrow the fee once exactly the required deliveries are in hand."""
    if len(authority.accepted) != contract.required_responses:
        raise ProtocolError(
            f"refusing to deposit: {len(authority.accepted)} of "
            f"{contract.required_responses} deliveries accepted"
        )
    ledger_mod.deposit(contract, authority.address, contract.fee)


def sysop_reveal_secret(sysop: SystemOperator, contract: SurveyContract) -> None:
    ledger_mod.reveal_secret(contract, sysop.secret_for(contract))


def equal_split(fee: int, required_responses: int, operator_share_pct: int = DEFAULT_OPERATOR_SHARE_PCT) -> int:
    """Per-operator compensation: operators share operator_share_pct of the fee."""
    if not (0 <= operator_share_pct <= 100):
        raise ValueError("operator share must be a percentage")
    return fee * operator_share_pct // (100 * required_responses)


def sysop_payout(
    sysop: SystemOperator,
    contract: SurveyContract,
    filter_vector: FilterVector,
    operator_share_pct: int = DEFAULT_OPERATOR_SHARE_PCT,
) -> dict[Address, int]:
    """Equal shares to every filter-eligible operator; remainder retained."""
    share = equal_split(contract.fee, contract.required_responses, operator_share_pct)
    eligible = [
        contract.commitments.at(i)[0]
        for i, bit in enumerate(filter_vector.bits)
        if bit == 1
    ]
    distribution = {address: share for address in eligible}
    ledger_mod.payout(contract, distribution, filter_vector.bits)
    return distribution


def settle_and_decrypt(
    authority: Authority,
    contract: SurveyContract,
    accepted: Mapping[int, Ciphertext],
) -> AggregationOutcome:
    """Reconstruct the session key from the reveal and aggregate responses."""
    if contract.phase not in (ContractPhase.REVEALED, ContractPhase.SETTLED):
        raise ProtocolError(
            f"cannot decrypt in phase {contract.phase.name}: second secret not on ledger"
        )
    if len(accepted) != contract.required_responses:
        raise ProtocolError(
            f"have {len(accepted)} deliveries, need exactly {contract.required_responses}"
        )
    if authority.config is None:
        raise ProtocolError("authority has no survey configuration")
    assert contract.revealed_s2 is not None
    sk = derive_session_key(contract.s1, contract.revealed_s2)
    vectors: list[ResponseVector] = []
    for index in sorted(accepted):
        try:
            vectors.append(decode_response(decrypt(sk, accepted[index])))
        except (DecryptionError, ValueError) as exc:
            raise ProtocolError(f"delivery at index {index} failed to open: {exc}") from exc
    estimate = estimate_frequencies(accumulate_counts(vectors), authority.config.privacy)
    return AggregationOutcome(vectors, estimate)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class SurveyOutcome:
    contract: SurveyContract
    filter_vector: FilterVector
    aggregation: AggregationOutcome
    payouts: dict[Address, int]
    psk_record: PskDistribution
    trace: list[str]


def _t(trace: list[str], party: str, action: str, detail: str = "") -> None:
    trace.append(f"{party:<9} {action:<22} {detail}".rstrip())


def run_survey(
    config: SurveyConfiguration,
    profiles: Sequence[OperatorProfile],
    *,
    operator_rngs: Sequence[np.random.Generator],
    infra_rng: np.random.Generator,
    deadline: int = DEFAULT_DEADLINE,
    operator_share_pct: int = DEFAULT_OPERATOR_SHARE_PCT,
) -> SurveyOutcome:
    """Drive one honest survey end to end, deterministically.

    Parties act in a fixed order; operators commit and deliver in profile
    order, which is therefore the arrival order. Raises ProtocolError
    (with the trace attached) if the survey cannot complete.
    """
    if len(operator_rngs) != len(profiles):
        raise ValueError("need exactly one random stream per operator profile")
    trace: list[str] = []
    store = ArtifactStore()
    authority = Authority(random_address(infra_rng), config)
    sysop = SystemOperator(random_address(infra_rng), infra_rng)
    for profile in profiles:
        sysop.register_operator(profile)

    try:
        contract, psk_record = setup_survey(
            authority, sysop, config, store=store, deadline=deadline
        )
        _t(trace, "sysop", "create-contract", f"id={contract.contract_id.hex[:16]} nr={config.required_responses} fee={config.fee}")
        _t(trace, "sysop", "distribute-psk", f"recipients={len(psk_record.recipients)}")

        operators = [Operator(profile, rng) for profile, rng in zip(profiles, operator_rngs)]
        config_bytes = store.get(contract.config_uri)
        for operator in operators:
            psk = sysop.issue_psk(contract, operator.profile.operator_id)
            _, commitment = operator_prepare_and_commit(
                operator,
                contract,
                config_bytes,
                contract.config_digest,
                psk,
                contract.n1,
                contract.n2,
                operator._rng,
            )
            _t(trace, "operator", "commit", f"{operator.profile.operator_id} commitment={commitment.hex[:16]}")

        filter_vector = build_and_finalize_filter(
            sysop, contract, list(profiles), config.criteria, store=store
        )
        _t(trace, "sysop", "finalize-filter", f"eligible={filter_vector.popcount} of {len(filter_vector.bits)}")

        for operator in operators:
            msg = operator_deliver(operator, filter_vector, contract.commitments)
            if msg is None:
                continue
            verdict = authority_verify_delivery(authority, msg, contract.commitments, filter_vector)
            _t(trace, "authority", "verify-delivery", f"index={msg.index} verdict={verdict.value}")
            if verdict != DeliveryVerdict.ACCEPTED:
                raise ProtocolError(
                    f"honest delivery at index {msg.index} rejected: {verdict.value}", trace
                )

        authority_deposit_and_await_reveal(authority, contract)
        _t(trace, "authority", "deposit", f"amount={contract.fee}")
        sysop_reveal_secret(sysop, contract)
        _t(trace, "sysop", "reveal-secret", f"h_s2={contract.h_s2.hex[:16]}")
        payouts = sysop_payout(sysop, contract, filter_vector, operator_share_pct)
        for address, amount in sorted(payouts.items()):
            _t(trace, "sysop", "pay-operator", f"{address} amount={amount}")
        aggregation = settle_and_decrypt(authority, contract, authority.accepted)
        _t(trace, "authority", "decrypt-aggregate", f"responses={len(aggregation.decrypted_vectors)}")
    except (LedgerError, ProtocolError) as exc:
        if isinstance(exc, ProtocolError):
            exc.trace = exc.trace or trace
            raise
        raise ProtocolError(str(exc), trace) from exc

    return SurveyOutcome(contract, filter_vector, aggregation, payouts, psk_record, trace)
