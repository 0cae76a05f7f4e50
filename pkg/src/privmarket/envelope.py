"""Two-secret key escrow and the encrypted response envelope.

The symmetric session key is split between two HMAC-derived secrets: s1 is
public from the moment a survey contract is created, s2 is withheld until
payment lands on the ledger. The session key is SHA-256(s1 || s2), so
holding either half alone decrypts nothing.

Concrete algorithms are fixed so tests can pin exact vectors: SHA-256 for
hashing, HMAC-SHA-256 for secret derivation, AES-256-GCM for authenticated
encryption.

Normative byte layouts (inputs to hashing and commitments, bit-exact):

* bit vector: 4-byte big-endian length n, then ceil(n/8) bytes with bit j
  stored at byte j//8, most significant bit first; padding bits are zero.
* ciphertext: 12-byte cipher nonce, then the AES-GCM body (payload plus
  16-byte authentication tag). H(C_R) commits to nonce, body and tag
  jointly.

Digests render as lowercase hex everywhere (logs, CSV, CLI).
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import struct
from dataclasses import dataclass
from typing import Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .ldp import ResponseVector

PSK_LEN = 32
NONCE_LEN = 16
SECRET_LEN = 32
KEY_LEN = 32
DIGEST_LEN = 32
CIPHER_NONCE_LEN = 12
GCM_TAG_LEN = 16


class DecryptionError(Exception):
    """Authentication failure: wrong key, wrong nonce, or tampered bytes."""


def _expect_len(name: str, value: bytes, expected: int) -> bytes:
    if not isinstance(value, (bytes, bytearray)):
        raise ValueError(f"{name} must be bytes")
    if len(value) != expected:
        raise ValueError(f"{name} must be exactly {expected} bytes, got {len(value)}")
    return bytes(value)


@dataclass(frozen=True)
class PreSharedKey:
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "value", _expect_len("pre-shared key", self.value, PSK_LEN))


@dataclass(frozen=True)
class Nonce:
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "value", _expect_len("nonce", self.value, NONCE_LEN))


@dataclass(frozen=True)
class Secret:
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "value", _expect_len("secret", self.value, SECRET_LEN))


@dataclass(frozen=True)
class SessionKey:
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "value", _expect_len("session key", self.value, KEY_LEN))


@dataclass(frozen=True)
class Digest:
    value: bytes

    def __post_init__(self):
        object.__setattr__(self, "value", _expect_len("digest", self.value, DIGEST_LEN))

    @property
    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class Ciphertext:
    """AES-GCM envelope; body is payload plus the 16-byte tag."""

    cipher_nonce: bytes
    body: bytes

    def __post_init__(self):
        object.__setattr__(
            self, "cipher_nonce", _expect_len("cipher nonce", self.cipher_nonce, CIPHER_NONCE_LEN)
        )
        if not isinstance(self.body, (bytes, bytearray)) or len(self.body) < GCM_TAG_LEN:
            raise ValueError("ciphertext body must hold at least the authentication tag")
        object.__setattr__(self, "body", bytes(self.body))

    def serialize(self) -> bytes:
        return self.cipher_nonce + self.body

    @classmethod
    def deserialize(cls, data: bytes) -> "Ciphertext":
        if len(data) < CIPHER_NONCE_LEN + GCM_TAG_LEN:
            raise ValueError("serialized ciphertext too short")
        return cls(data[:CIPHER_NONCE_LEN], data[CIPHER_NONCE_LEN:])


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hmac_sha256(key: bytes, message: bytes) -> bytes:
    """Raw HMAC-SHA-256 entry point (any key length, e.g. for test vectors)."""
    return _hmac.new(key, message, hashlib.sha256).digest()


def hmac_derive(psk: PreSharedKey, nonce: Nonce) -> Secret:
    """Derive a 32-byte secret: HMAC-SHA-256(key=psk, message=nonce)."""
    return Secret(hmac_sha256(psk.value, nonce.value))


def derive_session_key(s1: Secret, s2: Secret) -> SessionKey:
    """SHA-256 over the 64-byte concatenation s1 || s2, in that order."""
    return SessionKey(sha256(s1.value + s2.value))


def digest(data: bytes) -> Digest:
    """SHA-256 of the exact input bytes."""
    return Digest(sha256(data))


def encrypt(sk: SessionKey, plaintext: bytes, cipher_nonce: bytes) -> Ciphertext:
    """AES-256-GCM. The nonce must be unique per (key, message) pair."""
    nonce = _expect_len("cipher nonce", cipher_nonce, CIPHER_NONCE_LEN)
    body = AESGCM(sk.value).encrypt(nonce, bytes(plaintext), None)
    return Ciphertext(nonce, body)


def decrypt(sk: SessionKey, c: Ciphertext) -> bytes:
    """Recover the plaintext; raises DecryptionError on any authentication failure."""
    try:
        return AESGCM(sk.value).decrypt(c.cipher_nonce, c.body, None)
    except InvalidTag as exc:
        raise DecryptionError("ciphertext failed authentication") from exc


def encode_bit_vector(bits: Sequence[int]) -> bytes:
    """Pack bits into the normative layout (see module docstring)."""
    n = len(bits)
    packed = bytearray((n + 7) // 8)
    for j, b in enumerate(bits):
        if b not in (0, 1):
            raise ValueError("bits must be 0 or 1")
        if b:
            packed[j // 8] |= 0x80 >> (j % 8)
    return struct.pack(">I", n) + bytes(packed)


def decode_bit_vector(data: bytes) -> tuple[int, ...]:
    """Strict inverse of encode_bit_vector.

    Rejects truncated input, trailing bytes and nonzero padding bits;
    every byte string decodes to at most one bit sequence.
    """
    if len(data) < 4:
        raise ValueError("bit vector record truncated before length prefix")
    (n,) = struct.unpack(">I", data[:4])
    expected = 4 + (n + 7) // 8
    if len(data) != expected:
        raise ValueError(f"bit vector record length mismatch: want {expected} bytes, got {len(data)}")
    packed = data[4:]
    bits = tuple((packed[j // 8] >> (7 - j % 8)) & 1 for j in range(n))
    # padding bits beyond n must be zero or decoding would be ambiguous
    if n % 8 and packed and packed[-1] & ((1 << (8 - n % 8)) - 1):
        raise ValueError("nonzero padding bits in bit vector record")
    return bits


def unpack_bit_vector_stream(data: bytes) -> list[tuple[int, ...]]:
    """Parse a concatenation of encoded bit vectors, strictly."""
    out: list[tuple[int, ...]] = []
    offset = 0
    while offset < len(data):
        if len(data) - offset < 4:
            raise ValueError(f"record {len(out)}: truncated length prefix")
        (n,) = struct.unpack(">I", data[offset : offset + 4])
        end = offset + 4 + (n + 7) // 8
        if end > len(data):
            raise ValueError(f"record {len(out)}: truncated body")
        out.append(decode_bit_vector(data[offset:end]))
        offset = end
    return out


def canonical_encode_response(rv: ResponseVector) -> bytes:
    """Stable bytes of a response vector for encryption and hashing."""
    return encode_bit_vector(rv.bits)


def decode_response(data: bytes) -> ResponseVector:
    """Inverse of canonical_encode_response; rejects malformed input."""
    return ResponseVector(decode_bit_vector(data))
