import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privmarket.envelope import (
    Ciphertext,
    DecryptionError,
    Digest,
    Nonce,
    PreSharedKey,
    Secret,
    SessionKey,
    canonical_encode_response,
    decode_bit_vector,
    decode_response,
    decrypt,
    derive_session_key,
    digest,
    encode_bit_vector,
    encrypt,
    hmac_derive,
    hmac_sha256,
    unpack_bit_vector_stream,
)
from privmarket.ldp import ResponseVector


class TestNewtypes:
    @pytest.mark.parametrize(
        "cls,length",
        [(PreSharedKey, 32), (Nonce, 16), (Secret, 32), (SessionKey, 32), (Digest, 32)],
    )
    def test_length_enforced(self, cls, length):
        cls(b"\x00" * length)
        with pytest.raises(ValueError):
            cls(b"\x00" * (length - 1))
        with pytest.raises(ValueError):
            cls(b"\x00" * (length + 1))

    def test_ciphertext_needs_tag(self):
        Ciphertext(b"\x00" * 12, b"\x00" * 16)
        with pytest.raises(ValueError):
            Ciphertext(b"\x00" * 12, b"\x00" * 15)
        with pytest.raises(ValueError):
            Ciphertext(b"\x00" * 11, b"\x00" * 16)


class TestHmacDerive:
    def test_rfc4231_case_1(self):
        # published HMAC-SHA-256 vector: 20 bytes of 0x0b, "Hi There"
        out = hmac_sha256(b"\x0b" * 20, b"Hi There")
        assert out.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"

    def test_deterministic(self):
        psk = PreSharedKey(bytes(range(32)))
        nonce = Nonce(bytes(range(16)))
        assert hmac_derive(psk, nonce) == hmac_derive(psk, nonce)

    def test_distinct_nonces_give_distinct_secrets(self):
        rng = np.random.default_rng(42)
        psk = PreSharedKey(rng.bytes(32))
        for _ in range(20):
            n1, n2 = Nonce(rng.bytes(16)), Nonce(rng.bytes(16))
            assert n1 != n2
            assert hmac_derive(psk, n1) != hmac_derive(psk, n2)


class TestSessionKey:
    def test_zero_secrets_vector(self):
        # SHA-256 over 64 zero bytes, computed with an independent oracle
        sk = derive_session_key(Secret(b"\x00" * 32), Secret(b"\x00" * 32))
        assert sk.value.hex() == "f5a5fd42d16a20302798ef6ed309979b43003d2320d9f0e8ea9831a92759fb4b"

    def test_order_sensitive(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a, b = Secret(rng.bytes(32)), Secret(rng.bytes(32))
            assert derive_session_key(a, b) != derive_session_key(b, a)

    def test_deterministic(self):
        a, b = Secret(b"\x01" * 32), Secret(b"\x02" * 32)
        assert derive_session_key(a, b) == derive_session_key(a, b)


class TestDigest:
    def test_empty_string_vector(self):
        assert digest(b"").hex == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

    def test_abc_vector(self):
        assert digest(b"abc").hex == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

    def test_stable(self):
        assert digest(b"payload") == digest(b"payload")


class TestAead:
    def test_gcm_known_answer_empty_plaintext(self):
        # AES-256-GCM, zero key, zero nonce, empty plaintext (published KAT)
        sk = SessionKey(b"\x00" * 32)
        c = encrypt(sk, b"", b"\x00" * 12)
        assert c.body.hex() == "530f8afbc74536b9a963b4f1c4cb738b"

    def test_gcm_known_answer_zero_block(self):
        sk = SessionKey(b"\x00" * 32)
        c = encrypt(sk, b"\x00" * 16, b"\x00" * 12)
        assert c.body.hex() == (
            "cea7403d4d606b6e074ec5d3baf39d18" "d0d1c8a799996bf0265b98b5d48ab919"
        )

    @given(st.binary(max_size=4096))
    @settings(deadline=None, max_examples=40)
    def test_round_trip(self, message):
        rng = np.random.default_rng(len(message) + 1)
        sk = SessionKey(rng.bytes(32))
        c = encrypt(sk, message, rng.bytes(12))
        assert decrypt(sk, c) == message

    def test_distinct_nonces_distinct_ciphertexts(self):
        sk = SessionKey(b"\x11" * 32)
        message = b"same message"
        rng = np.random.default_rng(3)
        for _ in range(10):
            c1 = encrypt(sk, message, rng.bytes(12))
            c2 = encrypt(sk, message, rng.bytes(12))
            assert c1.body != c2.body

    def test_wrong_key_fails(self):
        sk = SessionKey(b"\x22" * 32)
        c = encrypt(sk, b"secret payload", b"\x07" * 12)
        flipped = bytearray(sk.value)
        flipped[0] ^= 0x01
        with pytest.raises(DecryptionError):
            decrypt(SessionKey(bytes(flipped)), c)

    def test_tampered_body_fails(self):
        sk = SessionKey(b"\x22" * 32)
        c = encrypt(sk, b"secret payload", b"\x07" * 12)
        body = bytearray(c.body)
        body[3] ^= 0x80
        with pytest.raises(DecryptionError):
            decrypt(sk, Ciphertext(c.cipher_nonce, bytes(body)))

    def test_serialize_round_trip(self):
        sk = SessionKey(b"\x22" * 32)
        c = encrypt(sk, b"abc", b"\x07" * 12)
        assert Ciphertext.deserialize(c.serialize()) == c
        assert c.serialize()[:12] == c.cipher_nonce


class TestEscrowSoundness:
    def test_s1_plus_random_guesses_never_decrypt(self):
        rng = np.random.default_rng(99)
        psk = PreSharedKey(rng.bytes(32))
        n1, n2 = Nonce(rng.bytes(16)), Nonce(rng.bytes(16))
        s1, s2 = hmac_derive(psk, n1), hmac_derive(psk, n2)
        c = encrypt(derive_session_key(s1, s2), b"response bytes", rng.bytes(12))
        for _ in range(2000):
            guess = derive_session_key(s1, Secret(rng.bytes(32)))
            with pytest.raises(DecryptionError):
                decrypt(guess, c)


class TestBitVectorCodec:
    def test_hand_computed_layout(self):
        # n=3, bits 101: length prefix then 0xA0 (MSB-first packing)
        assert encode_bit_vector([1, 0, 1]) == bytes.fromhex("00000003a0")

    def test_zero_byte(self):
        assert encode_bit_vector([0] * 8) == bytes.fromhex("0000000800")

    def test_canonical_response_encoding(self):
        assert canonical_encode_response(ResponseVector([1, 0, 1])) == bytes.fromhex("00000003a0")

    @given(st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=333))
    @settings(deadline=None)
    def test_round_trip(self, bits):
        assert decode_bit_vector(encode_bit_vector(bits)) == tuple(bits)

    def test_decode_rejects_trailing_garbage(self):
        with pytest.raises(ValueError):
            decode_bit_vector(encode_bit_vector([1, 0, 1]) + b"\x00")

    def test_decode_rejects_truncation(self):
        data = encode_bit_vector([1] * 20)
        with pytest.raises(ValueError):
            decode_bit_vector(data[:-1])
        with pytest.raises(ValueError):
            decode_bit_vector(b"\x00\x00")

    def test_decode_rejects_nonzero_padding(self):
        with pytest.raises(ValueError):
            decode_bit_vector(bytes.fromhex("00000003a1"))

    def test_response_round_trip(self):
        rv = ResponseVector([0, 1, 1, 0, 1, 0, 0, 0, 1])
        assert decode_response(canonical_encode_response(rv)) == rv

    def test_stream_parses_concatenation(self):
        blob = encode_bit_vector([1, 0]) + encode_bit_vector([0, 1]) + encode_bit_vector([1, 1])
        assert unpack_bit_vector_stream(blob) == [(1, 0), (0, 1), (1, 1)]

    def test_stream_rejects_partial_record(self):
        blob = encode_bit_vector([1, 0]) + b"\x00\x00"
        with pytest.raises(ValueError, match="record 1"):
            unpack_bit_vector_stream(blob)
