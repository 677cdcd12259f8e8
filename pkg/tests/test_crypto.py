import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sark import crypto

# RFC 8032 section 7.1, TEST 1 (empty message).
RFC_SECRET = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_PUBLIC = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
RFC_SIG = bytes.fromhex(
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155"
    "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)


@pytest.fixture(scope="module")
def issuer_key():
    return crypto.issuer_keygen()


def test_hash_of_empty_input_matches_the_sha256_vector():
    assert crypto.hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert crypto.hash(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_trailing_zero_changes_the_digest():
    rng = random.Random(1)
    for _ in range(1000):
        x = rng.randbytes(32)
        assert crypto.hash(x) != crypto.hash(x + b"\x00")


def test_no_collisions_over_a_hundred_thousand_inputs():
    rng = random.Random(2)
    inputs = {rng.randbytes(16) for _ in range(100_000)}
    assert len({crypto.hash(x) for x in inputs}) == len(inputs)


def test_domain_tags_separate_contexts():
    data = b"payload"
    tagged = {crypto.tagged_hash(t, data) for t in (crypto.TAG_UPDATE_VECTOR, crypto.TAG_PORTER_ROOT, crypto.TAG_LEDGER_ROOT)}
    assert len(tagged) == 3
    assert crypto.hash(data) not in tagged


def test_ed25519_matches_rfc8032():
    kp = crypto.keygen(RFC_SECRET)
    assert kp.public == RFC_PUBLIC
    assert crypto.sign(RFC_SECRET, b"") == RFC_SIG
    assert crypto.verify(RFC_PUBLIC, b"", RFC_SIG)


def test_distinct_seeds_give_distinct_keys():
    rng = random.Random(3)
    for _ in range(1000):
        s1, s2 = rng.randbytes(32), rng.randbytes(32)
        assert crypto.keygen(s1).public != crypto.keygen(s2).public
    assert crypto.keygen(s1).public == crypto.keygen(s1).public


def test_seed_length_is_checked():
    with pytest.raises(ValueError):
        crypto.keygen(b"short")
    with pytest.raises(ValueError):
        crypto.sign(b"short", bytes(32))


def test_wrong_key_and_flipped_bits_fail():
    rng = random.Random(4)
    a = crypto.keygen(rng.randbytes(32))
    b = crypto.keygen(rng.randbytes(32))
    digest = crypto.hash(b"m")
    sig = crypto.sign(a.secret, digest)
    assert not crypto.verify(b.public, digest, sig)
    for _ in range(100):
        bad = bytearray(sig)
        bit = rng.randrange(len(bad) * 8)
        bad[bit // 8] ^= 1 << (bit % 8)
        assert not crypto.verify(a.public, digest, bytes(bad))


@pytest.mark.parametrize(
    "public, digest, sig",
    [(b"", b"", b""), (b"\x00" * 31, bytes(32), bytes(64)), (bytes(32), bytes(32), b"x" * 10), (None, b"", b"")],
)
def test_malformed_verify_inputs_return_false(public, digest, sig):
    assert crypto.verify(public, digest, sig) is False


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.binary(max_size=200))
def test_sign_verify_roundtrip(seed, message):
    kp = crypto.keygen(seed)
    d = crypto.hash(message)
    assert crypto.verify(kp.public, d, crypto.sign(kp.secret, d))
    assert crypto.public_key(kp.secret) == kp.public


def test_blind_roundtrip(issuer_key):
    digest = crypto.hash(b"genesis")
    ctx = crypto.blind(issuer_key.public, digest)
    sig = crypto.unblind(ctx, crypto.blind_sign(issuer_key, ctx.blinded_message))
    assert crypto.blind_verify(issuer_key.public, digest, sig)
    assert not crypto.blind_verify(issuer_key.public, crypto.hash(b"other"), sig)


def test_blinding_is_randomized(issuer_key):
    digest = crypto.hash(b"same message")
    seen = {crypto.blind(issuer_key.public, digest).blinded_message for _ in range(100)}
    assert len(seen) == 100


def test_swapped_unblinding_factor_fails(issuer_key):
    digest = crypto.hash(b"m")
    c1 = crypto.blind(issuer_key.public, digest)
    c2 = crypto.blind(issuer_key.public, digest)
    s1 = crypto.blind_sign(issuer_key, c1.blinded_message)
    swapped = crypto.BlindingContext(c1.blinded_message, c2.unblinding_factor, digest, issuer_key.public)
    assert not crypto.blind_verify(issuer_key.public, digest, crypto.unblind(swapped, s1))


def test_malformed_blinded_message_is_an_error(issuer_key):
    with pytest.raises(ValueError):
        crypto.blind_sign(issuer_key, b"\x01\x02")
    with pytest.raises(ValueError):
        crypto.blind_sign(issuer_key, bytes(issuer_key.public.size))


def test_blind_verify_never_raises_on_garbage(issuer_key):
    pub = issuer_key.public
    assert not crypto.blind_verify(pub, bytes(32), b"")
    assert not crypto.blind_verify(pub, bytes(32), b"\xff" * pub.size)


def test_issuer_transcript_is_disjoint_from_digest_and_signature(issuer_key):
    issuer = crypto.Issuer(issuer_key)
    rng = random.Random(5)
    for _ in range(20):
        digest = crypto.hash(rng.randbytes(20))
        ctx = crypto.blind(issuer.public, digest)
        sig = crypto.unblind(ctx, issuer.sign_blinded(ctx.blinded_message))
        assert crypto.blind_verify(issuer.public, digest, sig)
        for item in issuer.transcript:
            assert digest not in item and sig not in item


def test_issuer_key_serialization(issuer_key):
    again = crypto.IssuerKey.from_bytes(issuer_key.to_bytes())
    assert again == issuer_key
    assert crypto.IssuerPublicKey.from_bytes(issuer_key.public.to_bytes()) == issuer_key.public
