"""Hashing, one-time Ed25519 keys and Chaum-style RSA blind signatures.

Ordinary signatures (owner one-time keys, Porter keys, Sloop node keys) use
Ed25519.  The issuer's long-term key signs only at mint time, through an RSA
blind-signing session, so the issuer never sees what it signs.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, rsa

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64

# Domain-separation tags prefixed to every signed payload before hashing.
TAG_UPDATE_VECTOR = 0x01
TAG_PORTER_ROOT = 0x02
TAG_LEDGER_ROOT = 0x03

RSA_BITS = 2048
RSA_EXPONENT = 65537


def hash(data: bytes) -> bytes:  # noqa: A001 - the protocol's h(.)
    return hashlib.sha256(data).digest()


def tagged_hash(tag: int, data: bytes) -> bytes:
    return hashlib.sha256(bytes((tag,)) + data).digest()


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes = field(repr=False)


def _raw_public(key: ed25519.Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def keygen(seed: bytes) -> KeyPair:
    """Derive an Ed25519 keypair deterministically from a 32-byte seed."""
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    sk = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(public=_raw_public(sk), secret=bytes(seed))


def public_key(secret: bytes) -> bytes:
    return keygen(secret).public


def sign(secret: bytes, digest: bytes) -> bytes:
    if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
        raise ValueError("malformed signing key")
    return ed25519.Ed25519PrivateKey.from_private_bytes(bytes(secret)).sign(digest)


def verify(public: bytes, digest: bytes, sig: bytes) -> bool:
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(sig), bytes(digest))
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# -- RSA blind signatures ---------------------------------------------------


@dataclass(frozen=True)
class IssuerPublicKey:
    n: int
    e: int = RSA_EXPONENT

    @property
    def size(self) -> int:
        return (self.n.bit_length() + 7) // 8

    def to_bytes(self) -> bytes:
        return self.n.to_bytes(self.size, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> IssuerPublicKey:
        return cls(int.from_bytes(data, "big"))


@dataclass(frozen=True)
class IssuerKey:
    n: int
    e: int
    d: int = field(repr=False)

    @property
    def public(self) -> IssuerPublicKey:
        return IssuerPublicKey(self.n, self.e)

    def to_bytes(self) -> bytes:
        size = (self.n.bit_length() + 7) // 8
        return self.n.to_bytes(size, "big") + self.d.to_bytes(size, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> IssuerKey:
        half = len(data) // 2
        return cls(int.from_bytes(data[:half], "big"), RSA_EXPONENT, int.from_bytes(data[half:], "big"))


def issuer_keygen(bits: int = RSA_BITS) -> IssuerKey:
    priv = rsa.generate_private_key(public_exponent=RSA_EXPONENT, key_size=bits)
    nums = priv.private_numbers()
    return IssuerKey(nums.public_numbers.n, nums.public_numbers.e, nums.d)


def _full_domain_hash(digest: bytes, n: int) -> int:
    """Expand a digest to an integer just below the modulus size."""
    size = (n.bit_length() + 7) // 8 - 1
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(digest + counter.to_bytes(4, "big")).digest()
        counter += 1
    return int.from_bytes(out[:size], "big")


@dataclass(frozen=True)
class BlindingContext:
    blinded_message: bytes
    unblinding_factor: bytes = field(repr=False)
    message_digest: bytes = field(repr=False)
    issuer: IssuerPublicKey = field(repr=False)


def blind(issuer: IssuerPublicKey, message_digest: bytes, rng=None) -> BlindingContext:
    """Blind ``message_digest`` for the issuer.  ``rng`` needs ``randrange``."""
    n = issuer.n
    while True:
        r = rng.randrange(2, n - 1) if rng is not None else 2 + secrets.randbelow(n - 3)
        if math.gcd(r, n) == 1:
            break
    m = _full_domain_hash(message_digest, n)
    blinded = (m * pow(r, issuer.e, n)) % n
    return BlindingContext(
        blinded_message=blinded.to_bytes(issuer.size, "big"),
        unblinding_factor=r.to_bytes(issuer.size, "big"),
        message_digest=message_digest,
        issuer=issuer,
    )


def blind_sign(issuer_secret: IssuerKey, blinded: bytes) -> bytes:
    size = (issuer_secret.n.bit_length() + 7) // 8
    if len(blinded) != size:
        raise ValueError("malformed blinded message")
    m = int.from_bytes(blinded, "big")
    if not 0 < m < issuer_secret.n:
        raise ValueError("malformed blinded message")
    return pow(m, issuer_secret.d, issuer_secret.n).to_bytes(size, "big")


def unblind(ctx: BlindingContext, blinded_sig: bytes) -> bytes:
    n = ctx.issuer.n
    r = int.from_bytes(ctx.unblinding_factor, "big")
    s = (int.from_bytes(blinded_sig, "big") * pow(r, -1, n)) % n
    return s.to_bytes(ctx.issuer.size, "big")


def blind_verify(issuer: IssuerPublicKey, message_digest: bytes, sig: bytes) -> bool:
    try:
        if len(sig) != issuer.size:
            return False
        s = int.from_bytes(sig, "big")
        if not 0 < s < issuer.n:
            return False
        return pow(s, issuer.e, issuer.n) == _full_domain_hash(message_digest, issuer.n)
    except (TypeError, ValueError):
        return False


class Issuer:
    """Issuer side of a blind-signing session.

    Everything the issuer observes is appended to ``transcript``, which is what
    the unlinkability checks inspect.
    """

    def __init__(self, key: IssuerKey):
        self.key = key
        self.transcript: list[bytes] = []

    @property
    def public(self) -> IssuerPublicKey:
        return self.key.public

    def sign_blinded(self, blinded: bytes) -> bytes:
        self.transcript.append(bytes(blinded))
        out = blind_sign(self.key, blinded)
        self.transcript.append(out)
        return out
