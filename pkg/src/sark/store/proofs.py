"""Roots, membership/non-membership proofs and their stateless verification.

Node hashing conventions (both structures):

* JMT leaf      ``H(0x10 | key | value_hash)``
* JMT internal  ``H(0x11 | child_0 | ... | child_15)``
* MPT leaf      ``H(0x20 | n | nibbles | value_hash)``
* MPT extension ``H(0x21 | n | nibbles | child)``
* MPT branch    ``H(0x22 | child_0 | ... | child_15)``

Absent children hash as ``PLACEHOLDER``; an empty window's root is
``EMPTY_ROOT``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum

from ..codec import DecodeError, Reader, lp, u64

KEY_SIZE = 32
KEY_NIBBLES = KEY_SIZE * 2
DIGEST = 32

PLACEHOLDER = hashlib.sha256(b"sark/placeholder").digest()
EMPTY_ROOT = hashlib.sha256(b"sark/empty-window").digest()

JMT_LEAF = 0x10
JMT_INTERNAL = 0x11
MPT_LEAF = 0x20
MPT_EXTENSION = 0x21
MPT_BRANCH = 0x22

_INCLUSION = 0x01
_EXCLUSION = 0x02


class StructureKind(IntEnum):
    JMT = 1
    MPT = 2

    @classmethod
    def parse(cls, name: str | StructureKind) -> StructureKind:
        if isinstance(name, StructureKind):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown structure kind {name!r}") from None


def nibbles(key: bytes) -> bytes:
    out = bytearray(len(key) * 2)
    for i, b in enumerate(key):
        out[2 * i] = b >> 4
        out[2 * i + 1] = b & 0x0F
    return bytes(out)


def jmt_leaf_hash(key: bytes, value_hash: bytes) -> bytes:
    return hashlib.sha256(b"\x10" + key + value_hash).digest()


def jmt_internal_hash(children) -> bytes:
    return hashlib.sha256(b"\x11" + b"".join(children)).digest()


@dataclass(frozen=True)
class TrieRoot:
    digest: bytes
    version: int
    kind: StructureKind


@dataclass(frozen=True)
class InclusionProof:
    kind: StructureKind
    key: bytes
    value_digest: bytes
    path: tuple[bytes, ...]
    root: TrieRoot

    def to_bytes(self) -> bytes:
        return _encode(self.kind, _INCLUSION, self.key, self.root, self.path, value=self.value_digest)

    @property
    def node_count(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class ExclusionProof:
    kind: StructureKind
    key: bytes
    path: tuple[bytes, ...]
    root: TrieRoot
    # JMT only: the diverging leaf (key | value_hash), or b"" for an empty slot.
    terminal: bytes = b""

    def to_bytes(self) -> bytes:
        return _encode(self.kind, _EXCLUSION, self.key, self.root, self.path, terminal=self.terminal)

    @property
    def node_count(self) -> int:
        return len(self.path)


def _encode(kind, pkind, key, root, path, value=None, terminal=None) -> bytes:
    out = [bytes((int(kind), pkind)), lp(key)]
    if value is not None:
        out.append(lp(value))
    out += [lp(root.digest), u64(root.version), len(path).to_bytes(4, "big")]
    out += [lp(p) for p in path]
    if terminal is not None:
        out.append(lp(terminal))
    return b"".join(out)


def decode_proof(data: bytes) -> InclusionProof | ExclusionProof:
    r = Reader(data)
    try:
        kind = StructureKind(r.byte())
    except ValueError as e:
        raise DecodeError(str(e)) from None
    pkind = r.byte()
    if pkind not in (_INCLUSION, _EXCLUSION):
        raise DecodeError("unknown proof kind")
    key = r.lp()
    value = r.lp() if pkind == _INCLUSION else None
    root = TrieRoot(r.lp(), r.u64(), kind)
    count = r.u32()
    if count > 4 * KEY_NIBBLES:
        raise DecodeError("proof path too long")
    path = tuple(r.lp() for _ in range(count))
    if pkind == _INCLUSION:
        r.expect_end()
        return InclusionProof(kind, key, value, path, root)
    terminal = r.lp()
    r.expect_end()
    return ExclusionProof(kind, key, path, root, terminal)


# -- verification -----------------------------------------------------------


def _root_matches(proof, expected: TrieRoot | None) -> bool:
    if expected is None:
        return True
    return (
        proof.root.digest == expected.digest
        and proof.root.version == expected.version
        and proof.root.kind == expected.kind
    )


def verify_inclusion(proof: InclusionProof, root: TrieRoot | None = None) -> bool:
    """True iff ``proof`` recomputes its root (and matches ``root`` if given)."""
    try:
        if not _root_matches(proof, root):
            return False
        if len(proof.key) != KEY_SIZE or len(proof.value_digest) != DIGEST:
            return False
        if proof.kind == StructureKind.JMT:
            leaf = jmt_leaf_hash(proof.key, proof.value_digest)
            return _jmt_fold(proof.key, proof.path, leaf) == proof.root.digest
        if proof.kind == StructureKind.MPT:
            found = _mpt_walk(proof.key, proof.path, proof.root.digest)
            return found is not None and found[0] == "leaf" and found[1] == proof.value_digest
    except (ValueError, IndexError, TypeError):
        return False
    return False


def verify_exclusion(proof: ExclusionProof, root: TrieRoot | None = None) -> bool:
    """True iff ``proof`` shows no value for its key under its root."""
    try:
        if not _root_matches(proof, root) or len(proof.key) != KEY_SIZE:
            return False
        if proof.kind == StructureKind.JMT:
            return _jmt_verify_absent(proof)
        if proof.kind == StructureKind.MPT:
            if not proof.path:
                return proof.root.digest == EMPTY_ROOT and proof.terminal == b""
            if proof.terminal != b"":
                return False
            found = _mpt_walk(proof.key, proof.path, proof.root.digest)
            return found is not None and found[0] == "absent"
    except (ValueError, IndexError, TypeError):
        return False
    return False


def _jmt_fold(key: bytes, path: tuple[bytes, ...], current: bytes) -> bytes:
    nib = nibbles(key)
    for depth in range(len(path) - 1, -1, -1):
        step = path[depth]
        bitmap = int.from_bytes(step[:2], "big")
        slot = nib[depth]
        if bitmap >> slot & 1:
            raise ValueError("bitmap marks the path slot")
        siblings = step[2:]
        if len(siblings) != DIGEST * bin(bitmap).count("1"):
            raise ValueError("sibling count does not match bitmap")
        children = []
        offset = 0
        for i in range(16):
            if i == slot:
                children.append(current)
            elif bitmap >> i & 1:
                children.append(siblings[offset : offset + DIGEST])
                offset += DIGEST
            else:
                children.append(PLACEHOLDER)
        current = jmt_internal_hash(children)
    return current


def _jmt_verify_absent(proof: ExclusionProof) -> bool:
    depth = len(proof.path)
    if depth > KEY_NIBBLES - 1:
        return False
    if proof.terminal == b"":
        if depth == 0:
            return proof.root.digest == EMPTY_ROOT
        return _jmt_fold(proof.key, proof.path, PLACEHOLDER) == proof.root.digest
    if len(proof.terminal) != KEY_SIZE + DIGEST:
        return False
    other_key, other_value = proof.terminal[:KEY_SIZE], proof.terminal[KEY_SIZE:]
    if other_key == proof.key:
        return False
    if nibbles(other_key)[:depth] != nibbles(proof.key)[:depth]:
        return False
    leaf = jmt_leaf_hash(other_key, other_value)
    return _jmt_fold(proof.key, proof.path, leaf) == proof.root.digest


def decode_mpt_node(data: bytes):
    """Return ``(tag, payload)`` for an encoded MPT node, validating shape."""
    tag = data[0]
    if tag == MPT_BRANCH:
        if len(data) != 1 + 16 * DIGEST:
            raise ValueError("bad branch")
        return tag, [data[1 + i * DIGEST : 1 + (i + 1) * DIGEST] for i in range(16)]
    if tag in (MPT_LEAF, MPT_EXTENSION):
        n = data[1]
        path = data[2 : 2 + n]
        rest = data[2 + n :]
        if len(path) != n or len(rest) != DIGEST or any(x > 15 for x in path):
            raise ValueError("bad leaf/extension")
        if tag == MPT_EXTENSION and n == 0:
            raise ValueError("empty extension")
        return tag, (path, rest)
    raise ValueError("unknown node tag")


def _mpt_walk(key: bytes, path: tuple[bytes, ...], root_digest: bytes):
    """Follow ``key`` through the proof nodes.

    Returns ``("leaf", value_hash)`` when the key resolves, ``("absent", None)``
    when the walk provably diverges, or ``None`` on any inconsistency.
    """
    nib = nibbles(key)
    expected = root_digest
    pos = 0
    last = len(path) - 1
    for i, node in enumerate(path):
        if hashlib.sha256(node).digest() != expected:
            return None
        tag, payload = decode_mpt_node(node)
        if tag == MPT_BRANCH:
            if pos >= KEY_NIBBLES:
                return None
            child = payload[nib[pos]]
            pos += 1
            if child == PLACEHOLDER:
                return ("absent", None) if i == last else None
            expected = child
        elif tag == MPT_EXTENSION:
            shared, child = payload
            if nib[pos : pos + len(shared)] != shared:
                return ("absent", None) if i == last else None
            pos += len(shared)
            expected = child
        else:
            rest, value_hash = payload
            if i != last or pos + len(rest) != KEY_NIBBLES:
                return None
            if nib[pos:] == rest:
                return ("leaf", value_hash)
            return ("absent", None)
    return None
