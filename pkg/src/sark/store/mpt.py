"""Hex-nibble Merkle Patricia trie with path compression and in-node values.

Inserts only restructure in-memory nodes; hashing and node writes happen
once, at seal.  Sealed nodes are content-addressed in the backend.
"""

from __future__ import annotations

import hashlib

from .errors import DuplicateKeyError
from .proofs import (
    EMPTY_ROOT,
    MPT_BRANCH,
    PLACEHOLDER,
    ExclusionProof,
    InclusionProof,
    StructureKind,
    TrieRoot,
    decode_mpt_node,
    nibbles,
)


class _Leaf:
    __slots__ = ("rest", "key", "value", "value_hash")

    def __init__(self, rest, key, value, value_hash):
        self.rest = rest
        self.key = key
        self.value = value
        self.value_hash = value_hash


class _Extension:
    __slots__ = ("shared", "child")

    def __init__(self, shared, child):
        self.shared = shared
        self.child = child


class _Branch:
    __slots__ = ("children",)

    def __init__(self):
        self.children = [None] * 16


def _common(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


def _insert(node, nib: bytes, pos: int, leaf_args):
    if node is None:
        key, value, value_hash = leaf_args
        return _Leaf(nib[pos:], key, value, value_hash)
    if isinstance(node, _Branch):
        slot = nib[pos]
        node.children[slot] = _insert(node.children[slot], nib, pos + 1, leaf_args)
        return node
    if isinstance(node, _Leaf):
        rest = nib[pos:]
        if node.rest == rest:
            raise DuplicateKeyError(node.key.hex())
        c = _common(node.rest, rest)
        branch = _Branch()
        branch.children[node.rest[c]] = node
        node.rest = node.rest[c + 1 :]
        key, value, value_hash = leaf_args
        branch.children[rest[c]] = _Leaf(rest[c + 1 :], key, value, value_hash)
        return _Extension(rest[:c], branch) if c else branch
    # extension
    rest = nib[pos:]
    c = _common(node.shared, rest)
    if c == len(node.shared):
        node.child = _insert(node.child, nib, pos + c, leaf_args)
        return node
    branch = _Branch()
    tail = node.shared[c + 1 :]
    branch.children[node.shared[c]] = _Extension(tail, node.child) if tail else node.child
    key, value, value_hash = leaf_args
    branch.children[rest[c]] = _Leaf(rest[c + 1 :], key, value, value_hash)
    return _Extension(rest[:c], branch) if c else branch


def encode_leaf(rest: bytes, value_hash: bytes) -> bytes:
    return b"\x20" + bytes((len(rest),)) + rest + value_hash


def encode_extension(shared: bytes, child: bytes) -> bytes:
    return b"\x21" + bytes((len(shared),)) + shared + child


def encode_branch(children) -> bytes:
    return b"\x22" + b"".join(children)


class MptWindow:
    kind = StructureKind.MPT

    def __init__(self, backend, namespace: bytes, version: int):
        self.backend = backend
        self.ns = namespace
        self.version = version
        self._root = None
        self.count = 0

    def __contains__(self, key: bytes) -> bool:
        nib = nibbles(key)
        node, pos = self._root, 0
        while node is not None:
            if isinstance(node, _Leaf):
                return node.key == key
            if isinstance(node, _Extension):
                if nib[pos : pos + len(node.shared)] != node.shared:
                    return False
                pos += len(node.shared)
                node = node.child
            else:
                node = node.children[nib[pos]]
                pos += 1
        return False

    def insert(self, key: bytes, value: bytes) -> None:
        value_hash = hashlib.sha256(value).digest()
        self._root = _insert(self._root, nibbles(key), 0, (key, value, value_hash))
        self.count += 1

    def _hash(self, node, sink) -> bytes:
        if isinstance(node, _Leaf):
            enc = encode_leaf(node.rest, node.value_hash)
            if sink is not None:
                sink(node.key, node.value)
        elif isinstance(node, _Extension):
            enc = encode_extension(node.shared, self._hash(node.child, sink))
        else:
            enc = encode_branch(
                [PLACEHOLDER if c is None else self._hash(c, sink) for c in node.children]
            )
        digest = hashlib.sha256(enc).digest()
        if sink is not None:
            self.backend.put(self.ns + b"N" + digest, enc)
        return digest

    def root_digest(self) -> bytes:
        return EMPTY_ROOT if self._root is None else self._hash(self._root, None)

    def persist(self) -> bytes:
        if self._root is None:
            return EMPTY_ROOT
        put = self.backend.put
        prefix = self.ns + b"V" + self.version.to_bytes(8, "big")

        def sink(key, value):
            put(prefix + key, value)

        return self._hash(self._root, sink)

    def release(self) -> None:
        self._root = None


def prove(backend, ns: bytes, root: TrieRoot, key: bytes) -> InclusionProof | ExclusionProof:
    if root.digest == EMPTY_ROOT:
        return ExclusionProof(StructureKind.MPT, key, (), root)
    nib = nibbles(key)
    path: list[bytes] = []
    expected = root.digest
    pos = 0
    while True:
        enc = backend.get(ns + b"N" + expected)
        if enc is None:
            raise KeyError(f"missing trie node {expected.hex()}")
        path.append(enc)
        tag, payload = decode_mpt_node(enc)
        if tag == MPT_BRANCH:
            child = payload[nib[pos]]
            pos += 1
            if child == PLACEHOLDER:
                return ExclusionProof(StructureKind.MPT, key, tuple(path), root)
            expected = child
        elif tag == 0x21:
            shared, child = payload
            if nib[pos : pos + len(shared)] != shared:
                return ExclusionProof(StructureKind.MPT, key, tuple(path), root)
            pos += len(shared)
            expected = child
        else:
            rest, value_hash = payload
            if nib[pos:] == rest:
                return InclusionProof(StructureKind.MPT, key, value_hash, tuple(path), root)
            return ExclusionProof(StructureKind.MPT, key, tuple(path), root)
