"""16-ary sparse Merkle tree in the Jellyfish layout.

Single-leaf subtrees collapse into the leaf itself, so depth grows only with
shared key prefixes and is capped at 64 nibbles.  Every insert hashes the
value, rehashes each internal node on its path and writes the touched nodes
plus the value to the backend.
"""

from __future__ import annotations

import hashlib

from .errors import DuplicateKeyError
from .proofs import (
    DIGEST,
    EMPTY_ROOT,
    KEY_SIZE,
    PLACEHOLDER,
    ExclusionProof,
    InclusionProof,
    StructureKind,
    TrieRoot,
    jmt_internal_hash,
    jmt_leaf_hash,
    nibbles,
)


class _Leaf:
    __slots__ = ("key", "value_hash", "hash")

    def __init__(self, key: bytes, value_hash: bytes):
        self.key = key
        self.value_hash = value_hash
        self.hash = jmt_leaf_hash(key, value_hash)

    def encode(self) -> bytes:
        return b"\x10" + self.key + self.value_hash


class _Internal:
    __slots__ = ("children", "hash")

    def __init__(self):
        self.children = [PLACEHOLDER] * 16
        self.hash = b""

    def rehash(self) -> None:
        self.hash = jmt_internal_hash(self.children)

    def encode(self) -> bytes:
        return b"\x11" + b"".join(self.children)


def node_key(ns: bytes, version: int, path: bytes) -> bytes:
    return ns + b"J" + version.to_bytes(8, "big") + path


def value_key(ns: bytes, version: int, key: bytes) -> bytes:
    return ns + b"V" + version.to_bytes(8, "big") + key


class JmtWindow:
    kind = StructureKind.JMT

    def __init__(self, backend, namespace: bytes, version: int):
        self.backend = backend
        self.ns = namespace
        self.version = version
        self._nodes: dict[bytes, _Leaf | _Internal] = {}
        self.count = 0

    def __contains__(self, key: bytes) -> bool:
        nib = nibbles(key)
        depth = 0
        while True:
            node = self._nodes.get(nib[:depth])
            if node is None:
                return False
            if isinstance(node, _Leaf):
                return node.key == key
            depth += 1

    def insert(self, key: bytes, value: bytes) -> None:
        nib = nibbles(key)
        nodes = self._nodes
        depth = 0
        while True:
            node = nodes.get(nib[:depth])
            if node is None or isinstance(node, _Leaf):
                break
            depth += 1
        if node is not None and node.key == key:
            raise DuplicateKeyError(key.hex())

        value_hash = hashlib.sha256(value).digest()
        self.backend.put(value_key(self.ns, self.version, key), value)
        leaf = _Leaf(key, value_hash)
        touched = []
        if node is None:
            nodes[nib[:depth]] = leaf
            touched.append(nib[:depth])
            bottom = depth - 1
        else:
            other = nibbles(node.key)
            split = depth
            while other[split] == nib[split]:
                split += 1
            for d in range(depth, split + 1):
                nodes[nib[:d]] = _Internal()
            nodes[other[: split + 1]] = node
            nodes[nib[: split + 1]] = leaf
            nodes[nib[:split]].children[other[split]] = node.hash
            touched += [other[: split + 1], nib[: split + 1]]
            bottom = split

        for d in range(bottom, -1, -1):
            inner = nodes[nib[:d]]
            inner.children[nib[d]] = nodes[nib[: d + 1]].hash
            inner.rehash()
            touched.append(nib[:d])
        put = self.backend.put
        for path in touched:
            put(node_key(self.ns, self.version, path), nodes[path].encode())
        self.count += 1

    def root_digest(self) -> bytes:
        root = self._nodes.get(b"")
        return EMPTY_ROOT if root is None else root.hash

    def release(self) -> None:
        self._nodes = {}


def _read(backend, ns, version, path):
    raw = backend.get(node_key(ns, version, path))
    if raw is None:
        return None
    if raw[0] == 0x10:
        return ("leaf", raw[1 : 1 + KEY_SIZE], raw[1 + KEY_SIZE :])
    return ("internal", [raw[1 + i * DIGEST : 1 + (i + 1) * DIGEST] for i in range(16)])


def prove(backend, ns: bytes, root: TrieRoot, key: bytes) -> InclusionProof | ExclusionProof:
    nib = nibbles(key)
    steps: list[bytes] = []
    depth = 0
    node = _read(backend, ns, root.version, b"")
    if node is None:
        return ExclusionProof(StructureKind.JMT, key, (), root, b"")
    while True:
        if node[0] == "leaf":
            _, leaf_key, value_hash = node
            if leaf_key == key:
                return InclusionProof(StructureKind.JMT, key, value_hash, tuple(steps), root)
            return ExclusionProof(StructureKind.JMT, key, tuple(steps), root, leaf_key + value_hash)
        children = node[1]
        slot = nib[depth]
        bitmap = 0
        siblings = []
        for i, child in enumerate(children):
            if i != slot and child != PLACEHOLDER:
                bitmap |= 1 << i
                siblings.append(child)
        steps.append(bitmap.to_bytes(2, "big") + b"".join(siblings))
        if children[slot] == PLACEHOLDER:
            return ExclusionProof(StructureKind.JMT, key, tuple(steps), root, b"")
        depth += 1
        node = _read(backend, ns, root.version, nib[:depth])
