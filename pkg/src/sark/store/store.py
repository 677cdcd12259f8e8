"""Versioned, window-scoped authenticated store over a ``KvBackend``."""

from __future__ import annotations

from . import jmt, mpt
from .backend import KvBackend
from .errors import PresenceError, StoreError, UnknownVersionError, VersionError
from .proofs import EMPTY_ROOT, KEY_SIZE, ExclusionProof, InclusionProof, StructureKind, TrieRoot

_WINDOWS = {StructureKind.JMT: jmt.JmtWindow, StructureKind.MPT: mpt.MptWindow}
_PROVERS = {StructureKind.JMT: jmt.prove, StructureKind.MPT: mpt.prove}


class Window:
    """A single-writer, write-once accumulation window."""

    def __init__(self, store: AuthenticatedStore, version: int):
        self.store = store
        self.version = version
        self.sealed = False
        self._impl = _WINDOWS[store.kind](store.backend, store.namespace, version)

    @property
    def kind(self) -> StructureKind:
        return self.store.kind

    def __contains__(self, key: bytes) -> bool:
        return key in self._impl

    def __len__(self) -> int:
        return self._impl.count

    def insert(self, key: bytes, value: bytes) -> None:
        if self.sealed:
            raise StoreError(f"window {self.version} is sealed")
        if len(key) != KEY_SIZE:
            raise ValueError("trie keys are 32 bytes")
        self._impl.insert(key, value)

    def root_digest(self) -> bytes:
        return self._impl.root_digest()

    def seal(self) -> TrieRoot:
        if self.sealed:
            raise StoreError(f"window {self.version} already sealed")
        if self.kind == StructureKind.MPT:
            digest = self._impl.persist()
        else:
            digest = self._impl.root_digest()
        self.sealed = True
        self._impl.release()
        return self.store._record_seal(self.version, digest)


class AuthenticatedStore:
    """Sealed windows stay queryable by version; nothing is replayed."""

    def __init__(self, kind: StructureKind | str, backend: KvBackend, namespace: bytes = b""):
        self.kind = StructureKind.parse(kind)
        self.backend = backend
        self.namespace = namespace
        self._roots: dict[int, TrieRoot] = {}
        for k, v in backend.iterate(namespace + b"R"):
            version = int.from_bytes(k[len(namespace) + 1 :], "big")
            self._roots[version] = TrieRoot(v[1:], version, StructureKind(v[0]))
        self.latest_version: int | None = max(self._roots, default=None)
        self._opened: int | None = self.latest_version
        self.window: Window | None = None

    def open_window(self, version: int) -> Window:
        expected = 0 if self._opened is None else self._opened + 1
        if self.window is not None and not self.window.sealed:
            raise VersionError(f"window {self.window.version} is still open")
        if self._opened is None:
            if version < 0:
                raise VersionError("negative version")
        elif version != expected:
            raise VersionError(f"expected version {expected}, got {version}")
        self._opened = version
        self.window = Window(self, version)
        return self.window

    def _record_seal(self, version: int, digest: bytes) -> TrieRoot:
        root = TrieRoot(digest, version, self.kind)
        self.backend.put(
            self.namespace + b"R" + version.to_bytes(8, "big"), bytes((int(self.kind),)) + digest
        )
        self._roots[version] = root
        self.latest_version = version
        return root

    def versions(self) -> list[int]:
        return sorted(self._roots)

    def root(self, version: int) -> TrieRoot:
        try:
            return self._roots[version]
        except KeyError:
            raise UnknownVersionError(f"version {version} not sealed") from None

    def _prove(self, version: int, key: bytes):
        root = self.root(version)
        if root.kind != self.kind:
            raise StoreError("version sealed under a different structure")
        return _PROVERS[self.kind](self.backend, self.namespace, root, key)

    def prove_inclusion(self, version: int, key: bytes) -> InclusionProof:
        proof = self._prove(version, key)
        if not isinstance(proof, InclusionProof):
            raise PresenceError(f"key {key.hex()} absent from version {version}")
        return proof

    def prove_exclusion(self, version: int, key: bytes) -> ExclusionProof:
        proof = self._prove(version, key)
        if not isinstance(proof, ExclusionProof):
            raise PresenceError(f"key {key.hex()} present in version {version}")
        return proof

    def prove(self, version: int, key: bytes) -> InclusionProof | ExclusionProof:
        return self._prove(version, key)

    def get_value(self, version: int, key: bytes) -> bytes | None:
        self.root(version)
        return self.backend.get(self.namespace + b"V" + version.to_bytes(8, "big") + key)


def build_root(kind: StructureKind | str, items: dict[bytes, bytes]) -> tuple[AuthenticatedStore, TrieRoot]:
    """One-shot helper: a fresh in-memory store sealed over ``items`` at version 0."""
    from .backend import MemoryBackend

    store = AuthenticatedStore(kind, MemoryBackend())
    window = store.open_window(0)
    for k in sorted(items):
        window.insert(k, items[k])
    return store, window.seal()


__all__ = ["AuthenticatedStore", "Window", "build_root", "EMPTY_ROOT"]
