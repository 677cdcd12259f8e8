from .backend import FileBackend, KvBackend, MemoryBackend
from .errors import DuplicateKeyError, PresenceError, StoreError, UnknownVersionError, VersionError
from .proofs import (
    EMPTY_ROOT,
    PLACEHOLDER,
    ExclusionProof,
    InclusionProof,
    StructureKind,
    TrieRoot,
    decode_proof,
    verify_exclusion,
    verify_inclusion,
)
from .store import AuthenticatedStore, Window, build_root

__all__ = [
    "AuthenticatedStore",
    "DuplicateKeyError",
    "EMPTY_ROOT",
    "ExclusionProof",
    "FileBackend",
    "InclusionProof",
    "KvBackend",
    "MemoryBackend",
    "PLACEHOLDER",
    "PresenceError",
    "StoreError",
    "StructureKind",
    "TrieRoot",
    "UnknownVersionError",
    "VersionError",
    "Window",
    "build_root",
    "decode_proof",
    "verify_exclusion",
    "verify_inclusion",
]
