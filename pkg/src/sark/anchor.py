"""Ledger anchoring of Porter roots.

A Porter chains its sealed window roots,
``chain_v = H(0x02 | porter_key | v | trie_root_v | chain_{v-1})``, and anchors
the latest chain digest in a Sloop block.  An ``AnchorProof`` carries the
trie roots of a contiguous version range plus the ledger inclusion proof of the
last chain digest, so every window in the range is tied to one ledger root.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import crypto
from .codec import Reader, lp, u64
from .store import InclusionProof, decode_proof, verify_inclusion

GENESIS_CHAIN = bytes(32)


def chain_digest(porter_key: bytes, version: int, trie_root: bytes, prev: bytes) -> bytes:
    return crypto.tagged_hash(crypto.TAG_PORTER_ROOT, lp(porter_key) + u64(version) + trie_root + prev)


def ledger_key(porter_key: bytes) -> bytes:
    return crypto.hash(porter_key)


@dataclass(frozen=True)
class LedgerRoot:
    height: int
    digest: bytes
    block_hash: bytes

    def to_json(self) -> dict:
        return {"height": self.height, "root": self.digest.hex(), "block_hash": self.block_hash.hex()}

    @classmethod
    def from_json(cls, d: dict) -> LedgerRoot:
        return cls(int(d["height"]), bytes.fromhex(d["root"]), bytes.fromhex(d["block_hash"]))


@dataclass(frozen=True)
class AnchorProof:
    porter_key: bytes
    first_version: int
    prev_chain: bytes
    links: tuple[bytes, ...]
    ledger_proof: InclusionProof
    ledger_root: LedgerRoot

    @property
    def anchored_version(self) -> int:
        return self.first_version + len(self.links) - 1

    def chain_head(self) -> bytes:
        c = self.prev_chain
        for k, trie_root in enumerate(self.links):
            c = chain_digest(self.porter_key, self.first_version + k, trie_root, c)
        return c

    def covers(self, version: int, trie_root: bytes) -> bool:
        k = version - self.first_version
        return 0 <= k < len(self.links) and self.links[k] == trie_root

    def verify(self) -> bool:
        """Stateless check; callers still compare ``ledger_root`` to the ledger."""
        try:
            if not self.links:
                return False
            proof = self.ledger_proof
            return (
                proof.key == ledger_key(self.porter_key)
                and proof.value_digest == hashlib.sha256(self.chain_head()).digest()
                and proof.root.digest == self.ledger_root.digest
                and proof.root.version == self.ledger_root.height
                and verify_inclusion(proof)
            )
        except (TypeError, ValueError):
            return False

    def to_bytes(self) -> bytes:
        r = self.ledger_root
        return b"".join(
            [
                lp(self.porter_key),
                u64(self.first_version),
                lp(self.prev_chain),
                len(self.links).to_bytes(4, "big"),
                *[lp(x) for x in self.links],
                lp(self.ledger_proof.to_bytes()),
                u64(r.height),
                lp(r.digest),
                lp(r.block_hash),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> AnchorProof:
        rd = Reader(data)
        porter_key = rd.lp()
        first = rd.u64()
        prev = rd.lp()
        links = tuple(rd.lp() for _ in range(rd.u32()))
        proof = decode_proof(rd.lp())
        if not isinstance(proof, InclusionProof):
            raise ValueError("anchor requires a ledger inclusion proof")
        root = LedgerRoot(rd.u64(), rd.lp(), rd.lp())
        rd.expect_end()
        return cls(porter_key, first, prev, links, proof, root)
