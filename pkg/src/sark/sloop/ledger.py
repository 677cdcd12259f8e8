"""Sloop ledger data: Porter root entries, certified blocks, node storage."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .. import crypto
from ..anchor import LedgerRoot, ledger_key
from ..codec import u64
from ..porter import root_signing_digest
from ..store import AuthenticatedStore, MemoryBackend, StructureKind, TrieRoot

GENESIS_HASH = bytes(32)


@dataclass(frozen=True)
class RootEntry:
    porter_key: bytes
    version: int
    root: bytes
    signature: bytes

    def verify(self) -> bool:
        return crypto.verify(
            self.porter_key, root_signing_digest(self.porter_key, self.version, self.root), self.signature
        )

    def to_json(self) -> dict:
        return {
            "porter": self.porter_key.hex(),
            "version": self.version,
            "root": self.root.hex(),
            "sig": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> RootEntry:
        return cls(bytes.fromhex(d["porter"]), int(d["version"]), bytes.fromhex(d["root"]), bytes.fromhex(d["sig"]))


def period_trie(entries, height: int) -> tuple[AuthenticatedStore, TrieRoot]:
    """Merkle trie over one period's entries, keyed by porter key."""
    store = AuthenticatedStore(StructureKind.JMT, MemoryBackend())
    window = store.open_window(height)
    for e in entries:
        window.insert(ledger_key(e.porter_key), e.root)
    return store, window.seal()


def period_root(entries, height: int) -> bytes:
    return period_trie(entries, height)[1].digest


def block_signing_digest(height: int, prev_hash: bytes, root: bytes) -> bytes:
    return crypto.tagged_hash(crypto.TAG_LEDGER_ROOT, u64(height) + prev_hash + root)


@dataclass(frozen=True)
class LedgerBlock:
    height: int
    prev_hash: bytes
    root: bytes
    entries: tuple[RootEntry, ...]
    proposer: str
    proposer_sig: bytes
    certificate: tuple[tuple[str, bytes], ...]
    committed_at: float

    @property
    def signing_digest(self) -> bytes:
        return block_signing_digest(self.height, self.prev_hash, self.root)

    @property
    def block_hash(self) -> bytes:
        return hashlib.sha256(b"sloop-block" + u64(self.height) + self.prev_hash + self.root).digest()

    def ledger_root(self) -> LedgerRoot:
        return LedgerRoot(self.height, self.root, self.block_hash)

    def entry_for(self, porter_key: bytes) -> RootEntry | None:
        for e in self.entries:
            if e.porter_key == porter_key:
                return e
        return None

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "prev": self.prev_hash.hex(),
            "root": self.root.hex(),
            "entries": [e.to_json() for e in self.entries],
            "proposer": self.proposer,
            "proposer_sig": self.proposer_sig.hex(),
            "cert": [[n, s.hex()] for n, s in self.certificate],
            "committed_at": self.committed_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> LedgerBlock:
        return cls(
            int(d["height"]),
            bytes.fromhex(d["prev"]),
            bytes.fromhex(d["root"]),
            tuple(RootEntry.from_json(e) for e in d["entries"]),
            d["proposer"],
            bytes.fromhex(d["proposer_sig"]),
            tuple((n, bytes.fromhex(s)) for n, s in d["cert"]),
            float(d["committed_at"]),
        )


def verify_block(block: LedgerBlock, prev: LedgerBlock | None, roster: dict[str, bytes]) -> list[str]:
    """Offline re-verification of one block against its predecessor."""
    problems = []
    expected_height = 1 if prev is None else prev.height + 1
    expected_prev = GENESIS_HASH if prev is None else prev.block_hash
    if block.height != expected_height:
        problems.append(f"height {block.height} != {expected_height}")
    if block.prev_hash != expected_prev:
        problems.append("broken hash chain")
    keys = [e.porter_key for e in block.entries]
    if len(set(keys)) != len(keys):
        problems.append("more than one entry per porter")
    if not all(e.verify() for e in block.entries):
        problems.append("entry signature invalid")
    if period_root(block.entries, block.height) != block.root:
        problems.append("root does not recompute from entries")
    digest = block.signing_digest
    signers = {n for n, s in block.certificate if n in roster and crypto.verify(roster[n], digest, s)}
    if len(signers) * 2 <= len(roster):
        problems.append(f"certificate has {len(signers)} valid signatures of {len(roster)}")
    return problems


@dataclass
class LogEntry:
    term: int
    block: LedgerBlock | None = None  # None: leader no-op
    _json: dict | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        if self._json is None:
            self._json = {"term": self.term, "block": self.block.to_json() if self.block else None}
        return self._json

    @classmethod
    def from_json(cls, d: dict) -> LogEntry:
        block = LedgerBlock.from_json(d["block"]) if d.get("block") else None
        return cls(int(d["term"]), block, d)


class NodeStorage:
    """Durable node state: Raft term/vote/log and the applied ledger.

    This in-memory variant survives simulated crashes because the simulator
    keeps the object; ``FileNodeStorage`` survives process restarts.
    """

    def __init__(self):
        self.term = 0
        self.voted_for: str | None = None
        self.log: list[LogEntry] = []
        self.ledger: list[LedgerBlock] = []
        self.applied_index = 0

    def save_vote(self, term: int, voted_for: str | None) -> None:
        self.term, self.voted_for = term, voted_for

    def append_log(self, entries: list[LogEntry]) -> None:
        self.log.extend(entries)

    def truncate_log(self, length: int) -> None:
        del self.log[length:]

    def apply(self, block: LedgerBlock | None, index: int) -> None:
        if block is not None:
            self.ledger.append(block)
        self.applied_index = index

    def close(self) -> None:
        pass


class FileNodeStorage(NodeStorage):
    """``meta.json`` for term/vote, JSON-lines files for the Raft log and ledger."""

    def __init__(self, data_dir: str | os.PathLike):
        super().__init__()
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        meta = self.dir / "meta.json"
        if meta.exists():
            d = json.loads(meta.read_text())
            self.term, self.voted_for = d["term"], d["voted_for"]
        self.log = [LogEntry.from_json(json.loads(x)) for x in _lines(self.dir / "raft.log")]
        for line in _lines(self.dir / "ledger.jsonl"):
            d = json.loads(line)
            if d.get("block"):
                self.ledger.append(LedgerBlock.from_json(d["block"]))
            self.applied_index = d["index"]
        self._log_fh = open(self.dir / "raft.log", "a")
        self._ledger_fh = open(self.dir / "ledger.jsonl", "a")

    def save_vote(self, term, voted_for):
        super().save_vote(term, voted_for)
        tmp = self.dir / "meta.json.tmp"
        with open(tmp, "w") as f:
            f.write(json.dumps({"term": term, "voted_for": voted_for}))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.dir / "meta.json")

    def append_log(self, entries):
        super().append_log(entries)
        for e in entries:
            self._log_fh.write(json.dumps(e.to_json()) + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def truncate_log(self, length):
        super().truncate_log(length)
        self._log_fh.close()
        tmp = self.dir / "raft.log.tmp"
        tmp.write_text("".join(json.dumps(e.to_json()) + "\n" for e in self.log))
        os.replace(tmp, self.dir / "raft.log")
        self._log_fh = open(self.dir / "raft.log", "a")

    def apply(self, block, index):
        super().apply(block, index)
        rec = {"index": index, "block": block.to_json() if block else None}
        self._ledger_fh.write(json.dumps(rec) + "\n")
        self._ledger_fh.flush()

    def close(self):
        self._log_fh.close()
        self._ledger_fh.close()


def _lines(path: Path) -> list[str]:
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            json.loads(line)
        except json.JSONDecodeError:
            break  # torn tail from a crash mid-write
        out.append(line)
    return out
