"""A Sloop validator node.

Raft supplies leader election, heartbeats and log replication.  On top of it
the leader runs the two-stage block commitment: after the block timeout it
broadcasts a proposal (Block Creation -> Block Commitment), gathers
signatures over ``(height, prev_hash, root)`` until a majority certifies the
root or the commitment timeout expires, and then replicates the certified
block as a Raft log entry.  Followers never learn ``T_b`` or ``T_c``; they
change phase only on leader messages.

The node is a deterministic state machine: ``on_message`` and ``tick`` return
``(destination, message)`` pairs and never touch the network themselves.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum

from .. import crypto
from ..anchor import ledger_key
from ..store import InclusionProof
from .ledger import (
    GENESIS_HASH,
    LedgerBlock,
    LogEntry,
    NodeStorage,
    RootEntry,
    block_signing_digest,
    period_root,
    period_trie,
)

log = logging.getLogger(__name__)


class Role(Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


class NodePhase(Enum):
    BLOCK_CREATION = "block_creation"
    BLOCK_COMMITMENT = "block_commitment"


@dataclass
class SloopConfig:
    node_id: str
    seed: bytes
    roster: dict[str, bytes]  # node id -> verification key, self included
    heartbeat: float = 100.0
    block_timeout: float = 2000.0
    commit_timeout: float = 500.0
    election_timeout: tuple[float, float] = (300.0, 600.0)
    porter_keys: dict[str, bytes] | None = None  # permissioned porter registry
    genesis_time: float = 0.0

    def __post_init__(self):
        if self.node_id not in self.roster:
            raise ValueError("roster must include this node")
        if self.block_timeout <= self.heartbeat:
            raise ValueError("block timeout must exceed the heartbeat")
        if self.commit_timeout <= 0:
            raise ValueError("commit timeout must be positive")
        lo, hi = self.election_timeout
        if not 0 < lo <= hi:
            raise ValueError("bad election timeout range")

    @property
    def peers(self) -> list[str]:
        return sorted(n for n in self.roster if n != self.node_id)


@dataclass
class _Proposal:
    height: int
    prev_hash: bytes
    root: bytes
    entries: tuple[RootEntry, ...]
    deadline: float
    signatures: dict[str, bytes] = field(default_factory=dict)

    def message(self, term: int, leader: str, proposer_sig: bytes) -> dict:
        return {
            "type": "block_proposal",
            "term": term,
            "leader": leader,
            "height": self.height,
            "prev": self.prev_hash.hex(),
            "root": self.root.hex(),
            "entries": [e.to_json() for e in self.entries],
            "proposer_sig": proposer_sig.hex(),
        }


class SloopNode:
    def __init__(self, config: SloopConfig, storage: NodeStorage | None = None, now: float = 0.0, rng=None):
        self.config = config
        self.id = config.node_id
        self.key = crypto.keygen(config.seed)
        self.storage = storage if storage is not None else NodeStorage()
        self.rng = rng if rng is not None else random.Random(self.id)
        self.n = len(config.roster)

        self.role = Role.FOLLOWER
        self.leader_id: str | None = None
        self.phase = NodePhase.BLOCK_CREATION
        self.commit_index = self.storage.applied_index
        self.election_deadline = now + self._election_timeout()
        self.votes: set[str] = set()
        self.prevotes: set[str] = set()
        self.last_leader_contact = float("-inf")
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self.next_heartbeat = now
        self.proposal: _Proposal | None = None
        self.pending_proposal: dict | None = None  # last proposal signed as follower

        # Porter roots: first-seen (porter, version) -> root guards equivocation.
        self.seen: dict[tuple[bytes, int], bytes] = {}
        self.first_entries: dict[tuple[bytes, int], RootEntry] = {}
        # Equivocated (porter, version) pairs never go into a proposal.
        self.conflicted: set[tuple[bytes, int]] = set()
        # The second, rejected entry for each conflicted pair: shareable evidence.
        self.evidence: dict[tuple[bytes, int], RootEntry] = {}
        self.buffer: dict[bytes, RootEntry] = {}
        self.committed_versions: dict[bytes, int] = {}
        for block in self.storage.ledger:
            self._note_committed(block)
        self.porter_routes: dict[bytes, str] = {}
        self.incidents: list[dict] = []
        self.events: list[tuple] = []
        self._trie_cache: dict[int, tuple] = {}

    # -- small helpers ------------------------------------------------------

    @property
    def term(self) -> int:
        return self.storage.term

    @property
    def log(self) -> list[LogEntry]:
        return self.storage.log

    @property
    def ledger(self) -> list[LedgerBlock]:
        return self.storage.ledger

    def _election_timeout(self) -> float:
        lo, hi = self.config.election_timeout
        return self.rng.uniform(lo, hi)

    def _last_index(self) -> int:
        return len(self.log)

    def _term_at(self, index: int) -> int:
        return self.log[index - 1].term if index > 0 else 0

    def _last_block(self) -> LedgerBlock | None:
        for entry in reversed(self.log):
            if entry.block is not None:
                return entry.block
        return self.ledger[-1] if self.ledger else None

    def _majority(self, count: int) -> bool:
        return count * 2 > self.n

    def _broadcast(self, msg: dict) -> list[tuple[str, dict]]:
        return [(p, msg) for p in self.config.peers]

    def _set_term(self, term: int, voted_for: str | None) -> None:
        self.storage.save_vote(term, voted_for)

    def _step_down(self, term: int, now: float) -> None:
        if term > self.term:
            self._set_term(term, None)
        if self.role == Role.LEADER and self.proposal is not None:
            # Keep the proposal so a re-elected node can re-broadcast it.
            self.pending_proposal = self.proposal.message(self.term, self.id, b"")
            self.phase = NodePhase.BLOCK_COMMITMENT
        self.proposal = None
        if self.role != Role.FOLLOWER:
            self.events.append((now, "step_down", self.term))
        self.role = Role.FOLLOWER

    def _note_committed(self, block: LedgerBlock) -> None:
        for e in block.entries:
            if e.version > self.committed_versions.get(e.porter_key, -1):
                self.committed_versions[e.porter_key] = e.version
            self.seen[(e.porter_key, e.version)] = e.root
            self.first_entries[(e.porter_key, e.version)] = e

    def block_deadline(self) -> float:
        last = self._last_block()
        base = self.config.genesis_time if last is None else last.committed_at
        return base + self.config.block_timeout

    # -- actor interface ----------------------------------------------------

    def next_wakeup(self) -> float:
        if self.role != Role.LEADER:
            return self.election_deadline
        t = self.next_heartbeat
        if self.proposal is not None:
            t = min(t, self.proposal.deadline)
        else:
            t = min(t, self.block_deadline())
        return t

    def tick(self, now: float) -> list[tuple[str, dict]]:
        out: list[tuple[str, dict]] = []
        if self.role != Role.LEADER:
            if now >= self.election_deadline:
                out += self._start_election(now)
            return out
        if self.proposal is not None and now >= self.proposal.deadline:
            self._abort_proposal(now)
        if self.proposal is None and now >= self.block_deadline():
            out += self._propose(now)
        if now >= self.next_heartbeat:
            out += self._replicate(now)
        return out

    def on_message(self, src: str, msg: dict, now: float) -> list[tuple[str, dict]]:
        kind = msg.get("type")
        handler = _HANDLERS.get(kind)
        if handler is None:
            reply = self.handle_query(msg)
            return [(src, reply)] if reply is not None else []
        term = msg.get("term")
        if term is not None and not isinstance(term, int):
            log.warning("node %s: dropping %s with non-integer term from %s", self.id, kind, src)
            return []
        if term is not None and term > self.term:
            self._step_down(term, now)
        try:
            return handler(self, src, msg, now)
        except (KeyError, TypeError, ValueError) as e:
            log.warning("node %s: dropping malformed %s from %s: %r", self.id, kind, src, e)
            return []

    # -- elections ----------------------------------------------------------

    def _start_election(self, now: float) -> list[tuple[str, dict]]:
        """Pre-vote first: only a majority of pre-votes lets the term advance."""
        self._step_down(self.term, now)
        self.leader_id = None
        self.election_deadline = now + self._election_timeout()
        self.prevotes = {self.id}
        self.events.append((now, "election_start", self.term))
        if self._majority(len(self.prevotes)):
            return self._campaign(now)
        last = self._last_index()
        return self._broadcast(
            {
                "type": "pre_vote",
                "next_term": self.term + 1,
                "candidate": self.id,
                "last_log_index": last,
                "last_log_term": self._term_at(last),
            }
        )

    def _on_pre_vote(self, src, msg, now):
        last = self._last_index()
        leader_alive = self.role == Role.LEADER or now - self.last_leader_contact < 2 * self.config.heartbeat
        log_ok = (msg["last_log_term"], msg["last_log_index"]) >= (self._term_at(last), last)
        granted = msg["next_term"] > self.term and log_ok and not leader_alive
        return [(src, {"type": "pre_vote_response", "next_term": msg["next_term"], "granted": granted})]

    def _on_pre_vote_response(self, src, msg, now):
        if self.role != Role.FOLLOWER or self.leader_id is not None:
            return []
        if msg["next_term"] != self.term + 1 or not msg["granted"]:
            return []
        self.prevotes.add(src)
        if self._majority(len(self.prevotes)):
            self.prevotes = set()
            return self._campaign(now)
        return []

    def _campaign(self, now: float) -> list[tuple[str, dict]]:
        self.role = Role.CANDIDATE
        self._set_term(self.term + 1, self.id)
        self.votes = {self.id}
        self.election_deadline = now + self._election_timeout()
        self.events.append((now, "candidate", self.term))
        if self._majority(len(self.votes)):
            return self._become_leader(now)
        last = self._last_index()
        return self._broadcast(
            {
                "type": "request_vote",
                "term": self.term,
                "candidate": self.id,
                "last_log_index": last,
                "last_log_term": self._term_at(last),
            }
        )

    def _on_request_vote(self, src, msg, now):
        granted = False
        if msg["term"] == self.term and self.voted_for_ok(msg["candidate"]):
            last = self._last_index()
            mine = (self._term_at(last), last)
            theirs = (msg["last_log_term"], msg["last_log_index"])
            if theirs >= mine:
                granted = True
                self._set_term(self.term, msg["candidate"])
                self.election_deadline = now + self._election_timeout()
        return [(src, {"type": "vote", "term": self.term, "granted": granted, "voter": self.id})]

    def voted_for_ok(self, candidate: str) -> bool:
        return self.storage.voted_for in (None, candidate)

    def _on_vote(self, src, msg, now):
        if self.role != Role.CANDIDATE or msg["term"] != self.term or not msg["granted"]:
            return []
        self.votes.add(src)
        if self._majority(len(self.votes)):
            return self._become_leader(now)
        return []

    def _become_leader(self, now: float) -> list[tuple[str, dict]]:
        self.role = Role.LEADER
        self.leader_id = self.id
        last = self._last_index()
        self.next_index = {p: last + 1 for p in self.config.peers}
        self.match_index = {p: 0 for p in self.config.peers}
        self.storage.append_log([LogEntry(self.term)])  # no-op commits earlier terms
        self.events.append((now, "leader", self.term))
        out = []
        pending = self.pending_proposal
        last_block = self._last_block()
        next_height = 1 if last_block is None else last_block.height + 1
        if (
            self.phase == NodePhase.BLOCK_COMMITMENT
            and pending is not None
            and pending["height"] == next_height
        ):
            entries = tuple(RootEntry.from_json(e) for e in pending["entries"])
            out += self._start_proposal(now, next_height, bytes.fromhex(pending["prev"]), entries, rebroadcast=True)
        else:
            self.phase = NodePhase.BLOCK_CREATION
            self.pending_proposal = None
        self._advance_commit(now)
        return self._replicate(now) + out

    # -- replication --------------------------------------------------------

    def _append_message(self, peer: str, kind: str = "append_entries") -> dict:
        nxt = self.next_index[peer]
        prev = nxt - 1
        entries = [e.to_json() for e in self.log[prev:]]
        if not entries and kind == "append_entries":
            kind = "heartbeat"
        return {
            "type": kind,
            "term": self.term,
            "leader": self.id,
            "prev_index": prev,
            "prev_term": self._term_at(prev),
            "entries": entries,
            "leader_commit": self.commit_index,
        }

    def _replicate(self, now: float, kind: str = "append_entries") -> list[tuple[str, dict]]:
        self.next_heartbeat = now + self.config.heartbeat
        return [(p, self._append_message(p, kind)) for p in self.config.peers]

    def _on_append_entries(self, src, msg, now):
        if msg["term"] < self.term:
            return [(src, {"type": "append_response", "term": self.term, "success": False, "match_index": 0})]
        if self.role != Role.FOLLOWER:
            self._step_down(msg["term"], now)
        self.leader_id = msg["leader"]
        self.last_leader_contact = now
        self.election_deadline = now + self._election_timeout()
        prev = msg["prev_index"]
        if prev > self._last_index() or self._term_at(prev) != msg["prev_term"]:
            hint = min(prev - 1, self._last_index())
            return [(src, {"type": "append_response", "term": self.term, "success": False, "match_index": max(hint, 0)})]
        index = prev
        new = []
        for raw in msg["entries"]:
            index += 1
            if index <= self._last_index():
                if self._term_at(index) == raw["term"]:
                    continue
                if index <= self.commit_index:
                    raise AssertionError("leader tried to overwrite a committed entry")
                self.storage.truncate_log(index - 1)
            new.append(LogEntry.from_json(raw))
        if new:
            self.storage.append_log(new)
            if any(e.block is not None for e in new):
                # local log updated -> back to Block Creation
                self.phase = NodePhase.BLOCK_CREATION
                last_block = self._last_block()
                if self.pending_proposal and last_block and self.pending_proposal["height"] <= last_block.height:
                    self.pending_proposal = None
        match = prev + len(msg["entries"])
        if msg["leader_commit"] > self.commit_index:
            self.commit_index = min(msg["leader_commit"], match)
        out = self._apply(now)
        out.append((src, {"type": "append_response", "term": self.term, "success": True, "match_index": match}))
        return out

    def _on_append_response(self, src, msg, now):
        if self.role != Role.LEADER or msg["term"] != self.term:
            return []
        if msg["success"]:
            if msg["match_index"] > self.match_index[src]:
                self.match_index[src] = msg["match_index"]
            self.next_index[src] = self.match_index[src] + 1
            return self._advance_commit(now)
        self.next_index[src] = max(1, min(self.next_index[src] - 1, msg["match_index"] + 1))
        return [(src, self._append_message(src))]

    def _advance_commit(self, now: float) -> list[tuple[str, dict]]:
        for index in range(self._last_index(), self.commit_index, -1):
            if self._term_at(index) != self.term:
                break
            count = 1 + sum(1 for m in self.match_index.values() if m >= index)
            if self._majority(count):
                self.commit_index = index
                out = self._apply(now)
                # Tell followers right away rather than on the next heartbeat.
                return out + self._replicate(now)
        return []

    def _apply(self, now: float) -> list[tuple[str, dict]]:
        out = []
        while self.storage.applied_index < self.commit_index:
            index = self.storage.applied_index + 1
            block = self.log[index - 1].block
            self.storage.apply(block, index)
            if block is None:
                continue
            self._note_committed(block)
            for e in block.entries:
                current = self.buffer.get(e.porter_key)
                if current is not None and current.version <= e.version:
                    del self.buffer[e.porter_key]
            self.events.append((now, "commit", block.height, block.root.hex()))
            for e in block.entries:
                dst = self.porter_routes.get(e.porter_key)
                if dst is not None:
                    out.append((dst, self._anchor_message(block, e)))
        return out

    # -- porter roots -------------------------------------------------------

    def _admit_entry(self, entry: RootEntry, now: float, origin: str) -> str | None:
        """Validate and buffer a Porter root; return a rejection reason or None."""
        registry = self.config.porter_keys
        if registry is not None and entry.porter_key not in registry.values():
            return "unknown-porter"
        if not entry.verify():
            log.warning("node %s: dropping root entry with bad signature", self.id)
            return "bad-signature"
        first = self.seen.get((entry.porter_key, entry.version))
        if first is not None and first != entry.root:
            incident = {
                "time": now,
                "node": self.id,
                "porter": entry.porter_key.hex(),
                "version": entry.version,
                "kept": first.hex(),
                "rejected": entry.root.hex(),
                "origin": origin,
            }
            self.incidents.append(incident)
            self.conflicted.add((entry.porter_key, entry.version))
            self.evidence.setdefault((entry.porter_key, entry.version), entry)
            buffered = self.buffer.get(entry.porter_key)
            if buffered is not None and buffered.version == entry.version:
                del self.buffer[entry.porter_key]
            self.events.append((now, "equivocation", entry.porter_key.hex(), entry.version))
            log.warning("node %s: porter equivocation %s", self.id, incident)
            return "equivocation"
        if entry.version <= self.committed_versions.get(entry.porter_key, -1):
            return "stale" if first is None else "committed"
        self.seen[(entry.porter_key, entry.version)] = entry.root
        self.first_entries[(entry.porter_key, entry.version)] = entry
        current = self.buffer.get(entry.porter_key)
        if current is None or current.version < entry.version:
            self.buffer[entry.porter_key] = entry
        return None

    def _on_root(self, src, msg, now):
        """A root submitted by this node's own Porter."""
        try:
            entry = RootEntry(
                bytes.fromhex(msg["porter"]), int(msg["version"]), bytes.fromhex(msg["root"]), bytes.fromhex(msg["sig"])
            )
        except (KeyError, ValueError):
            return [(src, {"type": "root_error", "reason": "malformed"})]
        reason = self._admit_entry(entry, now, origin=src)
        if reason == "committed":
            self.porter_routes[entry.porter_key] = src
            for block in reversed(self.ledger):
                e = block.entry_for(entry.porter_key)
                if e is not None and e.version >= entry.version:
                    return [(src, self._anchor_message(block, e))]
            reason = "stale"
        if reason is not None:
            return [(src, {"type": "root_error", "version": entry.version, "reason": reason})]
        self.porter_routes[entry.porter_key] = src
        self.events.append((now, "root", entry.porter_key.hex(), entry.version))
        return self._broadcast({"type": "root_entry", "entry": entry.to_json()})

    def _on_root_entry(self, src, msg, now):
        try:
            entry = RootEntry.from_json(msg["entry"])
        except (KeyError, ValueError):
            return []
        self._admit_entry(entry, now, origin=src)
        return []

    def _anchor_message(self, block: LedgerBlock, entry: RootEntry) -> dict:
        proof = self.anchor_proof(block.height, entry.porter_key)
        return {
            "type": "anchor",
            "version": entry.version,
            "height": block.height,
            "root": block.root.hex(),
            "block_hash": block.block_hash.hex(),
            "proof": proof.to_bytes().hex(),
        }

    # -- block commitment ---------------------------------------------------

    def _candidate_entries(self) -> tuple[RootEntry, ...]:
        in_log: dict[bytes, int] = dict(self.committed_versions)
        for entry in self.log[self.storage.applied_index :]:
            if entry.block is not None:
                for e in entry.block.entries:
                    in_log[e.porter_key] = max(in_log.get(e.porter_key, -1), e.version)
        chosen = [
            e
            for k, e in self.buffer.items()
            if e.version > in_log.get(k, -1) and (k, e.version) not in self.conflicted
        ]
        return tuple(sorted(chosen, key=lambda e: e.porter_key))

    def _propose(self, now: float) -> list[tuple[str, dict]]:
        last = self._last_block()
        height = 1 if last is None else last.height + 1
        prev = GENESIS_HASH if last is None else last.block_hash
        return self._start_proposal(now, height, prev, self._candidate_entries())

    def _start_proposal(self, now, height, prev_hash, entries, rebroadcast=False):
        root = period_root(entries, height)
        proposal = _Proposal(height, prev_hash, root, entries, now + self.config.commit_timeout)
        digest = block_signing_digest(height, prev_hash, root)
        proposal.signatures[self.id] = crypto.sign(self.key.secret, digest)
        self.proposal = proposal
        self.phase = NodePhase.BLOCK_COMMITMENT
        self.pending_proposal = None
        self._proposer_sig = proposal.signatures[self.id]
        self.events.append((now, "rebroadcast" if rebroadcast else "propose", height, self.term))
        if self._majority(len(proposal.signatures)):
            return self._certify(now)
        return self._broadcast(proposal.message(self.term, self.id, self._proposer_sig))

    def _abort_proposal(self, now: float) -> None:
        self.events.append((now, "commit_timeout", self.proposal.height))
        log.info("node %s: no majority for block %d before T_c", self.id, self.proposal.height)
        self.proposal = None
        self.phase = NodePhase.BLOCK_CREATION

    def _on_block_proposal(self, src, msg, now):
        if msg["term"] < self.term:
            return []
        if self.role != Role.FOLLOWER:
            self._step_down(msg["term"], now)
        self.leader_id = msg["leader"]
        self.last_leader_contact = now
        self.election_deadline = now + self._election_timeout()
        reject = {"type": "block_signature", "term": self.term, "height": msg["height"], "root": msg["root"], "node": self.id, "sig": None}
        last = self._last_block()
        height = 1 if last is None else last.height + 1
        prev = GENESIS_HASH if last is None else last.block_hash
        if msg["height"] != height or bytes.fromhex(msg["prev"]) != prev:
            return [(src, {**reject, "reason": "height"})]
        entries = tuple(RootEntry.from_json(e) for e in msg["entries"])
        if len({e.porter_key for e in entries}) != len(entries):
            return [(src, {**reject, "reason": "duplicate-porter"})]
        for e in entries:
            first = self.seen.get((e.porter_key, e.version))
            if first is None:
                reason = self._admit_entry(e, now, origin=src)
                if reason is not None:
                    return [(src, {**reject, "reason": reason})]
            elif first != e.root:
                self._admit_entry(e, now, origin=src)  # logs the incident
                mine = self.first_entries[(e.porter_key, e.version)]
                return [(src, {**reject, "reason": "equivocation", "conflict": mine.to_json()})]
            elif (e.porter_key, e.version) in self.conflicted:
                other = self.evidence[(e.porter_key, e.version)]
                return [(src, {**reject, "reason": "equivocation", "conflict": other.to_json()})]
            elif not e.verify():
                return [(src, {**reject, "reason": "bad-signature"})]
        root = bytes.fromhex(msg["root"])
        if period_root(entries, height) != root:
            self.events.append((now, "proposal_rejected", height))
            return [(src, {**reject, "reason": "root-mismatch"})]
        self.phase = NodePhase.BLOCK_COMMITMENT
        self.pending_proposal = msg
        sig = crypto.sign(self.key.secret, block_signing_digest(height, prev, root))
        return [(src, {**reject, "sig": sig.hex()})]

    def _on_block_signature(self, src, msg, now):
        p = self.proposal
        if self.role != Role.LEADER or p is None or msg["term"] != self.term:
            return []
        if msg.get("sig") is None:
            if msg.get("conflict"):
                try:
                    self._admit_entry(RootEntry.from_json(msg["conflict"]), now, origin=src)
                except (KeyError, ValueError):
                    pass
            if any((e.porter_key, e.version) in self.conflicted for e in p.entries):
                # Re-propose without the equivocated root on the next tick.
                self._abort_proposal(now)
            return []
        if msg["height"] != p.height or bytes.fromhex(msg["root"]) != p.root:
            return []
        node = msg["node"]
        sig = bytes.fromhex(msg["sig"])
        key = self.config.roster.get(node)
        if key is None or not crypto.verify(key, block_signing_digest(p.height, p.prev_hash, p.root), sig):
            return []
        p.signatures[node] = sig
        if self._majority(len(p.signatures)):
            return self._certify(now)
        return []

    def _certify(self, now: float) -> list[tuple[str, dict]]:
        p = self.proposal
        block = LedgerBlock(
            p.height,
            p.prev_hash,
            p.root,
            p.entries,
            self.id,
            self._proposer_sig,
            tuple(sorted(p.signatures.items())),
            now,
        )
        self.storage.append_log([LogEntry(self.term, block)])
        self.proposal = None
        self.phase = NodePhase.BLOCK_CREATION
        self.events.append((now, "certified", block.height))
        out = self._advance_commit(now)
        return out + self._replicate(now, kind="block_commit")

    # -- queries ------------------------------------------------------------

    def ledger_root(self, height: int):
        if 1 <= height <= len(self.ledger):
            return self.ledger[height - 1].ledger_root()
        return None

    def _period_store(self, height: int):
        cached = self._trie_cache.get(height)
        if cached is None:
            block = self.ledger[height - 1]
            cached = period_trie(block.entries, height)
            if len(self._trie_cache) > 64:
                self._trie_cache.clear()
            self._trie_cache[height] = cached
        return cached

    def anchor_proof(self, height: int, porter_key: bytes):
        """Inclusion (or, if absent that period, exclusion) of ``porter_key``."""
        if self.ledger_root(height) is None:
            raise KeyError(f"unknown height {height}")
        store, root = self._period_store(height)
        return store.prove(root.version, ledger_key(porter_key))

    def handle_query(self, msg: dict) -> dict | None:
        kind = msg.get("type")
        if kind not in ("query_root", "query_anchor", "query_status", "query_porter"):
            return None
        resp: dict = {"type": kind}
        if kind == "query_porter":
            key = (self.config.porter_keys or {}).get(str(msg.get("porter_id")))
            if key is None:
                resp.update(status="error", reason="unknown-porter", detail="porter not registered")
            else:
                resp.update(status="ok", porter_key=key.hex())
        elif kind == "query_status":
            last = self.ledger[-1] if self.ledger else None
            resp.update(
                status="ok",
                node=self.id,
                role=self.role.value,
                term=self.term,
                leader=self.leader_id,
                height=len(self.ledger),
                phase=self.phase.value,
                last_root=last.root.hex() if last else None,
            )
        else:
            height = msg.get("height")
            height = len(self.ledger) if height is None else int(height)
            root = self.ledger_root(height)
            if root is None:
                resp.update(status="error", reason="unknown-height", detail=f"height {height} not committed")
            elif kind == "query_root":
                resp.update(status="ok", **root.to_json())
            else:
                proof = self.anchor_proof(height, bytes.fromhex(msg["porter_key"]))
                included = isinstance(proof, InclusionProof)
                resp.update(
                    status="ok",
                    included=included,
                    proof=proof.to_bytes().hex(),
                    **root.to_json(),
                )
        if "rid" in msg:
            resp["rid"] = msg["rid"]
        return resp


_HANDLERS = {
    "pre_vote": SloopNode._on_pre_vote,
    "pre_vote_response": SloopNode._on_pre_vote_response,
    "request_vote": SloopNode._on_request_vote,
    "vote": SloopNode._on_vote,
    "append_entries": SloopNode._on_append_entries,
    "heartbeat": SloopNode._on_append_entries,
    "block_commit": SloopNode._on_append_entries,
    "append_response": SloopNode._on_append_response,
    "root": SloopNode._on_root,
    "root_entry": SloopNode._on_root_entry,
    "block_proposal": SloopNode._on_block_proposal,
    "block_signature": SloopNode._on_block_signature,
}
