"""Porter core: the relay that registers update commitments.

The Porter is an event-driven state machine.  ``on_message``/``tick`` return
outgoing ``(destination, message)`` pairs, so it runs unchanged under the
simulator and behind real sockets.  Client requests (``submit``, ``claim``,
``absence``, ``status``) are answered synchronously by ``handle``.

Durable state (all in the backend): sealed window tries, the spent-key index,
the write-ahead log of the open window, chain digests and received anchors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

from . import crypto
from .anchor import GENESIS_CHAIN, AnchorProof, LedgerRoot, chain_digest, ledger_key
from .asset import AnchorRef, PopEntry, UpdateVector
from .codec import Reader, lp, u64
from .store import (
    AuthenticatedStore,
    ExclusionProof,
    InclusionProof,
    KvBackend,
    StructureKind,
    TrieRoot,
    decode_proof,
    verify_inclusion,
)

log = logging.getLogger(__name__)

_SPENT = b"S"
_WAL = b"W"
_CHAIN = b"C"
_ANCHOR = b"A"
_TRIE = b"T"


class PorterError(Exception):
    code = "error"

    def __init__(self, message: str, **extra):
        super().__init__(message)
        self.extra = extra


class SubmissionRejected(PorterError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class PendingError(PorterError):
    code = "pending"


class UnknownKeyError(PorterError):
    code = "unknown-key"


class KeyPresentError(PorterError):
    code = "key-present"


class PrematureCloseError(PorterError):
    code = "premature-close"


class RootSupersededError(PorterError):
    code = "superseded"


class LedgerTimeoutError(PorterError):
    """Retriable: the validator did not answer before the anchor timeout."""

    code = "ledger-timeout"


@dataclass
class PorterConfig:
    porter_id: str
    seed: bytes
    window_duration: float = 2000.0
    structure: StructureKind = StructureKind.JMT
    validator: str = ""
    ledger_id: str = "sloop"
    # Windows close at times congruent to window_phase modulo window_duration.
    window_phase: float = 0.0
    submit_delay: float = 0.0
    anchor_timeout: float | None = None

    def __post_init__(self):
        if self.window_duration <= 0:
            raise ValueError("window_duration must be positive")
        self.structure = StructureKind.parse(self.structure)
        if self.anchor_timeout is None:
            self.anchor_timeout = 2 * self.window_duration


@dataclass(frozen=True)
class Submission:
    owner_key: bytes
    signature: bytes
    vector: UpdateVector
    # Anchor of the previous update: names the Porter this submission is for.
    route: AnchorRef

    @property
    def trie_key(self) -> bytes:
        return crypto.hash(self.owner_key)

    def to_json(self) -> dict:
        return {
            "owner_key": self.owner_key.hex(),
            "signature": self.signature.hex(),
            "vector": self.vector.encode().hex(),
            "route": anchor_to_json(self.route),
        }

    @classmethod
    def from_json(cls, d: dict) -> Submission:
        return cls(
            bytes.fromhex(d["owner_key"]),
            bytes.fromhex(d["signature"]),
            UpdateVector.decode(bytes.fromhex(d["vector"])),
            anchor_from_json(d["route"]),
        )


def anchor_to_json(a: AnchorRef) -> dict:
    return {"ledger_id": a.ledger_id, "porter_id": a.porter_id, "root_index": a.root_index}


def anchor_from_json(d: dict) -> AnchorRef:
    return AnchorRef(d["ledger_id"], d["porter_id"], int(d["root_index"]))


@dataclass(frozen=True)
class PorterReceipt:
    inclusion: InclusionProof
    exclusions: tuple[ExclusionProof, ...] = ()
    anchor: AnchorProof | None = None

    def pop_entry(self) -> PopEntry:
        return PopEntry(self.inclusion, self.exclusions, self.anchor)

    def to_json(self) -> dict:
        return {
            "inclusion": self.inclusion.to_bytes().hex(),
            "exclusions": [e.to_bytes().hex() for e in self.exclusions],
            "anchor": self.anchor.to_bytes().hex() if self.anchor else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> PorterReceipt:
        anchor = AnchorProof.from_bytes(bytes.fromhex(d["anchor"])) if d.get("anchor") else None
        return cls(
            decode_proof(bytes.fromhex(d["inclusion"])),
            tuple(decode_proof(bytes.fromhex(x)) for x in d["exclusions"]),
            anchor,
        )


def root_signing_digest(porter_key: bytes, version: int, root: bytes) -> bytes:
    return crypto.tagged_hash(crypto.TAG_PORTER_ROOT, b"entry" + lp(porter_key) + u64(version) + root)


@dataclass
class _Inflight:
    version: int
    sent_at: float


@dataclass
class _StoredAnchor:
    version: int
    ledger_proof: InclusionProof
    ledger_root: LedgerRoot


class Porter:
    def __init__(self, config: PorterConfig, backend: KvBackend, now: float = 0.0):
        self.config = config
        self.id = config.porter_id
        self.keypair = crypto.keygen(config.seed)
        self.backend = backend
        self.store = AuthenticatedStore(config.structure, backend, namespace=_TRIE)
        self.chain: dict[int, bytes] = {
            int.from_bytes(k[1:], "big"): v for k, v in backend.iterate(_CHAIN)
        }
        self.anchors: dict[int, _StoredAnchor] = {}
        for k, v in backend.iterate(_ANCHOR):
            self.anchors[int.from_bytes(k[1:], "big")] = _decode_anchor(v)
        version = 0 if self.store.latest_version is None else self.store.latest_version + 1
        self.window = self.store.open_window(version)
        self.window_keys: list[bytes] = []
        for k, raw in backend.iterate(_WAL):
            sub = Submission.from_json(json.loads(raw))
            self.window.insert(sub.trie_key, sub.vector.encode())
            self.window_keys.append(sub.trie_key)
        self.window_start = now
        self.window_end = self._next_close(now)
        self.inflight: _Inflight | None = None
        self.last_submitted: int | None = None
        self.submit_at: float | None = now if self._unanchored() else None
        self.events: list[tuple] = []

    # -- helpers ------------------------------------------------------------

    @property
    def porter_key(self) -> bytes:
        return self.keypair.public

    @property
    def version(self) -> int:
        """Version of the currently open window."""
        return self.window.version

    @property
    def latest_sealed(self) -> int | None:
        return self.store.latest_version

    @property
    def latest_anchored(self) -> int | None:
        return max(self.anchors, default=None)

    def _next_close(self, now: float) -> float:
        d = self.config.window_duration
        phase = self.config.window_phase % d
        k = math.floor((now - phase) / d) + 1
        return phase + k * d

    def _unanchored(self) -> bool:
        sealed = self.latest_sealed
        if sealed is None:
            return False
        anchored = self.latest_anchored
        return anchored is None or anchored < sealed

    # -- client operations --------------------------------------------------

    def submit(self, sub: Submission, now: float = 0.0) -> dict:
        if not crypto.verify(sub.owner_key, sub.vector.digest(), sub.signature):
            raise SubmissionRejected("invalid-signature", "invalid signature")
        if sub.route.porter_id != self.id:
            raise SubmissionRejected("wrong-porter", "not assigned porter")
        if sub.route.root_index > self.version:
            raise SubmissionRejected("bad-anchor", "anchor root index is ahead of this porter")
        key = sub.trie_key
        if self.backend.get(_SPENT + key) is not None or key in self.window:
            raise SubmissionRejected("key-spent", "key already spent")
        self.window.insert(key, sub.vector.encode())
        self.backend.put(_WAL + key, json.dumps(sub.to_json(), sort_keys=True).encode())
        self.window_keys.append(key)
        self.events.append((now, "submit", key.hex(), self.version))
        return {"version": self.version}

    def spent_version(self, owner_key: bytes) -> int | None:
        raw = self.backend.get(_SPENT + crypto.hash(owner_key))
        return None if raw is None else int.from_bytes(raw, "big")

    def claim_receipt(self, owner_key: bytes, since_root_index: int) -> PorterReceipt:
        key = crypto.hash(owner_key)
        version = self.spent_version(owner_key)
        if version is None:
            if key in self.window:
                raise PendingError(f"pending: window {self.version} not yet sealed")
            raise UnknownKeyError("key unknown to this porter")
        if since_root_index > version:
            raise PorterError(f"since ({since_root_index}) is after the sealing window ({version})")
        inclusion = self.store.prove_inclusion(version, key)
        exclusions = tuple(self.store.prove_exclusion(m, key) for m in range(since_root_index, version))
        return PorterReceipt(inclusion, exclusions, self.anchor_proof(since_root_index, version))

    def prove_absence(self, owner_key: bytes, from_version: int, to_version: int) -> list[ExclusionProof]:
        if from_version > to_version:
            raise PorterError("from_version must be <= to_version")
        if to_version > 0 and (self.latest_sealed is None or to_version - 1 > self.latest_sealed):
            raise PorterError(f"window {to_version - 1} not sealed")
        key = crypto.hash(owner_key)
        out = []
        for v in range(from_version, to_version):
            proof = self.store.prove(v, key)
            if isinstance(proof, InclusionProof):
                raise KeyPresentError(f"key present in window {v}", version=v)
            out.append(proof)
        return out

    def anchor_proof(self, first_version: int, version: int) -> AnchorProof | None:
        """Anchor covering windows ``first_version..w`` for the earliest anchored ``w >= version``."""
        candidates = [w for w in self.anchors if w >= version]
        if not candidates:
            return None
        stored = self.anchors[min(candidates)]
        links = tuple(self.store.root(v).digest for v in range(first_version, stored.version + 1))
        prev = GENESIS_CHAIN if first_version == 0 else self.chain[first_version - 1]
        return AnchorProof(self.porter_key, first_version, prev, links, stored.ledger_proof, stored.ledger_root)

    # -- windows and anchoring ----------------------------------------------

    def close_window(self, now: float) -> TrieRoot:
        if now < self.window_end:
            raise PrematureCloseError(f"window {self.version} closes at {self.window_end}")
        root = self.window.seal()
        v = root.version
        prev = GENESIS_CHAIN if v == 0 else self.chain[v - 1]
        self.chain[v] = chain_digest(self.porter_key, v, root.digest, prev)
        self.backend.put(_CHAIN + u64(v), self.chain[v])
        for key in self.window_keys:
            self.backend.put(_SPENT + key, u64(v))
            self.backend.delete(_WAL + key)
        self.backend.flush()
        self.events.append((now, "seal", v, len(self.window_keys), root.digest.hex()))
        self.window_keys = []
        self.window = self.store.open_window(v + 1)
        self.window_start = now
        self.window_end = self._next_close(now)
        if self.submit_at is None:
            self.submit_at = now + self.config.submit_delay
        return root

    def root_message(self, version: int) -> dict:
        root = self.chain[version]
        sig = crypto.sign(self.keypair.secret, root_signing_digest(self.porter_key, version, root))
        return {
            "type": "root",
            "porter": self.porter_key.hex(),
            "version": version,
            "root": root.hex(),
            "sig": sig.hex(),
        }

    def submit_root(self, version: int, now: float) -> list[tuple[str, dict]]:
        if self.last_submitted is not None and version < self.last_submitted:
            raise RootSupersededError(f"root {version} superseded by {self.last_submitted}")
        if version not in self.chain:
            raise PorterError(f"window {version} not sealed")
        self.last_submitted = version
        self.inflight = _Inflight(version, now)
        self.events.append((now, "submit_root", version))
        return [(self.config.validator, self.root_message(version))]

    def _maybe_submit(self, now: float) -> list[tuple[str, dict]]:
        if self.inflight is not None and now - self.inflight.sent_at >= self.config.anchor_timeout:
            self.events.append((now, "anchor_timeout", self.inflight.version))
            log.info("porter %s: anchor timeout for root %d, retrying", self.id, self.inflight.version)
            self.inflight = None
        if self.inflight is not None or self.submit_at is None or now < self.submit_at:
            return []
        self.submit_at = None
        if not self._unanchored():
            return []
        return self.submit_root(self.latest_sealed, now)

    def on_anchor(self, msg: dict, now: float) -> list[tuple[str, dict]]:
        try:
            version = int(msg["version"])
            proof = decode_proof(bytes.fromhex(msg["proof"]))
            ledger_root = LedgerRoot(int(msg["height"]), bytes.fromhex(msg["root"]), bytes.fromhex(msg["block_hash"]))
        except (KeyError, ValueError, TypeError):
            log.warning("porter %s: malformed anchor message", self.id)
            return []
        chain = self.chain.get(version)
        ok = (
            chain is not None
            and isinstance(proof, InclusionProof)
            and proof.key == ledger_key(self.porter_key)
            and proof.value_digest == hashlib.sha256(chain).digest()
            and proof.root.digest == ledger_root.digest
            and proof.root.version == ledger_root.height
            and verify_inclusion(proof)
        )
        if not ok:
            log.warning("porter %s: discarding invalid anchor for root %s", self.id, version)
            return []
        stored = _StoredAnchor(version, proof, ledger_root)
        self.anchors[version] = stored
        self.backend.put(_ANCHOR + u64(version), _encode_anchor(stored))
        self.backend.flush()
        self.events.append((now, "anchored", version, ledger_root.height))
        if self.inflight is not None and self.inflight.version <= version:
            self.inflight = None
        if self._unanchored():
            self.submit_at = now
        return self._maybe_submit(now)

    # -- actor interface ----------------------------------------------------

    def next_wakeup(self) -> float:
        t = self.window_end
        if self.submit_at is not None and self.inflight is None:
            t = min(t, self.submit_at)
        if self.inflight is not None:
            t = min(t, self.inflight.sent_at + self.config.anchor_timeout)
        return t

    def tick(self, now: float) -> list[tuple[str, dict]]:
        out = []
        if now >= self.window_end:
            self.close_window(now)
        out += self._maybe_submit(now)
        return out

    def on_message(self, src: str, msg: dict, now: float) -> list[tuple[str, dict]]:
        kind = msg.get("type")
        if kind == "anchor":
            return self.on_anchor(msg, now)
        if kind == "root_error":
            self.events.append((now, "root_error", msg.get("version"), msg.get("reason")))
            if self.inflight is not None and msg.get("version") == self.inflight.version:
                self.inflight = None
                if msg.get("reason") == "unavailable":
                    self.submit_at = now + self.config.window_duration / 4
            return []
        reply = self.handle(msg, now)
        return [(src, reply)] if reply is not None else []

    def handle(self, msg: dict, now: float = 0.0) -> dict | None:
        """Answer one client request (newline-JSON protocol)."""
        kind = msg.get("type")
        try:
            if kind == "submit":
                body = self.submit(Submission.from_json(msg), now)
            elif kind == "claim":
                receipt = self.claim_receipt(bytes.fromhex(msg["owner_key"]), int(msg["since"]))
                body = {"receipt": receipt.to_json()}
            elif kind == "absence":
                proofs = self.prove_absence(
                    bytes.fromhex(msg["owner_key"]), int(msg["from"]), int(msg["to"])
                )
                body = {"proofs": [p.to_bytes().hex() for p in proofs]}
            elif kind == "status":
                body = {
                    "porter_id": self.id,
                    "porter_key": self.porter_key.hex(),
                    "ledger_id": self.config.ledger_id,
                    "version": self.version,
                    "latest_sealed": self.latest_sealed,
                    "latest_anchored": self.latest_anchored,
                }
            else:
                return None
            resp = {"type": kind, "status": "ok", **body}
        except PorterError as e:
            resp = {"type": kind, "status": "error", "reason": e.code, "detail": str(e), **e.extra}
        except (KeyError, ValueError, TypeError) as e:
            resp = {"type": kind, "status": "error", "reason": "bad-request", "detail": str(e)}
        if "rid" in msg:
            resp["rid"] = msg["rid"]
        return resp


def _encode_anchor(a: _StoredAnchor) -> bytes:
    r = a.ledger_root
    return u64(a.version) + lp(a.ledger_proof.to_bytes()) + u64(r.height) + lp(r.digest) + lp(r.block_hash)


def _decode_anchor(raw: bytes) -> _StoredAnchor:
    rd = Reader(raw)
    version = rd.u64()
    proof = decode_proof(rd.lp())
    root = LedgerRoot(rd.u64(), rd.lp(), rd.lp())
    return _StoredAnchor(version, proof, root)
