"""USO assets: update vectors, signed updates, proofs of provenance.

An asset is its own history.  ``encode()`` of an asset is the concatenation
of its genesis and every later update, so each version is a strict prefix of
the next.  The proof of provenance (POP) travels alongside it in the asset
file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol

from . import crypto
from .anchor import AnchorProof, LedgerRoot
from .codec import DecodeError, Reader, lp, u64
from .store import ExclusionProof, InclusionProof, decode_proof, verify_exclusion, verify_inclusion

MAX_MESSAGE = 64 * 1024
FILE_MAGIC = b"SARKUSO1"


class AssetError(Exception):
    pass


class NotOwnerError(AssetError):
    def __init__(self):
        super().__init__("not current owner")


class MintError(AssetError):
    pass


@dataclass(frozen=True)
class AnchorRef:
    """``G_{L,i}``: ledger ``L``, Porter ``G`` and that Porter's root index ``i``."""

    ledger_id: str
    porter_id: str
    root_index: int

    def __post_init__(self):
        if not self.ledger_id or not self.porter_id:
            raise ValueError("anchor identifiers must be non-empty")
        if self.root_index < 0:
            raise ValueError("root_index must be >= 0")


@dataclass(frozen=True)
class UpdateVector:
    message: bytes
    anchor: AnchorRef
    next_owner_key: bytes

    def __post_init__(self):
        if len(self.message) > MAX_MESSAGE:
            raise ValueError(f"message exceeds {MAX_MESSAGE} bytes")

    def encode(self) -> bytes:
        a = self.anchor
        return b"".join(
            [
                lp(self.message),
                lp(a.ledger_id.encode()),
                lp(a.porter_id.encode()),
                lp(u64(a.root_index)),
                lp(self.next_owner_key),
            ]
        )

    @classmethod
    def decode(cls, data: bytes) -> UpdateVector:
        r = Reader(data)
        vec = cls._read(r)
        r.expect_end()
        return vec

    @classmethod
    def _read(cls, r: Reader) -> UpdateVector:
        message = r.lp()
        ledger_id = r.lp().decode()
        porter_id = r.lp().decode()
        index_raw = r.lp()
        if len(index_raw) != 8:
            raise DecodeError("root_index must be 8 bytes")
        key = r.lp()
        return cls(message, AnchorRef(ledger_id, porter_id, int.from_bytes(index_raw, "big")), key)

    def digest(self) -> bytes:
        """The digest the owner (or issuer) signs."""
        return crypto.tagged_hash(crypto.TAG_UPDATE_VECTOR, self.encode())

    def value_digest(self) -> bytes:
        """What a Porter trie commits for this vector."""
        return hashlib.sha256(self.encode()).digest()


@dataclass(frozen=True)
class Update:
    vector: UpdateVector
    signature: bytes

    def encode(self) -> bytes:
        return lp(self.vector.encode()) + lp(self.signature)

    @classmethod
    def _read(cls, r: Reader) -> Update:
        return cls(UpdateVector.decode(r.lp()), r.lp())


@dataclass(frozen=True)
class PopEntry:
    inclusion: InclusionProof
    exclusions: tuple[ExclusionProof, ...] = ()
    anchor: AnchorProof | None = None

    def encode(self) -> bytes:
        parts = [lp(self.inclusion.to_bytes()), len(self.exclusions).to_bytes(4, "big")]
        parts += [lp(e.to_bytes()) for e in self.exclusions]
        parts.append(lp(self.anchor.to_bytes() if self.anchor else b""))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> PopEntry:
        r = Reader(data)
        inclusion = decode_proof(r.lp())
        exclusions = tuple(decode_proof(r.lp()) for _ in range(r.u32()))
        anchor_raw = r.lp()
        r.expect_end()
        if not isinstance(inclusion, InclusionProof) or not all(
            isinstance(e, ExclusionProof) for e in exclusions
        ):
            raise DecodeError("proof kinds out of place in POP entry")
        return cls(inclusion, exclusions, AnchorProof.from_bytes(anchor_raw) if anchor_raw else None)


@dataclass(frozen=True)
class Asset:
    genesis: Update
    updates: tuple[Update, ...] = ()
    pop: tuple[PopEntry, ...] = ()

    @property
    def head(self) -> UpdateVector:
        return self.updates[-1].vector if self.updates else self.genesis.vector

    @property
    def owner_key(self) -> bytes:
        """The one-time key that must sign the next update."""
        return self.head.next_owner_key

    def route(self, index: int) -> AnchorRef:
        """Anchor naming the Porter responsible for update ``index`` (1-based)."""
        prev = self.genesis if index == 1 else self.updates[index - 2]
        return prev.vector.anchor

    def signer_key(self, index: int) -> bytes:
        prev = self.genesis if index == 1 else self.updates[index - 2]
        return prev.vector.next_owner_key

    def encode(self) -> bytes:
        return b"".join([self.genesis.encode(), *(u.encode() for u in self.updates)])

    def to_bytes(self) -> bytes:
        pop = b"".join(lp(e.encode()) for e in self.pop)
        return FILE_MAGIC + lp(self.encode()) + len(self.pop).to_bytes(4, "big") + pop

    @classmethod
    def from_bytes(cls, data: bytes) -> Asset:
        if not data.startswith(FILE_MAGIC):
            raise DecodeError("not an asset file")
        r = Reader(data[len(FILE_MAGIC) :])
        chain = Reader(r.lp())
        genesis = Update._read(chain)
        updates = []
        while not chain.done():
            updates.append(Update._read(chain))
        pop = tuple(PopEntry.decode(r.lp()) for _ in range(r.u32()))
        r.expect_end()
        if len(pop) != len(updates):
            raise DecodeError("POP entry count does not match update count")
        return cls(genesis, tuple(updates), pop)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def make_genesis_vector(message: bytes, anchor: AnchorRef, first_owner_key: bytes) -> UpdateVector:
    return UpdateVector(bytes(message), anchor, bytes(first_owner_key))


class BlindSigner(Protocol):
    public: crypto.IssuerPublicKey

    def sign_blinded(self, blinded: bytes) -> bytes: ...


def mint(vector: UpdateVector, issuer: BlindSigner, rng=None) -> Asset:
    ctx = crypto.blind(issuer.public, vector.digest(), rng=rng)
    try:
        blinded_sig = issuer.sign_blinded(ctx.blinded_message)
    except Exception as e:
        raise MintError(f"blind signing failed: {e}") from e
    sig = crypto.unblind(ctx, blinded_sig)
    if not crypto.blind_verify(issuer.public, vector.digest(), sig):
        raise MintError("issuer signature does not verify")
    return Asset(Update(vector, sig))


def make_transfer(
    asset: Asset,
    current_secret: bytes,
    new_owner_key: bytes,
    message: bytes,
    anchor: AnchorRef,
) -> tuple[Update, UpdateVector]:
    """Sign the next update.  The asset itself is left untouched."""
    if crypto.public_key(current_secret) != asset.owner_key:
        raise NotOwnerError()
    vector = UpdateVector(bytes(message), anchor, bytes(new_owner_key))
    return Update(vector, crypto.sign(current_secret, vector.digest())), vector


# -- verification -----------------------------------------------------------


class LedgerView(Protocol):
    def ledger_root(self, height: int) -> LedgerRoot | None: ...


@dataclass
class EntryReport:
    index: int
    signature_ok: bool = False
    inclusion_ok: bool = False
    gap_ok: bool = False
    anchor: str = "absent"  # ok | absent | invalid | unanchored
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.signature_ok and self.inclusion_ok and self.gap_ok and self.anchor != "invalid"

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "signature": self.signature_ok,
            "inclusion": self.inclusion_ok,
            "gap": self.gap_ok,
            "anchor": self.anchor,
            "errors": list(self.errors),
        }


@dataclass
class VerificationReport:
    genesis_ok: bool
    entries: list[EntryReport]
    errors: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.genesis_ok and not self.errors and all(e.ok for e in self.entries)

    @property
    def anchored(self) -> bool:
        return all(e.anchor == "ok" for e in self.entries)

    @property
    def verdict(self) -> str:
        if not self.valid:
            return "INVALID"
        return "VALID" if self.anchored else "UNANCHORED"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "genesis": self.genesis_ok,
            "entries": [e.to_json() for e in self.entries],
            "errors": list(self.errors),
        }


def check_entry(asset: Asset, index: int, update: Update, entry: PopEntry, ledger_view=None) -> EntryReport:
    """Check update ``index`` (1-based) and its POP entry against the chain."""
    rep = EntryReport(index)
    signer = asset.signer_key(index)
    route = asset.route(index)
    rep.signature_ok = crypto.verify(signer, update.vector.digest(), update.signature)
    if not rep.signature_ok:
        rep.errors.append("signature does not verify under the designated one-time key")

    trie_key = crypto.hash(signer)
    inc = entry.inclusion
    rep.inclusion_ok = (
        inc.key == trie_key
        and inc.value_digest == update.vector.value_digest()
        and verify_inclusion(inc)
    )
    if not rep.inclusion_ok:
        rep.errors.append("inclusion proof does not verify for this key and update")

    start, end = route.root_index, inc.root.version
    versions = [e.root.version for e in entry.exclusions]
    rep.gap_ok = True
    if end < start:
        rep.gap_ok = False
        rep.errors.append(f"gap: inclusion root {end} precedes the anchor root index {start}")
    elif versions != list(range(start, end)):
        rep.gap_ok = False
        rep.errors.append(f"gap: exclusions cover {versions}, need {list(range(start, end))}")
    for e in entry.exclusions:
        if e.key != trie_key or e.kind != inc.kind or not verify_exclusion(e):
            rep.gap_ok = False
            rep.errors.append(f"gap: exclusion proof for root {e.root.version} does not verify")

    anchor = entry.anchor
    if anchor is None:
        rep.anchor = "absent"
        return rep
    bound = (
        anchor.verify()
        and anchor.first_version <= start
        and anchor.covers(end, inc.root.digest)
        and all(anchor.covers(e.root.version, e.root.digest) for e in entry.exclusions)
    )
    if not bound:
        rep.anchor = "invalid"
        rep.errors.append("anchor proof does not bind the inclusion/exclusion roots to a ledger root")
        return rep
    porter_key = getattr(ledger_view, "porter_key", None)
    if porter_key is not None:
        expected = porter_key(route.porter_id)
        if expected is not None and expected != anchor.porter_key:
            rep.anchor = "invalid"
            rep.errors.append(f"anchor signed by a key other than porter {route.porter_id}")
            return rep
    if ledger_view is None:
        rep.anchor = "unanchored"
        return rep
    published = ledger_view.ledger_root(anchor.ledger_root.height)
    if published is None:
        rep.anchor = "unanchored"
        rep.errors.append(f"ledger root {anchor.ledger_root.height} unavailable")
    elif published.digest != anchor.ledger_root.digest:
        rep.anchor = "invalid"
        rep.errors.append(f"anchor targets a root that differs from ledger height {published.height}")
    else:
        rep.anchor = "ok"
    return rep


def append_update(asset: Asset, update: Update, pop_entry: PopEntry) -> Asset:
    index = len(asset.updates) + 1
    staged = Asset(asset.genesis, asset.updates + (update,), asset.pop)
    rep = check_entry(staged, index, update, pop_entry)
    if not rep.ok:
        raise AssetError("; ".join(rep.errors))
    return Asset(asset.genesis, staged.updates, asset.pop + (pop_entry,))


def verify_asset(
    asset: Asset, ledger_view: LedgerView | None, issuer_key: crypto.IssuerPublicKey
) -> VerificationReport:
    genesis_ok = crypto.blind_verify(issuer_key, asset.genesis.vector.digest(), asset.genesis.signature)
    report = VerificationReport(genesis_ok, [])
    if not genesis_ok:
        report.errors.append("genesis signature does not verify under the issuer key")
    if len(asset.pop) != len(asset.updates):
        report.errors.append("POP entry count does not match update count")
    for i, (update, entry) in enumerate(zip(asset.updates, asset.pop), start=1):
        report.entries.append(check_entry(asset, i, update, entry, ledger_view))
    return report
