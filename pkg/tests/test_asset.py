import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harness import LEDGER, World
from sark import crypto
from sark.asset import (
    MAX_MESSAGE,
    AnchorRef,
    Asset,
    AssetError,
    NotOwnerError,
    PopEntry,
    UpdateVector,
    append_update,
    make_transfer,
    verify_asset,
)
from sark.codec import DecodeError


@pytest.fixture(scope="module")
def chain():
    """mint at A, then A -> B -> A -> B with idle windows in between."""
    w = World(seed=11)
    asset, owner = w.mint()
    history = [asset]
    for nxt, idle in (("B", 2), ("A", 0), ("B", 1)):
        asset, owner = w.transfer(asset, owner, nxt, idle=idle)
        history.append(asset)
    return w, history, owner


def test_three_transfers_verify(chain):
    w, history, _ = chain
    asset = history[-1]
    rep = verify_asset(asset, w.ledger, w.issuer.public)
    assert rep.verdict == "VALID", rep.to_json()
    assert len(asset.pop) == 3
    assert [len(e.exclusions) for e in asset.pop] == [2, 1, 2]
    for i, entry in enumerate(asset.pop, start=1):
        route = asset.route(i)
        versions = [x.root.version for x in entry.exclusions]
        assert versions == list(range(route.root_index, entry.inclusion.root.version))
        assert entry.anchor is not None and entry.anchor.verify()


def test_every_prefix_is_a_prefix(chain):
    _, history, _ = chain
    for a, b in zip(history, history[1:]):
        assert b.encode().startswith(a.encode())
        assert b.updates[: len(a.updates)] == a.updates


def test_file_roundtrip(chain):
    _, history, _ = chain
    for a in history:
        assert Asset.from_bytes(a.to_bytes()) == a


def test_truncated_files_fail_to_decode(chain):
    raw = chain[1][-1].to_bytes()
    for cut in list(range(0, 64)) + list(range(64, len(raw), 97)):
        with pytest.raises(DecodeError):
            Asset.from_bytes(raw[:cut])
    with pytest.raises(DecodeError):
        Asset.from_bytes(raw + b"\x00")


def test_offline_verification_is_unanchored(chain):
    w, history, _ = chain
    rep = verify_asset(history[-1], None, w.issuer.public)
    assert rep.verdict == "UNANCHORED"
    assert rep.valid


def test_a_fresh_mint_verifies_without_a_ledger():
    w = World(seed=1)
    asset, _ = w.mint()
    assert verify_asset(asset, w.ledger, w.issuer.public).verdict == "VALID"


def test_wrong_issuer_key_is_invalid(chain):
    w, history, _ = chain
    other = crypto.IssuerPublicKey(w.issuer.public.n - 2)
    rep = verify_asset(history[-1], w.ledger, other)
    assert rep.verdict == "INVALID" and not rep.genesis_ok


def test_forged_genesis_signature_is_invalid(chain):
    w, history, _ = chain
    a = history[-1]
    sig = bytearray(a.genesis.signature)
    sig[-1] ^= 1
    forged = dataclasses.replace(a, genesis=dataclasses.replace(a.genesis, signature=bytes(sig)))
    assert verify_asset(forged, w.ledger, w.issuer.public).verdict == "INVALID"


def test_only_the_current_owner_can_transfer(chain):
    w, history, owner = chain
    asset = history[-1]
    stranger = w.keypair()
    with pytest.raises(NotOwnerError):
        make_transfer(asset, stranger.secret, stranger.public, b"x", w.anchor_ref("A"))
    make_transfer(asset, owner.secret, stranger.public, b"x", w.anchor_ref("A"))


def test_swapped_update_signature_is_invalid(chain):
    w, history, _ = chain
    a = history[-1]
    bad = dataclasses.replace(a.updates[1], signature=a.updates[0].signature)
    forged = dataclasses.replace(a, updates=(a.updates[0], bad, a.updates[2]))
    rep = verify_asset(forged, w.ledger, w.issuer.public)
    assert rep.verdict == "INVALID"
    assert not rep.entries[1].signature_ok


def test_missing_exclusion_is_a_gap_error(chain):
    w, history, _ = chain
    a = history[-1]
    e = a.pop[0]
    short = PopEntry(e.inclusion, e.exclusions[1:], e.anchor)
    forged = dataclasses.replace(a, pop=(short,) + a.pop[1:])
    rep = verify_asset(forged, w.ledger, w.issuer.public)
    assert rep.verdict == "INVALID"
    assert not rep.entries[0].gap_ok
    assert any("gap" in err for err in rep.entries[0].errors)


def test_inclusion_before_the_anchor_index_is_a_gap_error(chain):
    w, history, _ = chain
    a = history[-1]
    # Re-point the genesis anchor at a later root than the inclusion.
    g = a.genesis.vector
    later = dataclasses.replace(g, anchor=AnchorRef(LEDGER, "A", 50))
    forged = dataclasses.replace(a, genesis=dataclasses.replace(a.genesis, vector=later))
    rep = verify_asset(forged, w.ledger, w.issuer.public)
    assert not rep.entries[0].gap_ok


def test_pop_entry_for_another_update_is_rejected(chain):
    w, history, _ = chain
    a = history[-1]
    forged = dataclasses.replace(a, pop=(a.pop[1], a.pop[0], a.pop[2]))
    assert verify_asset(forged, w.ledger, w.issuer.public).verdict == "INVALID"


def test_ledger_mismatch_is_invalid_and_missing_root_is_unanchored(chain):
    w, history, _ = chain

    class Lying:
        def ledger_root(self, h):
            r = w.ledger.ledger_root(h)
            return dataclasses.replace(r, digest=bytes(32))

    class Empty:
        def ledger_root(self, h):
            return None

    assert verify_asset(history[-1], Lying(), w.issuer.public).verdict == "INVALID"
    assert verify_asset(history[-1], Empty(), w.issuer.public).verdict == "UNANCHORED"


def test_anchor_signed_by_another_porter_is_invalid(chain):
    w, history, _ = chain

    class Swapped:
        ledger_root = staticmethod(w.ledger.ledger_root)

        @staticmethod
        def porter_key(pid):
            return w.ledger.keys["B" if pid == "A" else "A"]

    assert verify_asset(history[-1], Swapped(), w.issuer.public).verdict == "INVALID"


def test_append_update_refuses_a_bad_entry(chain):
    w, history, owner = chain
    asset = history[-1]
    update, _, _ = w.submit(asset, owner, "A")
    with pytest.raises(AssetError):
        append_update(asset, update, asset.pop[0])


def test_pop_count_mismatch_is_invalid(chain):
    w, history, _ = chain
    a = history[-1]
    assert verify_asset(dataclasses.replace(a, pop=a.pop[:2]), w.ledger, w.issuer.public).verdict == "INVALID"


def test_update_vector_limits():
    ref = AnchorRef(LEDGER, "A", 0)
    with pytest.raises(ValueError):
        UpdateVector(b"x" * (MAX_MESSAGE + 1), ref, bytes(32))
    with pytest.raises(ValueError):
        AnchorRef(LEDGER, "A", -1)
    with pytest.raises(ValueError):
        AnchorRef("", "A", 0)


@settings(max_examples=100, deadline=None)
@given(
    st.binary(max_size=300),
    st.text(min_size=1, max_size=10),
    st.text(min_size=1, max_size=10),
    st.integers(0, 2**63),
    st.binary(min_size=32, max_size=32),
)
def test_update_vector_roundtrip(message, ledger, porter, index, key):
    v = UpdateVector(message, AnchorRef(ledger, porter, index), key)
    assert UpdateVector.decode(v.encode()) == v


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=64), st.data())
def test_update_vector_encoding_is_injective(message, data):
    a = UpdateVector(message, AnchorRef(LEDGER, "A", 1), bytes(32))
    b = UpdateVector(data.draw(st.binary(max_size=64)), AnchorRef(LEDGER, "A", 1), bytes(32))
    assert (a.encode() == b.encode()) == (a == b)
