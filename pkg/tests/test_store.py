import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import ROOTS, member
from sark.codec import DecodeError
from sark.store import (
    AuthenticatedStore,
    DuplicateKeyError,
    EMPTY_ROOT,
    ExclusionProof,
    FileBackend,
    InclusionProof,
    MemoryBackend,
    PresenceError,
    StoreError,
    StructureKind,
    UnknownVersionError,
    VersionError,
    build_root,
    decode_proof,
    verify_exclusion,
    verify_inclusion,
)
from sark.store.bench import shared_prefix_keys

KINDS = ["jmt", "mpt"]

# Frozen from the brute-force oracle (tests/oracle.py) for keys sha256(b"k0".."k2")
# with values b"v0".."v2".
FROZEN_THREE = {
    "jmt": "4e9febb7f79a95ccd352bd33cd4dde159488ebd8bf6c76e7623df4cd697a22df",
    "mpt": "63c972be92a93c138db58a0f137054f8c3f942159ccf429e82da91a0d2c72017",
}


def three_items():
    return {hashlib.sha256(f"k{i}".encode()).digest(): f"v{i}".encode() for i in range(3)}


def rand_items(rng, n, vlen=16):
    return {rng.randbytes(32): rng.randbytes(vlen) for _ in range(n)}


def verify(proof, root):
    if isinstance(proof, InclusionProof):
        return verify_inclusion(proof, root)
    return verify_exclusion(proof, root)


@pytest.mark.parametrize("kind", KINDS)
def test_empty_window_has_the_empty_root(kind):
    store = AuthenticatedStore(kind, MemoryBackend())
    root = store.open_window(0).seal()
    assert root.digest == EMPTY_ROOT
    proof = store.prove_exclusion(0, bytes(32))
    assert verify_exclusion(proof, root)


@pytest.mark.parametrize("kind", KINDS)
def test_frozen_root_for_three_keys(kind):
    _, root = build_root(kind, three_items())
    assert root.digest.hex() == FROZEN_THREE[kind]


@pytest.mark.parametrize("kind", KINDS)
def test_thousand_pairs_all_verify(kind):
    rng = random.Random(1000)
    items = rand_items(rng, 1000)
    store, root = build_root(kind, items)
    assert root.digest == ROOTS[kind](items)
    for k, v in items.items():
        p = store.prove(root.version, k)
        assert isinstance(p, InclusionProof)
        assert p.value_digest == hashlib.sha256(v).digest()
        assert verify_inclusion(p, root)
    for _ in range(200):
        k = rng.randbytes(32)
        p = store.prove(root.version, k)
        assert isinstance(p, ExclusionProof)
        assert verify_exclusion(p, root)


@pytest.mark.parametrize("kind", KINDS)
def test_insertion_order_does_not_matter(kind):
    rng = random.Random(7)
    items = list(rand_items(rng, 200).items())
    roots = set()
    for _ in range(5):
        rng.shuffle(items)
        roots.add(build_root(kind, dict(items))[1].digest)
    assert len(roots) == 1


@pytest.mark.parametrize("kind", KINDS)
def test_duplicate_key_in_window_is_rejected(kind):
    w = AuthenticatedStore(kind, MemoryBackend()).open_window(0)
    w.insert(bytes(32), b"a")
    with pytest.raises(DuplicateKeyError):
        w.insert(bytes(32), b"b")


@pytest.mark.parametrize("kind", KINDS)
def test_keys_must_be_32_bytes(kind):
    w = AuthenticatedStore(kind, MemoryBackend()).open_window(0)
    with pytest.raises(ValueError):
        w.insert(b"short", b"a")


@pytest.mark.parametrize("kind", KINDS)
def test_window_versions_are_consecutive(kind):
    store = AuthenticatedStore(kind, MemoryBackend())
    store.open_window(0).seal()
    with pytest.raises(VersionError):
        store.open_window(2)
    with pytest.raises(VersionError):
        store.open_window(0)
    store.open_window(1)


@pytest.mark.parametrize("kind", KINDS)
def test_sealed_window_is_frozen(kind):
    w = AuthenticatedStore(kind, MemoryBackend()).open_window(0)
    w.seal()
    with pytest.raises(StoreError):
        w.insert(bytes(32), b"x")
    with pytest.raises(StoreError):
        w.seal()


@pytest.mark.parametrize("kind", KINDS)
def test_unknown_version_and_presence_errors(kind):
    store, root = build_root(kind, {bytes(32): b"x"})
    with pytest.raises(UnknownVersionError):
        store.prove(5, bytes(32))
    with pytest.raises(PresenceError):
        store.prove_exclusion(root.version, bytes(32))
    with pytest.raises(PresenceError):
        store.prove_inclusion(root.version, b"\x01" * 32)


@pytest.mark.parametrize("kind", KINDS)
def test_versions_are_isolated(kind):
    store = AuthenticatedStore(kind, MemoryBackend())
    a, b = b"\xaa" * 32, b"\xbb" * 32
    w = store.open_window(0)
    w.insert(a, b"1")
    r0 = w.seal()
    w = store.open_window(1)
    w.insert(b, b"2")
    r1 = w.seal()
    assert isinstance(store.prove(0, a), InclusionProof)
    assert isinstance(store.prove(0, b), ExclusionProof)
    assert isinstance(store.prove(1, a), ExclusionProof)
    assert isinstance(store.prove(1, b), InclusionProof)
    # A proof for one version does not verify against another version's root.
    assert not verify_inclusion(store.prove(0, a), r1)
    assert verify_inclusion(store.prove(0, a), r0)


@pytest.mark.parametrize("kind", KINDS)
def test_ten_historical_versions_still_prove(kind):
    rng = random.Random(10)
    backend = MemoryBackend()
    store = AuthenticatedStore(kind, backend)
    windows = []
    for v in range(10):
        items = rand_items(rng, 50)
        w = store.open_window(v)
        for k, val in items.items():
            w.insert(k, val)
        windows.append((items, w.seal()))
    # Fresh store over the same backend: nothing to replay, roots are on disk.
    reopened = AuthenticatedStore(kind, backend)
    for v, (items, root) in enumerate(windows):
        assert reopened.root(v) == root
        for k in list(items)[:10]:
            assert verify_inclusion(reopened.prove(v, k), root)
        other = windows[(v + 1) % 10][0]
        for k in list(other)[:10]:
            assert verify_exclusion(reopened.prove(v, k), root)


@pytest.mark.parametrize("kind", KINDS)
def test_file_backend_survives_reopen(kind, tmp_path):
    rng = random.Random(3)
    items = rand_items(rng, 100)
    backend = FileBackend(tmp_path / "db")
    store = AuthenticatedStore(kind, backend)
    w = store.open_window(0)
    for k, v in items.items():
        w.insert(k, v)
    root = w.seal()
    backend.flush()
    backend.close()
    again = AuthenticatedStore(kind, FileBackend(tmp_path / "db"))
    assert again.root(0) == root
    for k in items:
        assert verify_inclusion(again.prove(0, k), root)
    assert again.latest_version == 0
    again.open_window(1)


def test_file_backend_drops_a_torn_tail(tmp_path):
    path = tmp_path / "db"
    b = FileBackend(path)
    b.put(b"a", b"1")
    b.put(b"b", b"2")
    b.flush()
    b.close()
    with open(path, "ab") as f:
        f.write(b"\x01\x00\x00")  # half a record header
    b = FileBackend(path)
    assert b.get(b"a") == b"1" and b.get(b"b") == b"2"
    b.put(b"c", b"3")
    b.close()
    assert FileBackend(path).get(b"c") == b"3"


def test_file_backend_delete_and_iterate(tmp_path):
    b = FileBackend(tmp_path / "db")
    for i in range(5):
        b.put(b"p" + bytes([i]), bytes([i]))
    b.put(b"q", b"x")
    b.delete(b"p\x02")
    b.close()
    b = FileBackend(tmp_path / "db")
    assert [k for k, _ in b.iterate(b"p")] == [b"p\x00", b"p\x01", b"p\x03", b"p\x04"]


@pytest.mark.parametrize("kind", KINDS)
def test_proof_bytes_roundtrip(kind):
    rng = random.Random(4)
    items = rand_items(rng, 30)
    store, root = build_root(kind, items)
    for k in list(items)[:5] + [rng.randbytes(32) for _ in range(5)]:
        p = store.prove(root.version, k)
        assert decode_proof(p.to_bytes()) == p


@pytest.mark.parametrize("kind", KINDS)
def test_truncated_proof_bytes_fail_to_decode(kind):
    store, root = build_root(kind, {bytes(32): b"x", b"\x01" * 32: b"y"})
    raw = store.prove(root.version, bytes(32)).to_bytes()
    for cut in range(len(raw)):
        with pytest.raises(DecodeError):
            decode_proof(raw[:cut])


@pytest.mark.parametrize("kind", KINDS)
def test_proof_against_the_wrong_key_fails(kind):
    store, root = build_root(kind, {bytes(32): b"x", b"\x01" * 32: b"y"})
    p = store.prove(root.version, bytes(32))
    forged = InclusionProof(p.kind, b"\x01" * 32, p.value_digest, p.path, p.root)
    assert not verify_inclusion(forged, root)


@pytest.mark.parametrize("kind", KINDS)
def test_inclusion_cannot_masquerade_as_exclusion(kind):
    store, root = build_root(kind, {bytes(32): b"x", b"\x01" * 32: b"y", b"\xf0" * 32: b"z"})
    p = store.prove(root.version, bytes(32))
    fake = ExclusionProof(p.kind, p.key, p.path, p.root)
    assert not verify_exclusion(fake, root)


def test_jmt_proofs_are_depth_bounded_on_shared_prefixes():
    rng = random.Random(8)
    keys = shared_prefix_keys(rng, 500, prefix_len=30)
    items = {k: b"v" for k in keys}
    jstore, jroot = build_root("jmt", items)
    mstore, mroot = build_root("mpt", items)
    jcounts = {jstore.prove(0, k).node_count for k in keys}
    mshapes = {tuple(len(n) for n in mstore.prove(0, k).path) for k in keys}
    assert max(jcounts) <= 64
    assert len(mshapes) > 1


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(KINDS),
    st.lists(st.tuples(st.binary(min_size=32, max_size=32), st.binary(max_size=40)), max_size=40, unique_by=lambda t: t[0]),
    st.lists(st.binary(min_size=32, max_size=32), max_size=8),
)
def test_roots_and_verdicts_match_the_oracle(kind, pairs, probes):
    items = dict(pairs)
    store, root = build_root(kind, items)
    assert root.digest == ROOTS[kind](items)
    for k in list(items) + probes:
        p = store.prove(root.version, k)
        assert isinstance(p, InclusionProof) == member(items, k)
        assert verify(p, root)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(KINDS),
    st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=20, unique=True),
    st.data(),
)
def test_no_single_bit_flip_forges_a_proof(kind, keys, data):
    items = {k: b"value" for k in keys}
    store, root = build_root(kind, items)
    probe = data.draw(st.sampled_from(keys + [b"\x00" * 31 + b"\x07"]))
    raw = bytearray(store.prove(root.version, probe).to_bytes())
    bit = data.draw(st.integers(0, len(raw) * 8 - 1))
    raw[bit // 8] ^= 1 << (bit % 8)
    try:
        mutated = decode_proof(bytes(raw))
    except DecodeError:
        return
    if mutated.key == probe:
        assert not verify(mutated, root)
    elif verify(mutated, root):
        # a flipped key bit may yield a genuine proof about a different key, never a false one
        assert isinstance(mutated, InclusionProof) == member(items, mutated.key)


def test_structure_kind_parsing():
    assert StructureKind.parse("jmt") is StructureKind.JMT
    assert StructureKind.parse("MPT") is StructureKind.MPT
    with pytest.raises(ValueError):
        StructureKind.parse("avl")
