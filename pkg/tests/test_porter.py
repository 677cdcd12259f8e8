import random

import pytest

from harness import World
from sark import crypto
from sark.asset import AnchorRef, UpdateVector
from sark.porter import (
    KeyPresentError,
    PendingError,
    Porter,
    PorterConfig,
    PorterError,
    PrematureCloseError,
    RootSupersededError,
    Submission,
    SubmissionRejected,
    UnknownKeyError,
)
from sark.store import FileBackend, MemoryBackend, verify_exclusion


def double_spend(owner, route, anchor, rng):
    vec = UpdateVector(rng.randbytes(8), anchor, rng.randbytes(32))
    return Submission(owner.public, crypto.sign(owner.secret, vec.digest()), vec, route)


def test_three_idle_windows_give_three_exclusions():
    w = World(seed=2)
    asset, owner = w.mint()
    asset, _ = w.transfer(asset, owner, "B", idle=3)
    entry = asset.pop[0]
    assert [e.root.version for e in entry.exclusions] == [0, 1, 2]
    assert entry.inclusion.root.version == 3
    assert all(verify_exclusion(e) for e in entry.exclusions)


def test_resubmission_in_the_same_window_is_rejected():
    w = World(seed=3)
    asset, owner = w.mint()
    _, sub, _ = w.submit(asset, owner, "B")
    with pytest.raises(SubmissionRejected) as e:
        w.porters["A"].submit(double_spend(owner, sub.route, sub.vector.anchor, w.rng), w.now)
    assert e.value.code == "key-spent"


def test_double_spend_is_rejected_in_a_thousand_randomized_attempts():
    w = World(seed=4, window=100.0)
    porter = w.porters["A"]
    rng = random.Random(44)
    spent = []
    rejected = attempts = 0
    for _ in range(60):
        asset, owner = w.mint()
        _, sub, _ = w.submit(asset, owner, "A")
        spent.append((owner, sub))
    while attempts < 1000:
        # Move time to a random point, often exactly on or around a window close.
        edge = porter.window_end
        w.now = max(w.now, rng.choice([edge - 0.001, edge, edge + 0.001, edge + rng.uniform(0, 300)]))
        if rng.random() < 0.5:
            # race: the attempt lands before the tick that seals the window
            pass
        else:
            w.ledger.anchor(porter, w.now)
        owner, sub = rng.choice(spent)
        try:
            porter.submit(double_spend(owner, sub.route, sub.vector.anchor, rng), w.now)
        except SubmissionRejected as e:
            assert e.code == "key-spent"
            rejected += 1
        attempts += 1
        if rng.random() < 0.1:
            asset, fresh = w.mint()
            _, sub, _ = w.submit(asset, fresh, "A")
            spent.append((fresh, sub))
        if rng.random() < 0.05:
            porter = w.restart("A")
    assert rejected == attempts == 1000


def test_spent_index_survives_a_restart_before_the_window_seals():
    w = World(seed=5)
    asset, owner = w.mint()
    _, sub, _ = w.submit(asset, owner, "B")
    porter = w.restart("A")
    assert crypto.hash(owner.public) in porter.window
    with pytest.raises(SubmissionRejected):
        porter.submit(double_spend(owner, sub.route, sub.vector.anchor, w.rng), w.now)
    w.advance()
    receipt = porter.claim_receipt(owner.public, sub.route.root_index)
    assert receipt.inclusion.root.version == 0
    assert receipt.anchor is not None


def test_file_backed_porter_restart(tmp_path):
    backends = {p: FileBackend(tmp_path / p) for p in ("A", "B")}
    w = World(seed=6, backends=backends)
    asset, owner = w.mint()
    _, sub, _ = w.submit(asset, owner, "B")
    w.advance(2)
    root1 = w.porters["A"].store.root(1)
    for b in backends.values():
        b.close()
    w.backends = {p: FileBackend(tmp_path / p) for p in ("A", "B")}
    porter = w.restart("A")
    assert porter.version == 2
    assert porter.store.root(1) == root1
    assert porter.latest_anchored == 1
    with pytest.raises(SubmissionRejected):
        porter.submit(double_spend(owner, sub.route, sub.vector.anchor, w.rng), w.now)
    assert porter.claim_receipt(owner.public, 0).anchor.verify()


def test_wrong_porter_bad_signature_and_future_index():
    w = World(seed=7)
    asset, owner = w.mint()
    _, sub, _ = w.submit(asset, owner, "B")
    b = w.porters["B"]
    with pytest.raises(SubmissionRejected) as e:
        b.submit(sub, w.now)
    assert e.value.code == "wrong-porter"
    vec = UpdateVector(b"x", sub.vector.anchor, bytes(32))
    with pytest.raises(SubmissionRejected) as e:
        w.porters["A"].submit(Submission(owner.public, sub.signature, vec, sub.route), w.now)
    assert e.value.code == "invalid-signature"
    other = w.keypair()
    ahead = AnchorRef("sloop", "A", 99)
    with pytest.raises(SubmissionRejected) as e:
        w.porters["A"].submit(double_spend(other, ahead, ahead, w.rng), w.now)
    assert e.value.code == "bad-anchor"


def test_claim_errors():
    w = World(seed=8)
    asset, owner = w.mint()
    a = w.porters["A"]
    with pytest.raises(UnknownKeyError):
        a.claim_receipt(owner.public, 0)
    w.submit(asset, owner, "B")
    with pytest.raises(PendingError):
        a.claim_receipt(owner.public, 0)
    w.advance()
    with pytest.raises(PorterError):
        a.claim_receipt(owner.public, 5)


def test_absence_proofs_and_errors():
    w = World(seed=9)
    asset, owner = w.mint()
    stranger = w.keypair()
    w.advance(2)
    w.submit(asset, owner, "B")
    w.advance()
    a = w.porters["A"]
    proofs = a.prove_absence(stranger.public, 0, 3)
    assert [p.root.version for p in proofs] == [0, 1, 2]
    assert all(verify_exclusion(p) for p in proofs)
    with pytest.raises(KeyPresentError) as e:
        a.prove_absence(owner.public, 0, 3)
    assert e.value.extra["version"] == 2
    with pytest.raises(PorterError):
        a.prove_absence(stranger.public, 0, 10)
    with pytest.raises(PorterError):
        a.prove_absence(stranger.public, 2, 1)
    assert a.prove_absence(stranger.public, 1, 1) == []


def test_windows_close_on_phase():
    cfg = PorterConfig("A", bytes(32), window_duration=2000, window_phase=-250, validator="v")
    p = Porter(cfg, MemoryBackend(), now=0)
    assert p.window_end == 1750
    with pytest.raises(PrematureCloseError):
        p.close_window(1749)
    p.close_window(1750)
    assert p.window_end == 3750


def test_anchor_timeout_resubmits():
    cfg = PorterConfig("A", bytes(32), window_duration=100, validator="v")
    p = Porter(cfg, MemoryBackend())
    out = p.tick(100)
    assert [m["type"] for _, m in out] == ["root"] and out[0][1]["version"] == 0
    assert p.tick(150) == []
    out = p.tick(300)
    kinds = [e[1] for e in p.events]
    assert "anchor_timeout" in kinds
    # one window closes per tick, so the retry carries the newest sealed root
    assert out and out[0][1]["version"] == 1


def test_older_root_is_superseded():
    cfg = PorterConfig("A", bytes(32), window_duration=100, validator="v")
    p = Porter(cfg, MemoryBackend())
    p.close_window(100)
    p.close_window(200)
    p.submit_root(1, 200)
    with pytest.raises(RootSupersededError):
        p.submit_root(0, 200)


def test_invalid_anchor_is_discarded():
    w = World(seed=10)
    a = w.porters["A"]
    w.now = a.window_end
    a.close_window(w.now)
    out = a.tick(w.now)
    assert out
    garbage = {"type": "anchor", "version": 0, "proof": out[0][1]["root"], "height": 1,
               "root": "00" * 32, "block_hash": "00" * 32}
    assert a.on_message("v", garbage, w.now) == []
    assert a.on_message("v", {"type": "anchor"}, w.now) == []
    # a valid anchor meant for porter B does not bind A's chain
    b = w.porters["B"]
    b.close_window(w.now)
    delivered = []
    b.on_message = lambda src, msg, now: delivered.append(msg) or []
    w.ledger.anchor(b, w.now)
    assert a.on_message("v", delivered[0], w.now) == []
    assert a.latest_anchored is None


def test_handle_speaks_json():
    w = World(seed=12)
    a = w.porters["A"]
    st = a.handle({"type": "status", "rid": 3})
    assert st["status"] == "ok" and st["rid"] == 3 and st["porter_id"] == "A"
    bad = a.handle({"type": "submit", "owner_key": "zz"})
    assert bad["status"] == "error" and bad["reason"] == "bad-request"
    unknown = a.handle({"type": "claim", "owner_key": "00" * 32, "since": 0})
    assert unknown["status"] == "error"
    assert a.handle({"type": "nope"}) is None


def test_mpt_porter_end_to_end():
    w = World(seed=13, structure="mpt")
    asset, owner = w.mint()
    asset, owner = w.transfer(asset, owner, "B", idle=1)
    asset, owner = w.transfer(asset, owner, "A", idle=1)
    from sark.asset import verify_asset

    assert verify_asset(asset, w.ledger, w.issuer.public).verdict == "VALID"
