import dataclasses
import json
import os
import shutil
import signal

import pytest
from click.testing import CliRunner

from cluster import Cluster, free_ports
from sark.anchor import LedgerRoot
from sark.asset import Asset, PopEntry
from sark.cli import main
from sark.wallet import Wallet, atomic_write


def invoke(*args, **kw):
    return CliRunner().invoke(main, list(args), catch_exceptions=False, **kw)


# -- offline ----------------------------------------------------------------------


def test_bench_with_zero_ops_prints_only_the_header():
    r = invoke("bench", "--ops", "0")
    assert r.exit_code == 0
    assert r.output.strip() == "kind,ops,p50_us,p95_us,ops_per_sec"


def test_bench_rows(tmp_path):
    out = tmp_path / "b.csv"
    r = invoke("bench", "--ops", "300", "--block-size", "100", "--backend", "file", "--out", str(out))
    assert r.exit_code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("JMT") and lines[2].startswith("MPT")


def test_sim_prints_metrics_and_passes(tmp_path):
    trace = tmp_path / "t.jsonl"
    r = invoke("sim", "no_fault", "--seeds", "2", "--trace", str(trace))
    assert r.exit_code == 0, r.output
    rows = r.output.strip().splitlines()
    assert rows[0].startswith("scenario,seed,height,finality_ms")
    assert {row.split(",")[1] for row in rows[1:]} == {"0", "1"}
    assert trace.read_text().count("\n") > 10


def test_sim_from_a_json_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"scenario": "follower_crash", "seed": 4}))
    assert invoke("sim", str(p)).exit_code == 0
    p.write_text(json.dumps({"faults": [{"time": 1, "action": "melt"}]}))
    assert invoke("sim", str(p)).exit_code == 4
    assert invoke("sim", "no_such_scenario").exit_code == 4


def test_verify_rejects_truncated_files(tmp_path):
    issuer = tmp_path / "issuer.key"
    assert invoke("keygen", "--issuer", "--out", str(issuer)).exit_code == 0
    bad = tmp_path / "bad.uso"
    bad.write_bytes(b"SARKUSO1\x00\x00")
    r = invoke("verify", str(bad), "--issuer-key", str(issuer))
    assert r.exit_code == 4 and "parse error" in r.output
    bad.write_bytes(b"garbage")
    assert invoke("verify", str(bad), "--issuer-key", str(issuer)).exit_code == 4
    assert invoke("verify", str(tmp_path / "missing"), "--issuer-key", str(issuer)).exit_code == 4


def test_mint_with_an_unknown_porter_is_an_input_error(tmp_path):
    conf = tmp_path / "w.conf"
    conf.write_text(f"porters = A=127.0.0.1:1\nwallet_dir = {tmp_path / 'w'}\nissuer_key = {tmp_path / 'i.key'}\n")
    r = invoke("--config", str(conf), "mint", "--message", "x", "--porter", "Q", "--out", str(tmp_path / "a.uso"))
    assert r.exit_code == 4
    assert "unknown porter" in r.output


def test_mint_without_a_reachable_porter_is_a_network_error(tmp_path):
    (port,) = free_ports(1)
    conf = tmp_path / "w.conf"
    conf.write_text(f"porters = A=127.0.0.1:{port}\nwallet_dir = {tmp_path / 'w'}\nissuer_key = {tmp_path / 'i.key'}\n")
    invoke("keygen", "--issuer", "--out", str(tmp_path / "i.key"))
    r = invoke("--config", str(conf), "mint", "--message", "x", "--porter", "A", "--out", str(tmp_path / "a.uso"))
    assert r.exit_code == 3


def test_keygen_variants(tmp_path):
    r = invoke("--data-dir", str(tmp_path / "w"), "--json", "keygen", "--out", str(tmp_path / "k.json"))
    data = json.loads(r.output)
    assert r.exit_code == 0 and len(bytes.fromhex(data["public"])) == 32
    assert json.loads((tmp_path / "k.json").read_text())["public"] == data["public"]
    r = invoke("keygen", "--node", "--out", str(tmp_path / "node.seed"))
    assert r.exit_code == 0 and len(bytes.fromhex((tmp_path / "node.seed").read_text().strip())) == 32
    assert oct(os.stat(tmp_path / "node.seed").st_mode & 0o777) == "0o600"
    assert invoke("keygen", "--issuer").exit_code == 4


def test_bad_config_and_bad_inputs(tmp_path):
    assert invoke("--config", str(tmp_path / "nope.conf"), "bench", "--ops", "0").exit_code == 4
    assert invoke("absence", "--owner-key", "zz", "--porter", "x:1", "--from", "0", "--to", "1").exit_code == 4
    assert invoke("absence", "--owner-key", "00" * 32, "--porter", "nohost", "--from", "0", "--to", "1").exit_code == 4
    assert invoke("porter", "run").exit_code == 4


def test_atomic_write_survives_a_crash_mid_write(tmp_path, monkeypatch):
    target = tmp_path / "keys.json"
    atomic_write(target, b"old")

    def boom(*a):
        raise OSError("disk on fire")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, b"new")
    monkeypatch.undo()
    assert target.read_bytes() == b"old"
    assert os.listdir(tmp_path) == ["keys.json"]


def test_wallet_never_hands_out_a_key_twice(tmp_path):
    w = Wallet(tmp_path)
    keys = {w.designate("x").public for _ in range(20)}
    assert len(keys) == 20
    again = Wallet(tmp_path)
    assert len(again.designated_indices()) == 20
    (tmp_path / "keys.json").write_text("{torn")
    with pytest.raises(Exception):
        Wallet(tmp_path)


# -- against a live local cluster ------------------------------------------------------


@pytest.fixture(scope="module")
def cluster(tmp_path_factory):
    root = tmp_path_factory.mktemp("cluster")
    cl = Cluster(root)
    cl.start_all()
    try:
        cl.wait_for(cl.leader, timeout=30)
        for p in cl.porter_ids:
            cl.wait_for(lambda p=p: cl.porter_ready(p), timeout=30)
        assert cl.sark("keygen", "--issuer", "--out", str(root / "issuer.key")).returncode == 0
        yield cl
    finally:
        cl.stop_all()


def _key(cl, name):
    path = cl.root / f"{name}.key.json"
    r = cl.sark("keygen", "--out", str(path))
    assert r.returncode == 0, r.stderr
    return str(path)


def test_e2e_mint_three_transfers_across_two_porters(cluster):
    cl = cluster
    asset = str(cl.root / "e2e.uso")
    r = cl.sark("mint", "--message", "ten units", "--porter", "A", "--out", asset)
    assert r.returncode == 0, r.stderr
    for i, nxt in enumerate(["B", "A", "B"], start=1):
        r = cl.sark("transfer", asset, _key(cl, f"e2e{i}"), "--next-porter", nxt, "--message", f"hop {i}")
        assert r.returncode == 0, r.stderr
    r = cl.sark("--json", "verify", asset)
    assert r.returncode == 0, r.stdout + r.stderr
    report = json.loads(r.stdout)
    assert report["verdict"] == "VALID"
    assert [e["anchor"] for e in report["entries"]] == ["ok"] * 3
    a = Asset.from_bytes(open(asset, "rb").read())
    assert [e.inclusion.root.version >= a.route(i).root_index for i, e in enumerate(a.pop, 1)] == [True] * 3
    # wallet audit: three keys spent, three distinct recipients, nothing spent twice
    state = json.loads((cl.root / "wallet" / "keys.json").read_text())
    assert len(set(state["spent"])) == len(state["spent"]) >= 3
    assert len(set(state["recipients"])) == len(state["recipients"]) >= 3
    wallet = Wallet(cl.root / "wallet")
    assert all(wallet.find(bytes.fromhex(k)) is not None for k in state["spent"])


def test_consumed_key_is_refused_locally_and_by_the_porter(cluster):
    cl = cluster
    asset = str(cl.root / "ds.uso")
    assert cl.sark("mint", "--message", "m", "--porter", "A", "--out", asset).returncode == 0
    before = cl.root / "ds-before.uso"
    shutil.copy(asset, before)
    wallet_copy = cl.root / "wallet-copy"
    shutil.copytree(cl.root / "wallet", wallet_copy)
    recipient = _key(cl, "ds1")
    assert cl.sark("transfer", asset, recipient).returncode == 0
    # the same wallet refuses to sign with the consumed key
    r = cl.sark("transfer", str(before), _key(cl, "ds2"))
    assert r.returncode == 4 and "refused" in r.stderr
    # the same recipient key cannot be designated twice
    r = cl.sark("transfer", asset, recipient)
    assert r.returncode == 4
    # a stale wallet copy gets past the local check; the Porter rejects it
    r = cl.sark("--data-dir", str(wallet_copy), "transfer", str(before), _key(cl, "ds3"))
    assert r.returncode == 2 and "key-spent" in r.stderr
    # ...and still does after a Porter restart
    cl.stop("A")
    cl.start("A")
    cl.wait_for(lambda: cl.porter_ready("A"), timeout=30)
    shutil.rmtree(wallet_copy)
    shutil.copytree(cl.root / "wallet", wallet_copy)
    state = json.loads((wallet_copy / "keys.json").read_text())
    state["spent"] = []
    (wallet_copy / "keys.json").write_text(json.dumps(state))
    r = cl.sark("--data-dir", str(wallet_copy), "transfer", str(before), _key(cl, "ds4"))
    assert r.returncode == 2 and "key-spent" in r.stderr


def test_wrong_porter_rejects(cluster):
    cl = cluster
    asset = str(cl.root / "wp.uso")
    assert cl.sark("mint", "--message", "m", "--porter", "A", "--out", asset).returncode == 0
    r = cl.sark("transfer", asset, _key(cl, "wp1"), "--porter", cl.porter_addr["B"])
    assert r.returncode == 2 and "wrong-porter" in r.stderr


def test_absence_against_a_live_porter(cluster):
    cl = cluster
    stranger = _key(cl, "absent")
    r = cl.sark("--json", "absence", "--owner-key", stranger, "--porter", cl.porter_addr["A"], "--from", "0", "--to", "1")
    assert r.returncode == 0, r.stdout + r.stderr
    assert json.loads(r.stdout)["verified"] is True


def test_verify_without_a_ledger_and_with_a_forged_anchor(cluster):
    cl = cluster
    asset = cl.root / "fa.uso"
    assert cl.sark("mint", "--message", "m", "--porter", "B", "--out", str(asset)).returncode == 0
    assert cl.sark("transfer", str(asset), _key(cl, "fa1")).returncode == 0
    (dead,) = free_ports(1)
    r = cl.sark("verify", str(asset), "--ledger", f"127.0.0.1:{dead}")
    assert r.returncode == 3 and "UNANCHORED" in r.stdout
    a = Asset.from_bytes(asset.read_bytes())
    e = a.pop[0]
    lr = e.anchor.ledger_root
    forged_anchor = dataclasses.replace(e.anchor, ledger_root=LedgerRoot(lr.height, bytes(32), lr.block_hash))
    forged = dataclasses.replace(a, pop=(PopEntry(e.inclusion, e.exclusions, forged_anchor),))
    bad = cl.root / "fa-forged.uso"
    bad.write_bytes(forged.to_bytes())
    r = cl.sark("verify", str(bad))
    assert r.returncode == 2 and "INVALID" in r.stdout


def test_killed_leader_is_replaced_and_transfers_continue(cluster):
    cl = cluster
    old = cl.leader()
    assert old is not None
    height = cl.height()
    cl.stop(old, sig=signal.SIGKILL)
    new = cl.wait_for(lambda: (ld := cl.leader()) and ld != old and ld, timeout=30)
    assert new != old
    cl.wait_for(lambda: cl.height() > height, timeout=30)
    asset = str(cl.root / "kl.uso")
    # use a Porter whose validator is still alive
    porter = next(p for p in cl.porter_ids if f"validator_id = {old}\n" not in cl.configs[p].read_text())
    assert cl.sark("mint", "--message", "m", "--porter", porter, "--out", asset).returncode == 0
    r = cl.sark("transfer", asset, _key(cl, "kl1"))
    assert r.returncode == 0, r.stderr
    cl.start(old)
    cl.wait_for(lambda: (st := cl.status(old)) and st["height"] >= cl.height() - 1, timeout=30)
    assert cl.sark("verify", asset).returncode == 0
