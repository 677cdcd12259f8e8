"""``sark`` command line: wallet lifecycle, node runners, simulator, benchmark.

Exit codes: 0 success / valid, 2 verification failure or Porter rejection,
3 network failure (or a partial verdict because the ledger was unreachable),
4 bad input.
"""

from __future__ import annotations

import asyncio
import functools
import json
import logging
import secrets
import sys
import tempfile
import time
from pathlib import Path

import click

from . import crypto
from .asset import (
    AnchorRef,
    Asset,
    AssetError,
    Update,
    UpdateVector,
    append_update,
    make_genesis_vector,
    make_transfer,
    mint,
    verify_asset,
)
from .codec import DecodeError
from .config import ConfigFileError, load_config, parse_endpoint, parse_mapping
from .net import NetworkError, RemoteLedgerView, porter_request, serve_porter, serve_sloop
from .porter import PorterReceipt, Submission
from .store import StructureKind, decode_proof, verify_exclusion
from .wallet import (
    ConsumedKeyError,
    Wallet,
    WalletError,
    atomic_write,
    load_asset,
    pending_path,
    read_key_file,
    save_asset,
    write_key_file,
)

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_NETWORK = 3
EXIT_INPUT = 4


class Failure(Exception):
    def __init__(self, code: int, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


def _emit(ctx, data: dict, text: str | None = None) -> None:
    if ctx.obj["json"]:
        click.echo(json.dumps(data, indent=1, sort_keys=True))
    elif text is not None:
        click.echo(text)


def handled(fn):
    """Map library exceptions onto exit codes and one-line messages."""

    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, *args, **kwargs):
        try:
            return fn(ctx, *args, **kwargs)
        except Failure as e:
            err, code = str(e), e.code
            extra = e.extra
        except NetworkError as e:
            err, code, extra = str(e), EXIT_NETWORK, {}
        except ConsumedKeyError as e:
            err, code, extra = f"refused: {e}", EXIT_INPUT, {}
        except (WalletError, ConfigFileError, DecodeError, OSError, ValueError) as e:
            err, code, extra = f"{type(e).__name__}: {e}" if isinstance(e, DecodeError) else str(e), EXIT_INPUT, {}
        if ctx.obj["json"]:
            click.echo(json.dumps({"status": "error", "error": err, **extra}, sort_keys=True))
        else:
            click.echo(f"error: {err}", err=True)
        ctx.exit(code)

    return wrapper


def _config(ctx) -> dict[str, str]:
    return ctx.obj["config"]


def _wallet(ctx) -> Wallet:
    return Wallet(ctx.obj["data_dir"] or _config(ctx).get("wallet_dir", ".sark-wallet"))


def _porters(ctx) -> dict[str, str]:
    return parse_mapping(_config(ctx).get("porters", ""))


def _porter_endpoint(ctx, porter_id: str, override: str | None = None) -> tuple[str, int]:
    if override:
        return parse_endpoint(override)
    known = _porters(ctx)
    if porter_id not in known:
        raise Failure(EXIT_INPUT, f"unknown porter {porter_id!r}; known: {sorted(known) or 'none'}")
    return parse_endpoint(known[porter_id])


def _ledger_endpoint(ctx, override: str | None) -> tuple[str, int] | None:
    value = override or _config(ctx).get("ledger")
    return parse_endpoint(value) if value else None


# -- issuer keys ----------------------------------------------------------------


def save_issuer_key(path: str | Path, key: crypto.IssuerKey) -> None:
    atomic_write(path, json.dumps({"n": hex(key.n), "e": key.e, "d": hex(key.d)}).encode() + b"\n")


def load_issuer_key(path: str | Path) -> crypto.IssuerKey:
    try:
        d = json.loads(Path(path).read_text())
        return crypto.IssuerKey(int(d["n"], 16), int(d["e"]), int(d["d"], 16))
    except FileNotFoundError:
        raise Failure(EXIT_INPUT, f"issuer unreachable: no issuer key at {path} (create one with `sark keygen --issuer`)")
    except (ValueError, KeyError, TypeError) as e:
        raise Failure(EXIT_INPUT, f"bad issuer key file {path}: {e}")


def load_issuer_public(path: str | Path) -> crypto.IssuerPublicKey:
    try:
        d = json.loads(Path(path).read_text())
        return crypto.IssuerPublicKey(int(d["n"], 16), int(d.get("e", crypto.RSA_EXPONENT)))
    except FileNotFoundError:
        raise Failure(EXIT_INPUT, f"no issuer key at {path}")
    except (ValueError, KeyError, TypeError) as e:
        raise Failure(EXIT_INPUT, f"bad issuer key file {path}: {e}")


def _issuer_path(ctx, option: str | None) -> str:
    path = option or _config(ctx).get("issuer_key")
    if not path:
        raise Failure(EXIT_INPUT, "no issuer key configured (--issuer-key or issuer_key in the config)")
    return path


# -- root -----------------------------------------------------------------------


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="flat key = value config file")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.option("--data-dir", type=click.Path(file_okay=False), help="wallet or node data directory")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, as_json, data_dir, verbose):
    """Stateful, oblivious assets over Porters and the Sloop ledger."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    ctx.ensure_object(dict)
    try:
        cfg = load_config(config_path) if config_path else {}
    except ConfigFileError as e:
        click.echo(f"error: {e}", err=True)
        ctx.exit(EXIT_INPUT)
    ctx.obj.update(config=cfg, config_path=config_path, json=as_json, data_dir=data_dir)


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), help="where to write the key file")
@click.option("--issuer", "kind", flag_value="issuer", help="RSA blind-signing issuer key")
@click.option("--node", "kind", flag_value="node", help="Ed25519 seed for a Porter or Sloop node")
@click.option("--wallet", "kind", flag_value="wallet", default=True, help="one-time owner key (default)")
@handled
def keygen(ctx, out, kind):
    """Create a key: a fresh one-time wallet key unless told otherwise."""
    if kind == "issuer":
        if not out:
            raise Failure(EXIT_INPUT, "--out is required for issuer keys")
        key = crypto.issuer_keygen()
        save_issuer_key(out, key)
        _emit(ctx, {"status": "ok", "path": out, "modulus_bits": key.n.bit_length()}, f"issuer key written to {out}")
        return
    if kind == "node":
        seed = secrets.token_bytes(32)
        pub = crypto.keygen(seed).public.hex()
        if out:
            atomic_write(out, seed.hex().encode() + b"\n")
            Path(out).chmod(0o600)
        _emit(ctx, {"status": "ok", "public": pub, "path": out}, pub)
        return
    key = _wallet(ctx).designate("receive")
    if out:
        write_key_file(out, key)
    _emit(ctx, {"status": "ok", "public": key.public.hex(), "index": key.index, "path": out}, key.public.hex())


@main.command("mint")
@click.option("--message", required=True, help="asset message / denomination")
@click.option("--porter", "porter_id", required=True, help="id of the Porter that will handle the first transfer")
@click.option("--root-index", type=int, help="Porter window to anchor from (default: ask the Porter)")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--issuer-key", type=click.Path(dir_okay=False))
@click.option("--ledger-id", default="sloop", show_default=True)
@handled
def mint_cmd(ctx, message, porter_id, root_index, out, issuer_key, ledger_id):
    """Mint a new asset with a blind issuer signature (local issuer mode)."""
    endpoint = _porter_endpoint(ctx, porter_id)
    issuer = crypto.Issuer(load_issuer_key(_issuer_path(ctx, issuer_key)))
    if root_index is None:
        status = porter_request(endpoint, {"type": "status"})
        if status.get("status") != "ok":
            raise Failure(EXIT_NETWORK, f"porter status failed: {status.get('reason')}")
        root_index = int(status["version"])
    wallet = _wallet(ctx)
    owner = wallet.designate("mint")
    vector = make_genesis_vector(message.encode(), AnchorRef(ledger_id, porter_id, root_index), owner.public)
    asset = mint(vector, issuer)
    save_asset(out, asset)
    fp = asset.fingerprint()
    _emit(ctx, {"status": "ok", "path": out, "fingerprint": fp, "owner_key": owner.public.hex()}, fp)


def _claim_loop(endpoint, owner_key: bytes, since: int, wait: float) -> PorterReceipt | None:
    deadline = time.monotonic() + wait
    while True:
        resp = porter_request(endpoint, {"type": "claim", "owner_key": owner_key.hex(), "since": since})
        if resp.get("status") == "ok" and resp["receipt"].get("anchor"):
            return PorterReceipt.from_json(resp["receipt"])
        if resp.get("status") == "error" and resp.get("reason") != "pending":
            raise Failure(EXIT_VERIFY, f"porter rejected claim: {resp.get('reason')}", reason=resp.get("reason"))
        if time.monotonic() >= deadline:
            return None
        time.sleep(0.2)


def _finish(ctx, asset_path: Path, pending: dict, receipt: PorterReceipt) -> None:
    asset = load_asset(asset_path)
    update = Update(UpdateVector.decode(bytes.fromhex(pending["vector"])), bytes.fromhex(pending["signature"]))
    try:
        asset = append_update(asset, update, receipt.pop_entry())
    except AssetError as e:
        raise Failure(EXIT_VERIFY, f"receipt does not verify: {e}")
    save_asset(asset_path, asset)
    pending_path(asset_path).unlink(missing_ok=True)
    data = {
        "status": "ok",
        "path": str(asset_path),
        "updates": len(asset.updates),
        "exclusions": len(receipt.exclusions),
        "fingerprint": asset.fingerprint(),
    }
    _emit(ctx, data, f"transfer {len(asset.updates)} recorded ({len(receipt.exclusions)} exclusion proofs)")


@main.command()
@click.argument("asset_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("recipient_key_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--porter", "porter_addr", help="endpoint to submit to (default: the Porter named by the asset)")
@click.option("--next-porter", help="Porter id for the next transfer (default: the current one)")
@click.option("--message", default="", help="message carried by the update")
@click.option("--wait", type=float, default=30.0, show_default=True, help="seconds to wait for an anchored receipt")
@handled
def transfer(ctx, asset_file, recipient_key_file, porter_addr, next_porter, message, wait):
    """Hand the asset to RECIPIENT_KEY_FILE's one-time key."""
    asset_path = Path(asset_file)
    if pending_path(asset_path).exists():
        raise Failure(EXIT_INPUT, "a transfer is already pending for this asset; run `sark claim`")
    asset = load_asset(asset_path)
    wallet = _wallet(ctx)
    recipient = read_key_file(recipient_key_file)
    wallet.check_recipient(recipient)  # refuse before touching the network
    secret = wallet.owner_secret(asset)
    route = asset.head.anchor
    endpoint = _porter_endpoint(ctx, route.porter_id, porter_addr)
    next_id = next_porter or route.porter_id
    # --porter only overrides where we submit; the next Porter is looked up by id.
    if next_id in _porters(ctx) or next_id != route.porter_id:
        next_endpoint = _porter_endpoint(ctx, next_id)
    else:
        next_endpoint = endpoint
    status = porter_request(next_endpoint, {"type": "status"})
    if status.get("status") != "ok" or status.get("porter_id") != next_id:
        raise Failure(EXIT_INPUT, f"endpoint for {next_id} answered as {status.get('porter_id')}")
    anchor = AnchorRef(route.ledger_id, next_id, int(status["version"]))
    update, vector = make_transfer(asset, secret, recipient, message.encode(), anchor)
    owner = crypto.public_key(secret)
    sub = Submission(owner, update.signature, vector, route)
    resp = porter_request(endpoint, {"type": "submit", **sub.to_json()})
    if resp.get("status") != "ok":
        reason = resp.get("reason")
        raise Failure(EXIT_VERIFY, f"porter rejected the transfer: {reason}: {resp.get('detail')}", reason=reason)
    wallet.mark_spent(owner)
    wallet.record_recipient(recipient)
    pending = {
        "vector": vector.encode().hex(),
        "signature": update.signature.hex(),
        "owner_key": owner.hex(),
        "since": route.root_index,
        "porter_id": route.porter_id,
        "endpoint": f"{endpoint[0]}:{endpoint[1]}",
    }
    atomic_write(pending_path(asset_path), json.dumps(pending).encode())
    receipt = _claim_loop(endpoint, owner, route.root_index, wait)
    if receipt is None:
        raise Failure(EXIT_NETWORK, "pending, re-run claim", pending=True)
    _finish(ctx, asset_path, pending, receipt)


@main.command()
@click.argument("asset_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--wait", type=float, default=30.0, show_default=True)
@handled
def claim(ctx, asset_file, wait):
    """Collect the receipt for a pending transfer and extend the POP."""
    asset_path = Path(asset_file)
    try:
        pending = json.loads(pending_path(asset_path).read_text())
    except FileNotFoundError:
        raise Failure(EXIT_INPUT, "no pending transfer for this asset")
    endpoint = parse_endpoint(pending["endpoint"])
    receipt = _claim_loop(endpoint, bytes.fromhex(pending["owner_key"]), int(pending["since"]), wait)
    if receipt is None:
        raise Failure(EXIT_NETWORK, "pending, re-run claim", pending=True)
    _finish(ctx, asset_path, pending, receipt)


@main.command()
@click.argument("asset_file", type=click.Path(dir_okay=False))
@click.option("--ledger", help="Sloop node endpoint (host:port)")
@click.option("--issuer-key", type=click.Path(dir_okay=False), help="issuer key or public key file")
@handled
def verify(ctx, asset_file, ledger, issuer_key):
    """Check signatures, proofs and ledger anchors; exit 0 iff VALID."""
    try:
        data = Path(asset_file).read_bytes()
    except OSError as e:
        raise Failure(EXIT_INPUT, str(e))
    try:
        asset = Asset.from_bytes(data)
    except (DecodeError, ValueError) as e:
        raise Failure(EXIT_INPUT, f"parse error: {e}")
    issuer = load_issuer_public(_issuer_path(ctx, issuer_key))
    addr = _ledger_endpoint(ctx, ledger)
    view = RemoteLedgerView(addr) if addr else None
    report = verify_asset(asset, view, issuer)
    verdict = report.verdict
    out = report.to_json()
    if view is not None and view.unreachable:
        out["ledger_error"] = view.unreachable
    if ctx.obj["json"]:
        click.echo(json.dumps(out, indent=1, sort_keys=True))
    else:
        click.echo(f"genesis issuer signature: {'ok' if report.genesis_ok else 'FAIL'}")
        click.echo(f"{'#':>3}  {'signature':9}  {'inclusion':9}  {'gap':5}  anchor")
        for e in report.entries:
            row = f"{e.index:>3}  {_ok(e.signature_ok):9}  {_ok(e.inclusion_ok):9}  {_ok(e.gap_ok):5}  {e.anchor}"
            click.echo(row)
            for err in e.errors:
                click.echo(f"       {err}")
        for err in report.errors:
            click.echo(f"error: {err}")
        if view is not None and view.unreachable:
            click.echo(f"ledger: {view.unreachable}")
        click.echo(verdict)
    if verdict == "VALID":
        return
    if verdict == "UNANCHORED" and (view is None or view.unreachable):
        ctx.exit(EXIT_NETWORK)
    ctx.exit(EXIT_VERIFY)


def _ok(flag: bool) -> str:
    return "ok" if flag else "FAIL"


@main.command()
@click.option("--owner-key", required=True, help="hex public key or a key file")
@click.option("--porter", "porter_addr", required=True, help="Porter endpoint host:port")
@click.option("--from", "from_version", type=int, required=True)
@click.option("--to", "to_version", type=int, required=True, help="exclusive upper window")
@handled
def absence(ctx, owner_key, porter_addr, from_version, to_version):
    """Prove a key was not used in Porter windows [from, to)."""
    key = read_key_file(owner_key) if Path(owner_key).exists() else bytes.fromhex(owner_key)
    resp = porter_request(parse_endpoint(porter_addr), {
        "type": "absence", "owner_key": key.hex(), "from": from_version, "to": to_version,
    })
    if resp.get("status") != "ok":
        raise Failure(EXIT_VERIFY, f"porter: {resp.get('reason')}: {resp.get('detail')}", reason=resp.get("reason"))
    proofs = [decode_proof(bytes.fromhex(p)) for p in resp["proofs"]]
    trie_key = crypto.hash(key)
    ok = len(proofs) == to_version - from_version and all(
        p.key == trie_key and p.root.version == v and verify_exclusion(p)
        for v, p in zip(range(from_version, to_version), proofs)
    )
    _emit(
        ctx,
        {"status": "ok" if ok else "invalid", "windows": [p.root.version for p in proofs], "verified": ok},
        f"absent from windows {from_version}..{to_version - 1}: {'verified' if ok else 'PROOF FAILURE'}",
    )
    if not ok:
        ctx.exit(EXIT_VERIFY)


# -- node runners -----------------------------------------------------------------


def _node_config(ctx, local: str | None) -> dict[str, str]:
    if local:
        return load_config(local)
    if not ctx.obj["config_path"]:
        raise Failure(EXIT_INPUT, "a node config file is required (--config)")
    return _config(ctx)


@main.group()
def porter():
    """Porter node commands."""


@porter.command("run")
@click.option("--config", "local_config", type=click.Path(dir_okay=False))
@handled
def porter_run(ctx, local_config):
    """Serve the Porter client protocol and anchor roots with its validator."""
    cfg = _node_config(ctx, local_config)
    _run_node(serve_porter(cfg, ctx.obj["data_dir"], ready=_announce("porter", cfg)))


@main.group()
def sloop():
    """Sloop validator node commands."""


@sloop.command("run")
@click.option("--config", "local_config", type=click.Path(dir_okay=False))
@handled
def sloop_run(ctx, local_config):
    """Run one Sloop validator."""
    cfg = _node_config(ctx, local_config)
    _run_node(serve_sloop(cfg, ctx.obj["data_dir"], ready=_announce("sloop", cfg)))


def _announce(kind: str, cfg: dict[str, str]):
    def ready(rt):
        click.echo(f"{kind} {rt.id} listening on {cfg.get('listen')}", err=True)

    return ready


def _run_node(coro) -> None:
    try:
        asyncio.run(coro)
    except OSError as e:
        raise Failure(EXIT_INPUT, f"cannot start: {e}")


# -- simulator and benchmark ---------------------------------------------------------


@main.command()
@click.argument("scenario")
@click.option("--seed", type=int, default=0, show_default=True, help="first seed")
@click.option("--seeds", type=int, default=1, show_default=True, help="number of consecutive seeds")
@click.option("--out", type=click.Path(dir_okay=False), help="metrics CSV (default stdout)")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="JSON-lines trace of the first seed")
@handled
def sim(ctx, scenario, seed, seeds, out, trace_path):
    """Run SCENARIO (a suite name or a JSON scenario file) and print finality metrics."""
    import csv
    import io

    from .simnet.scenarios import check, load_scenario, scenario_suite
    from .simnet.sim import METRICS_HEADER, ConfigError, SimConfig, run

    try:
        if scenario in scenario_suite():
            from .simnet.scenarios import build

            base = build(scenario, seed)
        else:
            base = load_scenario(scenario)
    except ConfigError as e:
        raise Failure(EXIT_INPUT, f"invalid scenario: {e}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    failures = []
    for i in range(seeds):
        data = base.to_json()
        data["seed"] = base.seed + i
        data["trace"] = bool(trace_path) and i == 0
        result = run(SimConfig.from_json(data))
        writer.writerows(result.metrics_rows())
        if i == 0 and trace_path:
            atomic_write(trace_path, "".join(line + "\n" for line in result.trace_lines()).encode())
        failures += [f"seed {data['seed']}: {p}" for p in check(result)]
    if out:
        atomic_write(out, buf.getvalue().encode())
    else:
        click.echo(buf.getvalue(), nl=False)
    for f in failures:
        click.echo(f"check failed: {f}", err=True)
    if failures:
        ctx.exit(EXIT_VERIFY)


@main.command()
@click.option("--kind", type=click.Choice(["jmt", "mpt", "both"]), default="both", show_default=True)
@click.option("--ops", type=int, default=100_000, show_default=True)
@click.option("--distribution", type=click.Choice(["uniform", "shared-prefix"]), default="uniform", show_default=True)
@click.option("--backend", "backend_kind", type=click.Choice(["memory", "file"]), default="memory", show_default=True)
@click.option("--block-size", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@handled
def bench(ctx, kind, ops, distribution, backend_kind, block_size, seed, out):
    """Per-operation latency and throughput of the two trie structures."""
    from .store import FileBackend, MemoryBackend
    from .store.bench import bench_workload, to_csv

    if ops < 0:
        raise Failure(EXIT_INPUT, "--ops must be >= 0")
    rows = []
    kinds = ["jmt", "mpt"] if kind == "both" else [kind]
    with tempfile.TemporaryDirectory() as tmp:
        for k in kinds:
            backend = FileBackend(Path(tmp) / f"{k}.db") if backend_kind == "file" else MemoryBackend()
            rows += bench_workload(StructureKind.parse(k), ops, distribution, backend, block_size=block_size, seed=seed)
            backend.close()
    text = to_csv(rows)
    if out:
        atomic_write(out, text.encode())
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    sys.exit(main())
