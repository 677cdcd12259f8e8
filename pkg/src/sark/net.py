"""Socket runtimes for the Porter and Sloop state machines.

Node-to-node traffic (and Porter-to-validator traffic) is length-prefixed JSON
envelopes ``{"src", "dst", "msg"}``.  Clients talk to a Porter with
newline-delimited JSON.  The runtime only moves bytes and fires timers; all
protocol decisions stay in the actors, exactly as under the simulator.
"""

from __future__ import annotations

import asyncio
import json
import logging
import secrets
import signal
import struct
import time
from pathlib import Path

from . import crypto
from .anchor import LedgerRoot
from .config import (
    ConfigFileError,
    get_float,
    get_range,
    parse_endpoint,
    parse_mapping,
    require,
)
from .porter import Porter, PorterConfig
from .sloop import FileNodeStorage, SloopConfig, SloopNode
from .store import FileBackend

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
MAX_FRAME = 16 << 20


class NetworkError(Exception):
    pass


def wall_ms() -> float:
    return time.time() * 1000.0


def encode_frame(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode()
    return _LEN.pack(len(body)) + body


async def read_frame(reader: asyncio.StreamReader) -> dict | None:
    try:
        head = await reader.readexactly(_LEN.size)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise NetworkError(f"frame of {n} bytes exceeds limit")
    try:
        return json.loads(await reader.readexactly(n))
    except (asyncio.IncompleteReadError, ConnectionError):
        return None


class ActorRuntime:
    """Hosts one actor: a listening socket, peer links and its timer."""

    def __init__(self, actor, actor_id: str, peers: dict[str, tuple[str, int]]):
        self.actor = actor
        self.id = actor_id
        self.peers = peers
        self.inbound: dict[str, asyncio.StreamWriter] = {}
        self._queues: dict[str, asyncio.Queue] = {}
        self._tasks: list[asyncio.Task] = []
        self._wake = asyncio.Event()
        self._stopped = asyncio.Event()
        self.servers: list[asyncio.AbstractServer] = []

    # -- sending ------------------------------------------------------------

    def dispatch(self, out) -> None:
        for dst, msg in out:
            self.send(dst, msg)
        self._wake.set()

    def send(self, dst: str, msg: dict) -> None:
        if dst in self.peers:
            q = self._queues.get(dst)
            if q is None:
                q = self._queues[dst] = asyncio.Queue(maxsize=4096)
                self._tasks.append(asyncio.create_task(self._peer_link(dst, q)))
            try:
                q.put_nowait(msg)
            except asyncio.QueueFull:
                log.warning("%s: send queue to %s full, dropping %s", self.id, dst, msg.get("type"))
            return
        w = self.inbound.get(dst)
        if w is None or w.is_closing():
            log.debug("%s: no route to %s, dropping %s", self.id, dst, msg.get("type"))
            return
        w.write(encode_frame({"src": self.id, "dst": dst, "msg": msg}))

    async def _peer_link(self, peer: str, q: asyncio.Queue) -> None:
        host, port = self.peers[peer]
        writer = None
        while True:
            msg = await q.get()
            if writer is None or writer.is_closing():
                try:
                    reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), 1.0)
                except (OSError, asyncio.TimeoutError):
                    writer = None
                    # Behave like a lossy link: drop, back off briefly.
                    await asyncio.sleep(0.05)
                    continue
                self._tasks.append(asyncio.create_task(self._read_loop(reader, writer, register=False)))
            try:
                writer.write(encode_frame({"src": self.id, "dst": peer, "msg": msg}))
                await writer.drain()
            except (OSError, ConnectionError):
                writer.close()
                writer = None

    # -- receiving ----------------------------------------------------------

    def deliver(self, src: str, msg: dict) -> None:
        try:
            out = self.actor.on_message(src, msg, wall_ms())
        except Exception:
            log.exception("%s: handler failed for %s from %s", self.id, msg.get("type"), src)
            return
        self.dispatch(out)

    async def _read_loop(self, reader, writer, register: bool = True) -> None:
        try:
            while True:
                env = await read_frame(reader)
                if env is None:
                    break
                src = str(env.get("src"))
                if register:
                    self.inbound[src] = writer
                msg = env.get("msg")
                if isinstance(msg, dict):
                    self.deliver(src, msg)
        except NetworkError as e:
            log.warning("%s: %s", self.id, e)
        finally:
            writer.close()

    async def _timer(self) -> None:
        while not self._stopped.is_set():
            now = wall_ms()
            wake = self.actor.next_wakeup()
            if wake <= now:
                try:
                    self.dispatch(self.actor.tick(now))
                except Exception:
                    log.exception("%s: tick failed", self.id)
                    await asyncio.sleep(0.1)
                continue
            self._wake.clear()
            try:
                await asyncio.wait_for(self._wake.wait(), timeout=min(wake - now, 1000.0) / 1000.0)
            except asyncio.TimeoutError:
                pass

    # -- lifecycle ----------------------------------------------------------

    async def listen(self, host: str, port: int) -> None:
        server = await asyncio.start_server(self._read_loop, host, port)
        self.servers.append(server)

    async def run(self) -> None:
        timer = asyncio.create_task(self._timer())
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, self._stopped.set)
            except (NotImplementedError, RuntimeError):
                pass
        await self._stopped.wait()
        timer.cancel()
        for t in self._tasks:
            t.cancel()
        for s in self.servers:
            s.close()
        self.close()

    def stop(self) -> None:
        self._stopped.set()

    def close(self) -> None:
        pass


class PorterRuntime(ActorRuntime):
    def __init__(self, porter: Porter, validator_addr: tuple[str, int]):
        super().__init__(porter, porter.id, {porter.config.validator: validator_addr})
        self.porter = porter

    async def _client(self, reader, writer) -> None:
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    msg = json.loads(line)
                    if not isinstance(msg, dict):
                        raise ValueError("request must be a JSON object")
                    reply = self.porter.handle(msg, wall_ms())
                    if reply is None:
                        reply = {"type": msg.get("type"), "status": "error", "reason": "unknown-request"}
                except ValueError as e:
                    reply = {"status": "error", "reason": "bad-request", "detail": str(e)}
                self._wake.set()
                writer.write(json.dumps(reply).encode() + b"\n")
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def listen_clients(self, host: str, port: int) -> None:
        server = await asyncio.start_server(self._client, host, port, limit=MAX_FRAME)
        self.servers.append(server)

    def close(self) -> None:
        self.porter.backend.flush()
        self.porter.backend.close()


class SloopRuntime(ActorRuntime):
    def close(self) -> None:
        self.actor.storage.close()


# -- building runtimes from flat config files ----------------------------------


def load_seed(cfg: dict[str, str], data_dir: Path) -> bytes:
    if "seed" in cfg:
        seed = bytes.fromhex(cfg["seed"])
    else:
        path = Path(cfg.get("key_file", data_dir / "node.key"))
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(secrets.token_bytes(32).hex() + "\n")
            path.chmod(0o600)
        seed = bytes.fromhex(path.read_text().strip())
    if len(seed) != 32:
        raise ConfigFileError("seed must be 32 bytes of hex")
    return seed


def build_porter(cfg: dict[str, str], data_dir: str | None = None) -> tuple[PorterRuntime, tuple[str, int]]:
    ddir = Path(data_dir or require(cfg, "data_dir"))
    ddir.mkdir(parents=True, exist_ok=True)
    validator_id = require(cfg, "validator_id")
    pcfg = PorterConfig(
        porter_id=require(cfg, "porter_id"),
        seed=load_seed(cfg, ddir),
        window_duration=get_float(cfg, "window_ms", 2000.0),
        structure=cfg.get("structure", "jmt"),
        validator=validator_id,
        ledger_id=cfg.get("ledger_id", "sloop"),
        window_phase=get_float(cfg, "window_phase_ms", 0.0),
    )
    porter = Porter(pcfg, FileBackend(ddir / "porter.db"), now=wall_ms())
    rt = PorterRuntime(porter, parse_endpoint(require(cfg, "validator_addr")))
    return rt, parse_endpoint(require(cfg, "listen"))


def build_sloop(cfg: dict[str, str], data_dir: str | None = None) -> tuple[SloopRuntime, tuple[str, int]]:
    ddir = Path(data_dir or require(cfg, "data_dir"))
    node_id = require(cfg, "node_id")
    peers = {k: parse_endpoint(v) for k, v in parse_mapping(cfg.get("peers", "")).items()}
    roster = {k: bytes.fromhex(v) for k, v in parse_mapping(require(cfg, "roster")).items()}
    porters = {k: bytes.fromhex(v) for k, v in parse_mapping(cfg.get("porters", "")).items()} or None
    if set(peers) != set(roster) - {node_id}:
        raise ConfigFileError("peers must list every roster node except this one")
    seed = load_seed(cfg, ddir)
    if crypto.keygen(seed).public != roster.get(node_id):
        raise ConfigFileError("this node's key does not match its roster entry")
    scfg = SloopConfig(
        node_id=node_id,
        seed=seed,
        roster=roster,
        heartbeat=get_float(cfg, "heartbeat_ms", 100.0),
        block_timeout=get_float(cfg, "block_ms", 2000.0),
        commit_timeout=get_float(cfg, "commit_ms", 500.0),
        election_timeout=get_range(cfg, "election_ms", (300.0, 600.0)),
        porter_keys=porters,
    )
    node = SloopNode(scfg, FileNodeStorage(ddir), now=wall_ms())
    return SloopRuntime(node, node_id, peers), parse_endpoint(require(cfg, "listen"))


async def serve_porter(cfg: dict[str, str], data_dir: str | None = None, ready=None) -> None:
    rt, (host, port) = build_porter(cfg, data_dir)
    await rt.listen_clients(host, port)
    if ready:
        ready(rt)
    await rt.run()


async def serve_sloop(cfg: dict[str, str], data_dir: str | None = None, ready=None) -> None:
    rt, (host, port) = build_sloop(cfg, data_dir)
    await rt.listen(host, port)
    if ready:
        ready(rt)
    await rt.run()


# -- client helpers -------------------------------------------------------------


async def _porter_call(addr: tuple[str, int], msg: dict, timeout: float) -> dict:
    reader, writer = await asyncio.wait_for(asyncio.open_connection(*addr, limit=MAX_FRAME), timeout)
    try:
        writer.write(json.dumps(msg).encode() + b"\n")
        await writer.drain()
        line = await asyncio.wait_for(reader.readline(), timeout)
    finally:
        writer.close()
    if not line:
        raise NetworkError("porter closed the connection")
    return json.loads(line)


async def _node_call(addr: tuple[str, int], msg: dict, timeout: float) -> dict:
    reader, writer = await asyncio.wait_for(asyncio.open_connection(*addr), timeout)
    me = "client-" + secrets.token_hex(4)
    try:
        writer.write(encode_frame({"src": me, "dst": "", "msg": msg}))
        await writer.drain()
        env = await asyncio.wait_for(read_frame(reader), timeout)
    finally:
        writer.close()
    if env is None:
        raise NetworkError("node closed the connection")
    return env["msg"]


def porter_request(addr: tuple[str, int], msg: dict, timeout: float = 5.0) -> dict:
    try:
        return asyncio.run(_porter_call(addr, msg, timeout))
    except (OSError, asyncio.TimeoutError, json.JSONDecodeError) as e:
        raise NetworkError(f"porter {addr[0]}:{addr[1]} unreachable: {e or type(e).__name__}") from e


def node_request(addr: tuple[str, int], msg: dict, timeout: float = 5.0) -> dict:
    try:
        return asyncio.run(_node_call(addr, msg, timeout))
    except (OSError, asyncio.TimeoutError, json.JSONDecodeError) as e:
        raise NetworkError(f"ledger node {addr[0]}:{addr[1]} unreachable: {e or type(e).__name__}") from e


class RemoteLedgerView:
    """Ledger roots and porter registry fetched from one Sloop node."""

    def __init__(self, addr: tuple[str, int], timeout: float = 5.0):
        self.addr = addr
        self.timeout = timeout
        self.unreachable: str | None = None

    def _ask(self, msg: dict) -> dict | None:
        if self.unreachable:
            return None
        try:
            return node_request(self.addr, msg, self.timeout)
        except NetworkError as e:
            self.unreachable = str(e)
            return None

    def ledger_root(self, height: int) -> LedgerRoot | None:
        resp = self._ask({"type": "query_root", "height": height})
        if resp is None or resp.get("status") != "ok":
            return None
        return LedgerRoot.from_json(resp)

    def porter_key(self, porter_id: str) -> bytes | None:
        resp = self._ask({"type": "query_porter", "porter_id": porter_id})
        if resp is None or resp.get("status") != "ok":
            return None
        return bytes.fromhex(resp["porter_key"])
