"""Scripted wallet clients for the simulator.

A script is a generator: it yields ``(dst, request)`` to talk to an actor and
receives the reply (or ``None`` on timeout), or yields ``("sleep", ms)``.
"""

from __future__ import annotations

import math
import random

from .. import crypto
from ..asset import AnchorRef, append_update, make_genesis_vector, make_transfer, mint
from ..porter import PorterReceipt, Submission

REQUEST_TIMEOUT = 1000.0


class ScriptedClient:
    def __init__(self, script, start: float = 10.0):
        self.events: list[tuple] = []
        self.now = 0.0
        self.done = False
        self.result = None
        self.error: str | None = None
        self._gen = script(self)
        self._wake: float | None = start
        self._waiting: int | None = None
        self._rid = 0

    def next_wakeup(self) -> float:
        return math.inf if self._wake is None else self._wake

    def tick(self, now: float):
        if self._wake is None or now < self._wake:
            return []
        self._wake = None
        self._waiting = None  # a timed-out request resumes with None
        return self._resume(None, now)

    def on_message(self, src, msg, now):
        if self._waiting is None or msg.get("rid") != self._waiting:
            return []
        self._waiting = None
        self._wake = None
        return self._resume(msg, now)

    def _resume(self, value, now):
        self.now = now
        try:
            action = self._gen.send(value)
        except StopIteration as stop:
            self.done = True
            self.result = stop.value
            self.events.append((now, "client_done"))
            return []
        except Exception as e:  # surfaced through the scenario checks
            self.done = True
            self.error = f"{type(e).__name__}: {e}"
            self.events.append((now, "client_failed", self.error))
            return []
        if action[0] == "sleep":
            self._wake = now + action[1]
            return []
        dst, msg = action
        self._rid += 1
        self._waiting = self._rid
        self._wake = now + REQUEST_TIMEOUT
        return [(dst, {**msg, "rid": self._rid})]


def request(dst: str, msg: dict, retries: int = 5):
    for _ in range(retries):
        reply = yield (dst, msg)
        if reply is not None:
            return reply
    raise TimeoutError(f"no reply from {dst} to {msg['type']}")


def three_transfers(sim) -> ScriptedClient:
    """Mint, then hop the asset across the Porters three times, claiming anchored receipts."""
    porters = sorted(sim.config.porters)
    issuer = sim_issuer()
    rng = random.Random(sim.config.seed * 7919 + 1)
    ledger_id = "sloop"

    def script(client):
        keys = [crypto.keygen(rng.randbytes(32)) for _ in range(4)]
        st = yield from request(porters[0], {"type": "status"})
        genesis = make_genesis_vector(b"sim asset", AnchorRef(ledger_id, porters[0], st["version"]), keys[0].public)
        asset = mint(genesis, issuer, rng=rng)
        client.events.append((client.now, "minted"))
        for j in range(3):
            route = asset.head.anchor
            nxt = porters[(j + 1) % len(porters)]
            st = yield from request(nxt, {"type": "status"})
            update, vector = make_transfer(
                asset, keys[j].secret, keys[j + 1].public, f"hop {j + 1}".encode(), AnchorRef(ledger_id, nxt, st["version"])
            )
            sub = Submission(keys[j].public, update.signature, vector, route)
            resp = yield from request(route.porter_id, {"type": "submit", **sub.to_json()})
            if resp["status"] != "ok":
                raise RuntimeError(f"submit rejected: {resp.get('reason')}")
            while True:
                yield ("sleep", 100.0)
                claim = {"type": "claim", "owner_key": keys[j].public.hex(), "since": route.root_index}
                resp = yield from request(route.porter_id, claim)
                if resp["status"] == "ok" and resp["receipt"]["anchor"]:
                    break
                if resp["status"] == "error" and resp["reason"] != "pending":
                    raise RuntimeError(f"claim failed: {resp.get('reason')}")
            asset = append_update(asset, update, PorterReceipt.from_json(resp["receipt"]).pop_entry())
            client.events.append((client.now, "transferred", j + 1))
        return asset

    client = ScriptedClient(script)
    client.issuer = issuer
    return client


_ISSUERS: dict[int, crypto.Issuer] = {}


def sim_issuer(bits: int = crypto.RSA_BITS) -> crypto.Issuer:
    """RSA keygen is slow; seed sweeps share one issuer per process."""
    if bits not in _ISSUERS:
        _ISSUERS[bits] = crypto.Issuer(crypto.issuer_keygen(bits))
    return _ISSUERS[bits]


CLIENT_SCRIPTS = {"three_transfers": three_transfers}
