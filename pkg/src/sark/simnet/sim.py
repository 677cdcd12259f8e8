"""Deterministic discrete-event simulator for Porters, Sloop nodes and clients.

One priority queue ordered by (virtual time, sequence number) drives every
actor.  Actors are the same state machines the socket runtimes host: they get
``on_message(src, msg, now)`` and ``tick(now)`` calls, return outgoing
``(dst, msg)`` pairs, and expose ``next_wakeup()``.  The simulator owns all
randomness that is not an actor's own (message delays), so a config and seed
fully determine the trace.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable

from .. import crypto
from ..anchor import LedgerRoot
from ..porter import Porter, PorterConfig, root_signing_digest
from ..sloop import NodeStorage, Role, SloopConfig, SloopNode, verify_block
from ..sloop.ledger import period_root
from ..store import MemoryBackend, StructureKind
from .client import CLIENT_SCRIPTS

log = logging.getLogger(__name__)

ACTIONS = ("crash", "recover", "partition_set", "heal", "equivocate")
TRIGGERS = ("leader_elected",)
COUNTERS = ("sent", "delivered", "dropped_partition", "dropped_crash", "dropped_unroutable", "pending", "equivocations")


class ConfigError(ValueError):
    pass


@dataclass
class FaultAction:
    time: float
    action: str
    target: str | None = None  # actor id, or @leader / @follower / @last_crashed
    groups: list[list[str]] | None = None  # partition_set
    # Fire on the first leader election at or after `time` (plus `delay`)
    # instead of at `time`; the target then resolves to the new leader.
    trigger: str | None = None
    delay: float = 0.0
    nodes: list[str] | None = None  # equivocate: receiving nodes, one root each

    @classmethod
    def from_json(cls, d: dict) -> FaultAction:
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown fault fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class SimConfig:
    name: str = "custom"
    seed: int = 0
    nodes: list[str] = field(default_factory=lambda: ["n0", "n1", "n2"])
    porters: dict[str, str] = field(default_factory=lambda: {"A": "n0", "B": "n1"})
    client: str | None = None  # name of a scripted client workload
    delay_min: float = 1.0
    delay_max: float = 10.0
    duration: float = 7000.0
    faults: list[FaultAction] = field(default_factory=list)
    heartbeat: float = 100.0
    block_timeout: float = 2000.0
    commit_timeout: float = 500.0
    election_timeout: tuple[float, float] = (300.0, 600.0)
    window_duration: float | None = None  # default: one window per block period
    window_lead: float = 250.0  # windows close this long before a nominal block boundary
    porter_submit_delay: float = 0.0
    structure: str = "jmt"
    trace: bool = True

    def __post_init__(self):
        self.election_timeout = tuple(self.election_timeout)
        self.faults = [f if isinstance(f, FaultAction) else FaultAction.from_json(f) for f in self.faults]

    @property
    def window(self) -> float:
        return self.window_duration or self.block_timeout

    def actor_ids(self) -> list[str]:
        ids = list(self.nodes) + list(self.porters)
        if self.client:
            ids.append("client")
        return ids

    def validate(self) -> None:
        ids = self.actor_ids()
        if len(set(ids)) != len(ids):
            raise ConfigError("actor ids must be unique")
        if not self.nodes:
            raise ConfigError("need at least one sloop node")
        for p, v in self.porters.items():
            if v not in self.nodes:
                raise ConfigError(f"porter {p} names unknown validator {v}")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ConfigError("bad delay range")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.client is not None and self.client not in CLIENT_SCRIPTS:
            raise ConfigError(f"unknown client script {self.client!r}")
        for f in self.faults:
            if f.action not in ACTIONS:
                raise ConfigError(f"unknown fault action {f.action!r}")
            if f.trigger is not None and f.trigger not in TRIGGERS:
                raise ConfigError(f"unknown trigger {f.trigger!r}")
            if f.action in ("crash", "recover"):
                if f.target is None and f.trigger is None:
                    raise ConfigError(f"{f.action} needs a target")
                if f.target and not f.target.startswith("@") and f.target not in ids:
                    raise ConfigError(f"fault targets unknown node {f.target!r}")
                if f.target == "client":
                    raise ConfigError("the client cannot crash")
            if f.action == "partition_set":
                for group in f.groups or []:
                    for x in group:
                        if not x.startswith("@") and x not in ids:
                            raise ConfigError(f"partition names unknown node {x!r}")
            if f.action == "equivocate":
                if not f.nodes or any(n not in self.nodes for n in f.nodes):
                    raise ConfigError("equivocate needs known receiving nodes")

    def to_json(self) -> dict:
        d = asdict(self)
        d["election_timeout"] = list(self.election_timeout)
        d["faults"] = [{k: v for k, v in asdict(f).items() if v is not None and v != 0.0 or k == "time"} for f in self.faults]
        return d

    @classmethod
    def from_json(cls, d: dict) -> SimConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario fields: {sorted(extra)}")
        try:
            cfg = cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg


@dataclass
class FinalityRecord:
    height: int
    period_start: float
    proposal_time: float
    commit_time: float
    f: int
    deltas: list[float]
    bound: float

    @property
    def finality(self) -> float:
        return self.commit_time - self.period_start

    @property
    def delta(self) -> float:
        return sum(self.deltas)

    @property
    def within_bound(self) -> bool:
        return self.finality <= self.bound + 1e-9


def finality_bound(f: int, deltas, t_b: float, t_h: float, t_c: float) -> float:
    """Best case T_b + T_c; with f leader failures T_b + T_h + sum(delta) + (f+1) T_c."""
    if f == 0:
        return t_b + t_c
    return t_b + t_h + sum(deltas) + (f + 1) * t_c


def _seed(*parts) -> bytes:
    return hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()


class Simulator:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.rng = random.Random(config.seed)
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.actors: dict = {}
        self.down: set[str] = set()
        self.incarnation: Counter = Counter()
        self._tick_at: dict[str, float] = {}
        self._tick_gen: Counter = Counter()
        self.partition: dict[str, int] = {}
        self.counters: Counter = Counter(dict.fromkeys(COUNTERS, 0))
        self.trace: list[tuple] = []
        self.events: list[tuple] = []  # (time, actor, kind, *details)
        self.leader_crashes: list[tuple[float, str]] = []
        self.last_crashed: str | None = None
        self._armed: list[FaultAction] = []

        self.node_seeds = {n: _seed("node", config.seed, n) for n in config.nodes}
        self.roster = {n: crypto.keygen(s).public for n, s in self.node_seeds.items()}
        self.porter_seeds = {p: _seed("porter", config.seed, p) for p in config.porters}
        self.porter_keys = {p: crypto.keygen(s).public for p, s in self.porter_seeds.items()}
        self.rogue_seed = _seed("rogue", config.seed)
        registry = dict(self.porter_keys)
        registry["rogue"] = crypto.keygen(self.rogue_seed).public
        self.registry = registry
        self.node_storage = {n: NodeStorage() for n in config.nodes}
        self.porter_backends = {p: MemoryBackend() for p in config.porters}
        for n in config.nodes:
            self.actors[n] = self._make_node(n)
        for p in config.porters:
            self.actors[p] = self._make_porter(p)
        self.client = None
        if config.client:
            self.client = CLIENT_SCRIPTS[config.client](self)
            self.actors["client"] = self.client

    # -- actor factories ----------------------------------------------------

    def _make_node(self, n: str) -> SloopNode:
        c = self.config
        cfg = SloopConfig(
            node_id=n,
            seed=self.node_seeds[n],
            roster=self.roster,
            heartbeat=c.heartbeat,
            block_timeout=c.block_timeout,
            commit_timeout=c.commit_timeout,
            election_timeout=c.election_timeout,
            porter_keys=self.registry,
        )
        rng = random.Random(_seed("node-rng", c.seed, n, self.incarnation[n]))
        return SloopNode(cfg, self.node_storage[n], now=self.now, rng=rng)

    def _make_porter(self, p: str) -> Porter:
        c = self.config
        cfg = PorterConfig(
            porter_id=p,
            seed=self.porter_seeds[p],
            window_duration=c.window,
            structure=StructureKind.parse(c.structure),
            validator=c.porters[p],
            window_phase=(-c.window_lead) % c.window,
            submit_delay=c.porter_submit_delay,
        )
        return Porter(cfg, self.porter_backends[p], now=self.now)

    # -- scheduling ---------------------------------------------------------

    def _push(self, t: float, kind: str, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, payload))

    def _record(self, *row) -> None:
        if self.config.trace:
            self.trace.append((round(self.now, 6),) + row)

    def _schedule_tick(self, aid: str) -> None:
        actor = self.actors.get(aid)
        if actor is None or aid in self.down:
            return
        wake = actor.next_wakeup()
        if wake is None or math.isinf(wake):
            return
        wake = max(wake, self.now)
        if self._tick_at.get(aid) == wake:
            return
        self._tick_gen[aid] += 1
        self._tick_at[aid] = wake
        self._push(wake, "tick", aid, self._tick_gen[aid])

    def _partitioned(self, a: str, b: str) -> bool:
        return self.partition.get(a, -1) != self.partition.get(b, -1)

    def send(self, src: str, dst: str, msg: dict) -> None:
        self.counters["sent"] += 1
        kind = msg.get("type")
        if dst not in self.actors and dst not in self.down:
            self.counters["dropped_unroutable"] += 1
            self._record("drop", src, dst, kind, "unroutable")
            return
        if self._partitioned(src, dst):
            self.counters["dropped_partition"] += 1
            self._record("drop", src, dst, kind, "partition")
            return
        delay = self.rng.uniform(self.config.delay_min, self.config.delay_max)
        self._record("send", src, dst, kind)
        self._push(self.now + delay, "deliver", src, dst, msg)

    def _after(self, aid: str, out) -> None:
        actor = self.actors[aid]
        events = getattr(actor, "events", None)
        if events:
            for ev in events:
                self.events.append((ev[0], aid) + tuple(ev[1:]))
                self._record("event", aid, ev[1])
                if ev[1] == "leader":
                    self._fire_armed(aid)
            events.clear()
        for dst, msg in out:
            self.send(aid, dst, msg)
        self._schedule_tick(aid)

    # -- faults -------------------------------------------------------------

    def current_leader(self) -> str | None:
        best = None
        for n in self.config.nodes:
            node = self.actors.get(n)
            if n in self.down or node is None or node.role != Role.LEADER:
                continue
            if best is None or node.term > self.actors[best].term:
                best = n
        return best

    def _resolve(self, target: str) -> str | None:
        if target == "@leader":
            return self.current_leader()
        if target == "@follower":
            leader = self.current_leader()
            live = [n for n in self.config.nodes if n not in self.down and n != leader]
            return live[0] if live else None
        if target == "@last_crashed":
            return self.last_crashed
        return target

    def _fire_armed(self, leader: str) -> None:
        still = []
        for f in self._armed:
            if f.trigger == "leader_elected":
                fired = FaultAction(self.now + f.delay, f.action, target=leader, groups=f.groups, nodes=f.nodes)
                self._push(fired.time, "fault", fired)
            else:
                still.append(f)
        self._armed = still

    def apply_fault(self, f: FaultAction) -> None:
        if f.trigger is not None:
            self._armed.append(FaultAction(f.time, f.action, f.target, f.groups, f.trigger, f.delay, f.nodes))
            return
        if f.action == "crash":
            aid = self._resolve(f.target)
            if aid is None or aid in self.down:
                self._record("fault_skipped", f.action, f.target)
                return
            if aid in self.config.nodes and self.actors[aid].role == Role.LEADER:
                self.leader_crashes.append((self.now, aid))
            self.down.add(aid)
            del self.actors[aid]
            self._tick_gen[aid] += 1
            self._tick_at.pop(aid, None)
            self.last_crashed = aid
            self.events.append((self.now, aid, "crash"))
            self._record("crash", aid)
        elif f.action == "recover":
            aid = self._resolve(f.target)
            if aid is None or aid not in self.down:
                self._record("fault_skipped", f.action, f.target)
                return
            self.down.discard(aid)
            self.incarnation[aid] += 1
            self.actors[aid] = self._make_node(aid) if aid in self.config.nodes else self._make_porter(aid)
            self.events.append((self.now, aid, "recover"))
            self._record("recover", aid)
            self._after(aid, [])
        elif f.action == "partition_set":
            self.partition = {}
            for i, group in enumerate(f.groups or []):
                for x in group:
                    aid = self._resolve(x)
                    if aid is not None:
                        self.partition[aid] = i
            self._record("partition", json.dumps(sorted(self.partition.items())))
        elif f.action == "heal":
            self.partition = {}
            self._record("heal")
        elif f.action == "equivocate":
            self._equivocate(f)

    def _equivocate(self, f: FaultAction) -> None:
        """A rogue Porter signs a different root for one version to each listed node."""
        key = crypto.keygen(self.rogue_seed)
        version = self.counters["equivocations"]
        self.counters["equivocations"] += 1
        for i, n in enumerate(f.nodes):
            root = _seed("rogue-root", self.config.seed, version, i)
            sig = crypto.sign(key.secret, root_signing_digest(key.public, version, root))
            msg = {"type": "root", "porter": key.public.hex(), "version": version, "root": root.hex(), "sig": sig.hex()}
            self.send("rogue", n, msg)
        self.events.append((self.now, "rogue", "equivocate", version, tuple(f.nodes)))

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimResult:
        for f in self.config.faults:
            self._push(f.time, "fault", f)
        for aid in list(self.actors):
            self._schedule_tick(aid)
        end = self.config.duration
        while self._queue and self._queue[0][0] <= end:
            t, _, kind, payload = heapq.heappop(self._queue)
            self.now = t
            if kind == "deliver":
                src, dst, msg = payload
                if dst in self.down:
                    self.counters["dropped_crash"] += 1
                    self._record("drop", src, dst, msg.get("type"), "crashed")
                    continue
                if self._partitioned(src, dst):
                    self.counters["dropped_partition"] += 1
                    self._record("drop", src, dst, msg.get("type"), "partition")
                    continue
                self.counters["delivered"] += 1
                self._record("recv", src, dst, msg.get("type"))
                out = self.actors[dst].on_message(src, msg, t)
                self._after(dst, out)
            elif kind == "tick":
                aid, gen = payload
                if gen != self._tick_gen[aid] or aid in self.down:
                    continue
                self._tick_at.pop(aid, None)
                out = self.actors[aid].tick(t)
                self._after(aid, out)
            elif kind == "fault":
                self.apply_fault(payload[0])
        self.counters["pending"] = sum(1 for e in self._queue if e[2] == "deliver")
        return SimResult(self)


class SimResult:
    def __init__(self, sim: Simulator):
        self.config = sim.config
        self.sim = sim
        self.trace = sim.trace
        self.events = sim.events
        self.counters = dict(sim.counters)
        self.ledgers = {n: list(sim.node_storage[n].ledger) for n in sim.config.nodes}
        self.finality = self._finality()

    @property
    def elections(self) -> int:
        return sum(1 for e in self.events if e[2] == "leader")

    def longest_ledger(self):
        return max(self.ledgers.values(), key=len)

    def _first(self, kind: str, after: float, pred: Callable | None = None) -> float | None:
        for e in self.events:
            if e[0] >= after and e[2] == kind and (pred is None or pred(e)):
                return e[0]
        return None

    def _finality(self) -> list[FinalityRecord]:
        c = self.config
        commits: dict[int, float] = {}
        proposals: dict[int, float] = {}
        for e in self.events:
            if e[2] == "commit":
                commits.setdefault(e[3], e[0])
            elif e[2] in ("propose", "rebroadcast"):
                proposals.setdefault(e[3], e[0])
        blocks = self.longest_ledger()
        records = []
        for i, block in enumerate(blocks):
            start = 0.0 if i == 0 else blocks[i - 1].committed_at
            commit = commits[block.height]
            crashes = [t for t, _ in self.sim.leader_crashes if start <= t < commit]
            deltas = []
            for t in crashes:
                began = self._first("election_start", t)
                won = None if began is None else self._first("leader", began)
                if began is not None and won is not None:
                    deltas.append(won - began)
            bound = finality_bound(len(crashes), deltas, c.block_timeout, c.heartbeat, c.commit_timeout)
            records.append(
                FinalityRecord(block.height, start, proposals.get(block.height, commit), commit, len(crashes), deltas, bound)
            )
        return records

    # -- invariant checks (each returns a list of violations) ---------------

    def check_safety(self) -> list[str]:
        problems = []
        by_height: dict[int, bytes] = {}
        for n, ledger in self.ledgers.items():
            for b in ledger:
                first = by_height.setdefault(b.height, b.block_hash)
                if first != b.block_hash:
                    problems.append(f"divergent block at height {b.height} on {n}")
        return problems

    def check_certificates(self) -> list[str]:
        problems = []
        checked: set[bytes] = set()
        roster = self.sim.roster
        for n, ledger in self.ledgers.items():
            prev = None
            for b in ledger:
                key = b.block_hash + (prev.block_hash if prev else b"")
                if key not in checked:
                    checked.add(key)
                    problems += [f"{n} height {b.height}: {p}" for p in verify_block(b, prev, roster)]
                if period_root(b.entries, b.height) != b.root:
                    problems.append(f"{n} height {b.height}: root does not recompute")
                prev = b
        return problems

    def check_non_equivocation(self) -> list[str]:
        committed: dict[tuple[bytes, int], bytes] = {}
        problems = []
        for ledger in self.ledgers.values():
            for b in ledger:
                for e in b.entries:
                    first = committed.setdefault((e.porter_key, e.version), e.root)
                    if first != e.root:
                        problems.append(f"conflicting roots committed for version {e.version}")
        return problems

    def check_one_leader_per_term(self) -> list[str]:
        leaders: dict[int, str] = {}
        problems = []
        for e in self.events:
            if e[2] == "leader":
                who = leaders.setdefault(e[3], e[1])
                if who != e[1]:
                    problems.append(f"two leaders in term {e[3]}: {who}, {e[1]}")
        return problems

    def check_conservation(self) -> list[str]:
        c = Counter(self.counters)
        accounted = (
            c["delivered"] + c["dropped_partition"] + c["dropped_crash"] + c["dropped_unroutable"] + c["pending"]
        )
        if accounted != c["sent"]:
            return [f"sent {c['sent']} but accounted {accounted}"]
        return []

    def check_roots_not_lost(self, settle: float | None = None) -> list[str]:
        """Every root a node admitted early enough is covered by a committed entry."""
        c = self.config
        if settle is None:
            settle = 2 * c.block_timeout + 2 * c.commit_timeout
        committed: dict[bytes, int] = {}
        for b in self.longest_ledger():
            for e in b.entries:
                committed[e.porter_key] = max(committed.get(e.porter_key, -1), e.version)
        # Equivocated roots are quarantined on purpose; neither side may commit.
        conflicted = {(e[3], e[4]) for e in self.events if e[2] == "equivocation"}
        problems = []
        for e in self.events:
            if e[2] == "root" and e[0] <= c.duration - settle and (e[3], e[4]) not in conflicted:
                key = bytes.fromhex(e[3])
                if committed.get(key, -1) < e[4]:
                    problems.append(f"root version {e[4]} admitted at {e[0]:.1f} never committed")
        return problems

    def violations(self) -> list[str]:
        return (
            self.check_safety()
            + self.check_certificates()
            + self.check_non_equivocation()
            + self.check_one_leader_per_term()
            + self.check_conservation()
        )

    def incidents(self) -> list[dict]:
        out = []
        for n in self.config.nodes:
            actor = self.sim.actors.get(n)
            if actor is not None:
                out += actor.incidents
        return out

    # -- outputs ------------------------------------------------------------

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for row in self.trace:
            h.update(json.dumps(row).encode())
            h.update(b"\n")
        return h.hexdigest()

    def trace_lines(self):
        for row in self.trace:
            yield json.dumps({"t": row[0], "ev": row[1], "args": list(row[2:])})

    def metrics_rows(self) -> list[dict]:
        return [
            {
                "scenario": self.config.name,
                "seed": self.config.seed,
                "height": r.height,
                "finality_ms": round(r.finality, 3),
                "f": r.f,
                "delta_ms": round(r.delta, 3),
                "bound_ms": round(r.bound, 3),
                "within_bound": str(r.within_bound).lower(),
            }
            for r in self.finality
        ]

    def summary(self) -> dict:
        return {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "blocks": len(self.longest_ledger()),
            "elections": self.elections,
            "messages": self.counters,
            "violations": self.violations(),
        }


METRICS_HEADER = ["scenario", "seed", "height", "finality_ms", "f", "delta_ms", "bound_ms", "within_bound"]


def run(config: SimConfig) -> SimResult:
    return Simulator(config).run()


class SimLedgerView:
    """Ledger roots and the porter registry as a verifier sees them after a run."""

    def __init__(self, result: SimResult):
        self._blocks = result.longest_ledger()
        self._keys = result.sim.porter_keys

    def ledger_root(self, height: int) -> LedgerRoot | None:
        if 1 <= height <= len(self._blocks):
            return self._blocks[height - 1].ledger_root()
        return None

    def porter_key(self, porter_id: str) -> bytes | None:
        return self._keys.get(porter_id)
