"""Named fault scenarios and the per-scenario pass criteria."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..asset import verify_asset
from .client import sim_issuer
from .sim import ConfigError, FaultAction, SimConfig, SimLedgerView, SimResult, run

# The first block is proposed at T_b = 2000; the leader signs at exactly that
# instant, so 2000.5 falls inside Block Commitment before any signature is back.
IN_COMMITMENT = 2000.5


def no_fault(seed: int) -> SimConfig:
    return SimConfig(name="no_fault", seed=seed)


def leader_crash_creation_phase(seed: int) -> SimConfig:
    return SimConfig(
        name="leader_crash_creation_phase",
        seed=seed,
        faults=[FaultAction(1000.0, "crash", "@leader"), FaultAction(3000.0, "recover", "@last_crashed")],
    )


def leader_crash_commitment_phase(seed: int) -> SimConfig:
    return SimConfig(
        name="leader_crash_commitment_phase",
        seed=seed,
        faults=[FaultAction(IN_COMMITMENT, "crash", "@leader"), FaultAction(3500.0, "recover", "@last_crashed")],
    )


def sequential_double_leader_crash(seed: int) -> SimConfig:
    # The first leader dies mid-commitment and comes back quickly so a
    # majority survives the second crash: its successor dies right after
    # re-broadcasting the proposal.
    return SimConfig(
        name="sequential_double_leader_crash",
        seed=seed,
        faults=[
            FaultAction(IN_COMMITMENT, "crash", "@leader"),
            FaultAction(2100.0, "recover", "@last_crashed"),
            FaultAction(2100.0, "crash", trigger="leader_elected", delay=0.5),
            FaultAction(4500.0, "recover", "@last_crashed"),
        ],
    )


def follower_crash(seed: int) -> SimConfig:
    return SimConfig(
        name="follower_crash",
        seed=seed,
        faults=[FaultAction(1000.0, "crash", "@follower")],
    )


def minority_partition(seed: int) -> SimConfig:
    return SimConfig(
        name="minority_partition",
        seed=seed,
        duration=9000.0,
        faults=[
            FaultAction(500.0, "partition_set", groups=[["@follower"]]),
            FaultAction(5000.0, "heal"),
        ],
    )


def porter_crash_before_submit(seed: int) -> SimConfig:
    # Windows seal at 1750; the root would go out 50 ms later but the Porter
    # is down until 1900 and must submit from its durable state on restart.
    return SimConfig(
        name="porter_crash_before_submit",
        seed=seed,
        porter_submit_delay=50.0,
        faults=[FaultAction(1760.0, "crash", "A"), FaultAction(1900.0, "recover", "A")],
    )


def e2e_three_transfers(seed: int) -> SimConfig:
    return SimConfig(name="e2e_three_transfers", seed=seed, client="three_transfers", duration=10000.0)


def equivocation(seed: int) -> SimConfig:
    """A rogue Porter sends different roots for one version to two nodes."""
    return SimConfig(
        name="equivocation",
        seed=seed,
        faults=[
            FaultAction(1500.0, "equivocate", nodes=["n0", "n1"]),
            FaultAction(3500.0, "equivocate", nodes=["n1", "n2"]),
            FaultAction(5500.0, "equivocate", nodes=["n2", "n0"]),
        ],
    )


SCENARIOS: dict[str, Callable[[int], SimConfig]] = {
    f.__name__: f
    for f in (
        no_fault,
        leader_crash_creation_phase,
        leader_crash_commitment_phase,
        sequential_double_leader_crash,
        follower_crash,
        minority_partition,
        porter_crash_before_submit,
        e2e_three_transfers,
        equivocation,
    )
}


def scenario_suite() -> list[str]:
    return list(SCENARIOS)


def build(name: str, seed: int = 0, trace: bool = True) -> SimConfig:
    try:
        cfg = SCENARIOS[name](seed)
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}") from None
    cfg.trace = trace
    return cfg


def load_scenario(path: str | Path) -> SimConfig:
    """A JSON scenario file: either {"scenario": name, "seed": n} or a full SimConfig."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("scenario file must hold a JSON object")
    if "scenario" in data:
        extra = set(data) - {"scenario", "seed"}
        if extra:
            raise ConfigError(f"unknown scenario fields: {sorted(extra)}")
        return build(data["scenario"], int(data.get("seed", 0)))
    return SimConfig.from_json(data)


@dataclass
class Outcome:
    result: SimResult
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems


def check(result: SimResult) -> list[str]:
    """Everything a scenario must satisfy: shared invariants plus its own goals."""
    name = result.config.name
    problems = result.violations()
    if name in ("no_fault", "leader_crash_commitment_phase", "sequential_double_leader_crash", "leader_crash_creation_phase"):
        problems += [
            f"height {r.height}: finality {r.finality:.1f} > bound {r.bound:.1f}"
            for r in result.finality
            if not r.within_bound
        ]
    if name != "minority_partition":
        problems += result.check_roots_not_lost()
    if name in ("no_fault", "follower_crash", "minority_partition", "porter_crash_before_submit"):
        expected = int(result.config.duration // result.config.block_timeout) - 1
        if len(result.longest_ledger()) < expected:
            problems.append(f"only {len(result.longest_ledger())} blocks committed")
    if name == "leader_crash_commitment_phase":
        first = result.finality[0] if result.finality else None
        if first is None or first.f != 1:
            problems.append("the first block did not see exactly one leader crash")
    if name == "sequential_double_leader_crash":
        first = result.finality[0] if result.finality else None
        if first is None or first.f < 2:
            problems.append("the first block did not see two leader crashes")
    if name == "porter_crash_before_submit":
        porter = result.sim.actors["A"]
        if porter.latest_anchored is None or porter.latest_anchored < 0:
            problems.append("porter A never anchored after restart")
    if name == "equivocation":
        injected = result.counters.get("equivocations", 0)
        detected = {e[4] for e in result.events if e[2] == "equivocation"}
        if len(detected) != injected:
            problems.append(f"{injected} equivocations injected, {len(detected)} detected")
    if name == "e2e_three_transfers":
        problems += check_e2e(result)
    return problems


def check_e2e(result: SimResult) -> list[str]:
    client = result.sim.client
    if client.error:
        return [f"client failed: {client.error}"]
    if not client.done:
        return ["client did not finish"]
    asset = client.result
    report = verify_asset(asset, SimLedgerView(result), sim_issuer().public)
    problems = []
    if report.verdict != "VALID":
        problems.append(f"verify_asset: {report.verdict} {report.to_json()}")
    if len(asset.pop) != 3:
        problems.append(f"POP has {len(asset.pop)} entries")
    done = [e[0] for e in result.events if e[2] == "client_done"]
    if not done or done[0] >= 10000.0:
        problems.append("transfers did not finish within 10 s simulated")
    return problems


def run_scenario(name: str, seed: int, trace: bool = False) -> Outcome:
    result = run(build(name, seed, trace=trace))
    return Outcome(result, check(result))
