"""Per-block insert workload for comparing the two trie structures."""

from __future__ import annotations

import csv
import io
import random
import time
from collections.abc import Callable

from .backend import KvBackend, MemoryBackend
from .proofs import StructureKind
from .store import AuthenticatedStore

CSV_HEADER = ["kind", "ops", "p50_us", "p95_us", "ops_per_sec"]


def uniform_keys(rng: random.Random, count: int) -> list[bytes]:
    return [rng.randbytes(32) for _ in range(count)]


def shared_prefix_keys(rng: random.Random, count: int, prefix_len: int = 30) -> list[bytes]:
    """Keys that agree on their first ``prefix_len`` bytes (adversarial depth)."""
    prefix = rng.randbytes(prefix_len)
    seen: set[bytes] = set()
    out = []
    while len(out) < count:
        key = prefix + rng.randbytes(32 - prefix_len)
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


DISTRIBUTIONS: dict[str, Callable[[random.Random, int], list[bytes]]] = {
    "uniform": uniform_keys,
    "shared-prefix": shared_prefix_keys,
}


def _percentile(sorted_ns: list[int], q: float) -> float:
    idx = min(len(sorted_ns) - 1, int(round(q * (len(sorted_ns) - 1))))
    return sorted_ns[idx] / 1000.0


def bench_workload(
    kind: StructureKind | str,
    op_count: int,
    key_distribution: str = "uniform",
    backend: KvBackend | None = None,
    block_size: int = 1000,
    value_size: int = 128,
    seed: int = 0,
) -> list[dict]:
    """Insert ``op_count`` keys into consecutive windows of ``block_size``.

    Each op is one insert; the seal at the end of a block is charged to the
    op that fills it, and to total throughput.
    """
    kind = StructureKind.parse(kind)
    if op_count <= 0:
        return []
    rng = random.Random(seed)
    keys = DISTRIBUTIONS[key_distribution](rng, op_count)
    values = [rng.randbytes(value_size) for _ in range(min(op_count, 1024))]
    store = AuthenticatedStore(kind, backend if backend is not None else MemoryBackend())
    latencies = []
    clock = time.perf_counter_ns
    version = 0
    window = store.open_window(version)
    started = clock()
    for i, key in enumerate(keys):
        t0 = clock()
        window.insert(key, values[i % len(values)])
        if len(window) == block_size or i == op_count - 1:
            window.seal()
            version += 1
            if i != op_count - 1:
                window = store.open_window(version)
        latencies.append(clock() - t0)
    elapsed = (clock() - started) / 1e9
    latencies.sort()
    return [
        {
            "kind": kind.name,
            "ops": op_count,
            "p50_us": round(_percentile(latencies, 0.50), 3),
            "p95_us": round(_percentile(latencies, 0.95), 3),
            "ops_per_sec": round(op_count / elapsed, 1) if elapsed > 0 else float("inf"),
        }
    ]


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
