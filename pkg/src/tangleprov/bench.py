"""Latency harness for the three channel operations: create, attach, fetch.

Each (operation, payload size) cell collects ``reps`` elapsed-millisecond
samples plus the five summary statistics a violin or box plot needs: median,
quartiles, and 1.5 x IQR whiskers clamped to the observed range.

Attach isolates proof-of-work: drafts are pre-built, the timer covers tip
selection, the nonce search and insertion.  Under remote PoW the sampled
overhead is added on top of the measured compute.  Fetch fixtures are
published at difficulty 0 since fetching never re-runs the nonce search.
"""

from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

from . import crypto, mam
from .simnet import LatencyModel, Network, fixed
from .tangle import TangleGraph

OPERATIONS = ("create", "attach", "fetch")
DEFAULT_SIZES = tuple(range(100, 901, 100))
DEFAULT_REPS = 100
DEFAULT_LEVEL = 3
BENCH_KEY = b"bench-channel-key"


@dataclass(frozen=True)
class BenchSummary:
    median: float
    q1: float | None
    q3: float | None
    whisker_low: float | None
    whisker_high: float | None


@dataclass
class BenchResult:
    operation: str
    payload_chars: int
    pow_mode: str
    difficulty: int
    samples: list[float]

    @property
    def summary(self) -> BenchSummary:
        med = statistics.median(self.samples)
        if len(self.samples) < 2:
            return BenchSummary(med, None, None, None, None)
        q1, _, q3 = statistics.quantiles(self.samples, n=4)
        iqr = q3 - q1
        lo = max(min(self.samples), q1 - 1.5 * iqr)
        hi = min(max(self.samples), q3 + 1.5 * iqr)
        return BenchSummary(med, q1, q3, lo, hi)


def _fresh_channel(rng: random.Random, level: int) -> mam.ChannelState:
    seed = crypto.generate_seed(rng.randbytes)
    return mam.change_mode(mam.mam_init(seed, level), mam.RESTRICTED, BENCH_KEY)


def _bench_create(size, reps, level, rng) -> list[float]:
    state = _fresh_channel(rng, level)
    payload = bytes(rng.randrange(32, 127) for _ in range(size))
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        _, _, state = mam.mam_create(state, payload)
        samples.append((time.perf_counter() - t0) * 1000.0)
    return samples


def _bench_attach(size, reps, level, rng, pow_mode, difficulty) -> list[float]:
    net = Network(
        seed=rng.randrange(2**31),
        difficulty=difficulty,
        latency=LatencyModel(remote_pow=fixed(5000.0)),
    )
    node = net.add_node("bench", pow_mode=pow_mode)
    state = _fresh_channel(rng, level)
    payload = bytes(rng.randrange(32, 127) for _ in range(size))
    drafts = []
    for _ in range(reps):
        _, draft, state = mam.mam_create(state, payload)
        drafts.append(draft)
    samples = []
    for draft in drafts:
        result = net.submit_with_pow(node, draft)
        samples.append(result.elapsed_ms)
    return samples


def _bench_fetch(size, reps, level, rng) -> list[float]:
    graph = TangleGraph(difficulty=0, clock=lambda: 0)
    state = _fresh_channel(rng, level)
    payload = bytes(rng.randrange(32, 127) for _ in range(size))
    roots = []
    for _ in range(reps):
        roots.append(state.current_root)
        message, draft, state = mam.mam_create(state, payload)
        mam.mam_attach(draft, message.address, graph)
    samples = []
    for root in roots:
        t0 = time.perf_counter()
        got = mam.mam_fetch_single(graph, root, mam.RESTRICTED, BENCH_KEY)
        samples.append((time.perf_counter() - t0) * 1000.0)
        assert got is not None
    return samples


def run_bench(
    operation: str,
    payload_sizes=DEFAULT_SIZES,
    reps: int = DEFAULT_REPS,
    pow_mode: str = "local",
    difficulty: int = 14,
    security_level: int = DEFAULT_LEVEL,
    seed: int = 0,
) -> list[BenchResult]:
    if operation not in OPERATIONS:
        raise ValueError(f"operation must be one of {OPERATIONS}")
    rng = random.Random(seed)
    results = []
    for size in payload_sizes:
        if operation == "create":
            samples = _bench_create(size, reps, security_level, rng)
        elif operation == "attach":
            samples = _bench_attach(size, reps, security_level, rng, pow_mode, difficulty)
        else:
            samples = _bench_fetch(size, reps, security_level, rng)
        results.append(BenchResult(operation, size, pow_mode, difficulty, samples))
    return results


def write_samples_csv(results: list[BenchResult], path: str | Path) -> None:
    lines = ["operation,payload_chars,pow_mode,difficulty,rep,elapsed_ms"]
    for r in results:
        for i, sample in enumerate(r.samples):
            lines.append(
                f"{r.operation},{r.payload_chars},{r.pow_mode},{r.difficulty},{i},{sample:.3f}"
            )
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.3f}"


def summary_table(results: list[BenchResult]) -> str:
    lines = [
        "operation,payload_chars,pow_mode,difficulty,median_ms,q1_ms,q3_ms,"
        "whisker_low_ms,whisker_high_ms"
    ]
    for r in results:
        s = r.summary
        lines.append(
            f"{r.operation},{r.payload_chars},{r.pow_mode},{r.difficulty},"
            f"{s.median:.3f},{_fmt(s.q1)},{_fmt(s.q3)},"
            f"{_fmt(s.whisker_low)},{_fmt(s.whisker_high)}"
        )
    return "\n".join(lines) + "\n"
