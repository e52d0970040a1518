"""Deterministic simulated network for latency experiments.

Discrete-event simulation on a logical clock: gossip hops and remote
proof-of-work overhead are sampled from configured distributions, so a fixed
RNG seed reproduces the same event trace byte for byte.  Wall-clock time is
measured only around the in-process nonce search and reported separately;
it never feeds back into the logical timeline.

Every node keeps its own ledger replica.  A published bundle attaches at its
origin and then floods neighbor-to-neighbor; partitioned nodes share one
detached cluster ledger until the partition heals and merges back.
"""

from __future__ import annotations

import heapq
import random
import time
from dataclasses import dataclass, field

from .errors import UnknownNodes
from .tangle import Bundle, BundleDraft, ClusterHandle, TangleGraph, finalize_bundle

FULL = "full"
LIGHT = "light"
POW_LOCAL = "local"
POW_PROXY = "proxy"
POW_REMOTE = "remote"


@dataclass(frozen=True)
class Distribution:
    kind: str                   # fixed | uniform | lognormal
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind == "fixed":
            if len(self.params) != 1 or self.params[0] < 0:
                raise ValueError("fixed distribution takes one non-negative value")
        elif self.kind == "uniform":
            if len(self.params) != 2 or not 0 <= self.params[0] <= self.params[1]:
                raise ValueError("uniform distribution takes 0 <= low <= high")
        elif self.kind == "lognormal":
            if len(self.params) != 2 or self.params[1] < 0:
                raise ValueError("lognormal distribution takes mu and sigma >= 0")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return rng.uniform(*self.params)
        return rng.lognormvariate(*self.params)


def fixed(value: float) -> Distribution:
    return Distribution("fixed", (value,))


@dataclass
class LatencyModel:
    per_hop: Distribution = field(default_factory=lambda: fixed(10.0))
    remote_pow: Distribution = field(default_factory=lambda: fixed(5000.0))


class SimClock:
    """Event queue ordered by time, then scheduling order."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._seq = 0
        self._events: list[tuple[float, int, object]] = []

    def schedule_at(self, when: float, fn) -> None:
        if when < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._events, (when, self._seq, fn))
        self._seq += 1

    def schedule_in(self, delay: float, fn) -> None:
        self.schedule_at(self.now + delay, fn)

    def run_until_idle(self) -> None:
        while self._events:
            when, _, fn = heapq.heappop(self._events)
            self.now = when
            fn()

    def timestamp(self) -> int:
        return int(self.now)


@dataclass
class SimNode:
    node_id: str
    kind: str = FULL
    pow_mode: str = POW_LOCAL
    difficulty: int = 14
    graph: TangleGraph | None = None
    pow_budget: int | None = None
    pending: list[Bundle] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in (FULL, LIGHT):
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.pow_mode not in (POW_LOCAL, POW_PROXY, POW_REMOTE):
            raise ValueError(f"unknown pow mode {self.pow_mode!r}")


@dataclass
class SubmitResult:
    tx_hashes: list[bytes]
    elapsed_ms: float           # modeled overhead + measured compute
    modeled_ms: float           # deterministic part (0 for local PoW)
    compute_ms: float           # wall-clock nonce search, report-only
    bundle: Bundle


@dataclass
class Partition:
    members: frozenset[str]
    cluster: ClusterHandle


class Network:
    def __init__(
        self,
        seed: int = 0,
        difficulty: int = 0,
        latency: LatencyModel | None = None,
        alpha: float = 0.0,
        confirm_fraction: float = 1.0,
    ):
        self.rng = random.Random(seed)
        self.clock = SimClock()
        self.difficulty = difficulty
        self.alpha = alpha
        self.confirm_fraction = confirm_fraction
        self.latency = latency or LatencyModel()
        self.nodes: dict[str, SimNode] = {}
        self.adjacency: dict[str, set[str]] = {}
        self.partitions: list[Partition] = []
        self._explicit_edges = False

    # -- topology -----------------------------------------------------------

    def _new_graph(self) -> TangleGraph:
        return TangleGraph(
            difficulty=self.difficulty,
            confirm_fraction=self.confirm_fraction,
            alpha=self.alpha,
            clock=self.clock.timestamp,
            rng=self.rng,
        )

    def add_node(
        self,
        node_id: str,
        kind: str = FULL,
        pow_mode: str = POW_LOCAL,
        difficulty: int | None = None,
        pow_budget: int | None = None,
    ) -> SimNode:
        node = SimNode(
            node_id=node_id,
            kind=kind,
            pow_mode=pow_mode,
            difficulty=self.difficulty if difficulty is None else difficulty,
            graph=self._new_graph(),
            pow_budget=pow_budget,
        )
        self.nodes[node_id] = node
        self.adjacency.setdefault(node_id, set())
        return node

    def add_edge(self, a: str, b: str) -> None:
        for n in (a, b):
            if n not in self.nodes:
                raise UnknownNodes(n)
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)
        self._explicit_edges = True

    def neighbors(self, node_id: str) -> list[str]:
        if self._explicit_edges:
            return sorted(self.adjacency[node_id])
        return sorted(n for n in self.nodes if n != node_id)   # full mesh default

    # -- partitions -----------------------------------------------------------

    def _island(self, node_id: str):
        for partition in self.partitions:
            if node_id in partition.members:
                return partition.members
        return None

    def _connected(self, a: str, b: str) -> bool:
        return self._island(a) is self._island(b)

    def inject_partition(self, node_ids) -> Partition:
        members = frozenset(node_ids)
        if not members:
            raise UnknownNodes("partition needs at least one node")
        unknown = [n for n in sorted(members) if n not in self.nodes]
        if unknown:
            raise UnknownNodes(", ".join(unknown))
        for n in sorted(members):
            if self._island(n) is not None:
                raise ValueError(f"node {n} is already partitioned")
        reference = self.nodes[sorted(members)[0]].graph
        cluster = reference.partition_detach()
        for n in sorted(members):
            self.nodes[n].graph = cluster.graph     # offline island shares a ledger
        partition = Partition(members, cluster)
        self.partitions.append(partition)
        return partition

    def heal_partition(self, partition: Partition) -> int:
        if partition not in self.partitions:
            raise UnknownNodes("partition not active on this network")
        self.partitions.remove(partition)
        mains = [
            n for n in sorted(self.nodes)
            if n not in partition.members and self._island(n) is None
        ]
        merged = 0
        if mains:
            merged = self.nodes[mains[0]].graph.partition_merge(partition.cluster)
            for other in mains[1:]:
                self.nodes[other].graph.partition_merge(partition.cluster)
            source = self.nodes[mains[0]].graph
        else:
            source = partition.cluster.graph
        for n in sorted(partition.members):
            self.nodes[n].graph = source.clone()
        return merged

    # -- submit & gossip --------------------------------------------------------

    def submit_with_pow(self, node: SimNode, draft: BundleDraft) -> SubmitResult:
        """Finalize a draft on a node; elapsed reflects where PoW ran."""
        graph = node.graph
        trunk, branch = graph.select_tips()
        t0 = time.perf_counter()
        bundle = finalize_bundle(
            draft, trunk, branch, graph.difficulty,
            self.clock.timestamp(), node.pow_budget,
        )
        compute_ms = (time.perf_counter() - t0) * 1000.0
        if node.pow_mode == POW_LOCAL:
            modeled_ms = 0.0
        else:
            modeled_ms = self.latency.remote_pow.sample(self.rng)
        hashes = graph.attach_bundle(bundle, trunk, branch)
        return SubmitResult(hashes, modeled_ms + compute_ms, modeled_ms, compute_ms, bundle)

    def _deliver(self, node: SimNode, bundle: Bundle) -> bool:
        """Attach a gossiped bundle, buffering it if parents are missing."""
        from .errors import DanglingReference, DuplicateTransaction

        if bundle.head.tx_hash in node.graph:
            return True
        try:
            node.graph.attach_bundle(bundle, bundle.tail.trunk, bundle.tail.branch)
        except DuplicateTransaction:
            return True
        except DanglingReference:
            node.pending.append(bundle)
            return False
        # retry anything that was waiting on this bundle
        progressed = True
        while progressed and node.pending:
            progressed = False
            for waiting in list(node.pending):
                if waiting.head.tx_hash in node.graph:
                    node.pending.remove(waiting)
                    progressed = True
                    continue
                try:
                    node.graph.attach_bundle(
                        waiting, waiting.tail.trunk, waiting.tail.branch
                    )
                except (DanglingReference, DuplicateTransaction):
                    continue
                node.pending.remove(waiting)
                progressed = True
        return True

    def gossip_broadcast(self, origin: SimNode, bundle: Bundle) -> list[tuple[str, float]]:
        """Flood a bundle from its origin; returns the delivery schedule.

        The schedule list fills in as the clock drains; with no other traffic
        it is complete after ``run_until_idle``.
        """
        if origin.node_id not in self.nodes:
            raise UnknownNodes(origin.node_id)
        schedule: list[tuple[str, float]] = [(origin.node_id, self.clock.now)]
        delivered = {origin.node_id}

        def forward(sender_id: str):
            for neighbor_id in self.neighbors(sender_id):
                if neighbor_id in delivered:
                    continue
                if not self._connected(sender_id, neighbor_id):
                    continue
                delay = self.latency.per_hop.sample(self.rng)

                def arrival(nid=neighbor_id):
                    if nid in delivered:
                        return
                    delivered.add(nid)
                    schedule.append((nid, self.clock.now))
                    self._deliver(self.nodes[nid], bundle)
                    forward(nid)

                self.clock.schedule_in(delay, arrival)

        forward(origin.node_id)
        return schedule

    def publish(self, node: SimNode, draft: BundleDraft) -> tuple[SubmitResult, list]:
        result = self.submit_with_pow(node, draft)
        schedule = self.gossip_broadcast(node, result.bundle)
        return result, schedule

    # -- checks -------------------------------------------------------------------

    def converged(self) -> bool:
        sets = [frozenset(n.graph.sites) for n in self.nodes.values()]
        return all(s == sets[0] for s in sets)
