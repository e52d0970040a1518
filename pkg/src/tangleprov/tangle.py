"""The DAG ledger: transaction storage, tip selection, proof-of-work,
confirmation, partition/merge and snapshot-to-archive.

Each bundle is an ordered run of transactions sharing one bundle hash.  The
head (index 0) carries the signature fragment; payload fragments follow.
Members chain head-to-tail through ``trunk``; the tail references the two
chosen tips.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from dataclasses import dataclass, field

from .crypto import HASH_LEN, sponge_hash
from .errors import (
    ArchiveWriteFailure,
    DanglingReference,
    DuplicateTransaction,
    MergeConflict,
    PowBudgetExceeded,
    PowUnderDifficulty,
    UnknownTransaction,
)

ZERO_DIGEST = bytes(HASH_LEN)
FRAGMENT_CAP = 1300                 # payload characters per transaction
DEFAULT_DIFFICULTY = 14             # weight magnitude on the real network
DEFAULT_CONFIRM_FRACTION = 1.0
# 2**256 < 3**162, so 162 caps the trailing-zero count of any digest.
_MAX_WEIGHT = 162

CONFIRMED = "Confirmed"
UNCERTAIN = "Uncertain"
TIP = "Tip"


def pow_weight(digest: bytes) -> int:
    """Trailing zero symbols of the digest rendered in base 3."""
    n = int.from_bytes(digest, "big")
    if n == 0:
        return _MAX_WEIGHT
    weight = 0
    while n % 3 == 0:
        n //= 3
        weight += 1
    return weight


def do_pow(serialized_tx: bytes, difficulty: int, budget: int | None = None) -> int:
    """Scan nonces from 0 until the hash gains ``difficulty`` trailing zeros."""
    if difficulty < 0:
        raise ValueError("difficulty must be >= 0")
    target = 3 ** difficulty
    base = hashlib.sha256(serialized_tx)
    nonce = 0
    while True:
        h = base.copy()
        h.update(nonce.to_bytes(8, "big"))
        if int.from_bytes(h.digest(), "big") % target == 0:
            return nonce
        nonce += 1
        if budget is not None and nonce >= budget:
            raise PowBudgetExceeded(f"no nonce under difficulty {difficulty} within {budget}")


@dataclass(frozen=True)
class Transaction:
    tx_hash: bytes
    address: bytes
    payload_fragment: bytes
    sig_fragment: bytes
    trunk: bytes
    branch: bytes
    nonce: int
    bundle_hash: bytes
    index_in_bundle: int
    bundle_size: int
    timestamp: int


def _serialize_prefix(
    address: bytes,
    trunk: bytes,
    branch: bytes,
    bundle_hash: bytes,
    index_in_bundle: int,
    bundle_size: int,
    timestamp: int,
    sig_fragment: bytes,
    payload_fragment: bytes,
) -> bytes:
    """Everything hashed into the transaction id except the nonce."""
    return b"".join(
        (
            address,
            trunk,
            branch,
            bundle_hash,
            index_in_bundle.to_bytes(4, "big"),
            bundle_size.to_bytes(4, "big"),
            timestamp.to_bytes(8, "big"),
            len(sig_fragment).to_bytes(4, "big"),
            sig_fragment,
            len(payload_fragment).to_bytes(4, "big"),
            payload_fragment,
        )
    )


def _tx_prefix(tx: Transaction) -> bytes:
    return _serialize_prefix(
        tx.address,
        tx.trunk,
        tx.branch,
        tx.bundle_hash,
        tx.index_in_bundle,
        tx.bundle_size,
        tx.timestamp,
        tx.sig_fragment,
        tx.payload_fragment,
    )


@dataclass(frozen=True)
class Bundle:
    """Finalized transactions in head-to-tail order."""

    transactions: tuple[Transaction, ...]

    @property
    def bundle_hash(self) -> bytes:
        return self.transactions[0].bundle_hash

    @property
    def head(self) -> Transaction:
        return self.transactions[0]

    @property
    def tail(self) -> Transaction:
        return self.transactions[-1]

    @property
    def signature_section(self) -> tuple[Transaction, ...]:
        return tuple(t for t in self.transactions if t.sig_fragment)

    @property
    def mam_section(self) -> tuple[Transaction, ...]:
        return tuple(t for t in self.transactions if t.index_in_bundle > 0)

    def tx_hashes(self) -> list[bytes]:
        return [t.tx_hash for t in self.transactions]


@dataclass
class BundleDraft:
    """Fragments awaiting tip references, proof-of-work and a timestamp."""

    address: bytes
    fragments: list[tuple[bytes, bytes]]    # (sig_fragment, payload_fragment)


def finalize_bundle(
    draft: BundleDraft,
    trunk_tip: bytes,
    branch_tip: bytes,
    difficulty: int,
    timestamp: int,
    budget: int | None = None,
) -> Bundle:
    """Wire fragments into transactions, solving PoW for each.

    Built tail-first because each member's trunk is the hash of its
    successor; the tail alone references the chosen tips.
    """
    size = len(draft.fragments)
    content = b"".join(sig + b"\x00" + payload for sig, payload in draft.fragments)
    bundle_hash = sponge_hash(
        b"bundle"
        + draft.address
        + timestamp.to_bytes(8, "big")
        + sponge_hash(content)
    )
    txs: list[Transaction] = []
    next_hash = trunk_tip
    for i in range(size - 1, -1, -1):
        sig_fragment, payload_fragment = draft.fragments[i]
        prefix = _serialize_prefix(
            draft.address,
            next_hash,
            branch_tip,
            bundle_hash,
            i,
            size,
            timestamp,
            sig_fragment,
            payload_fragment,
        )
        nonce = do_pow(prefix, difficulty, budget)
        tx_hash = sponge_hash(prefix + nonce.to_bytes(8, "big"))
        txs.append(
            Transaction(
                tx_hash,
                draft.address,
                payload_fragment,
                sig_fragment,
                next_hash,
                branch_tip,
                nonce,
                bundle_hash,
                i,
                size,
                timestamp,
            )
        )
        next_hash = tx_hash
    txs.reverse()
    return Bundle(tuple(txs))


def _wall_clock_ms() -> int:
    return int(time.time() * 1000)


class TangleGraph:
    """Sites keyed by hash, edges implied by trunk/branch references.

    A fixed all-zero genesis site anchors random walks.  Forward edges are
    kept for every site ever attached (including pruned ones) so walks and
    reachability still work after a snapshot.
    """

    def __init__(
        self,
        difficulty: int = DEFAULT_DIFFICULTY,
        confirm_fraction: float = DEFAULT_CONFIRM_FRACTION,
        alpha: float = 0.0,
        clock=None,
        rng: random.Random | None = None,
    ):
        self.difficulty = difficulty
        self.confirm_fraction = confirm_fraction
        self.alpha = alpha
        self.clock = clock or _wall_clock_ms
        self.rng = rng or random.Random(0)
        self.genesis = ZERO_DIGEST
        genesis_tx = Transaction(
            ZERO_DIGEST, ZERO_DIGEST, b"", b"", ZERO_DIGEST, ZERO_DIGEST,
            0, ZERO_DIGEST, 0, 1, 0,
        )
        self.sites: dict[bytes, Transaction] = {ZERO_DIGEST: genesis_tx}
        self.tips: set[bytes] = {ZERO_DIGEST}
        self.approvers: dict[bytes, set[bytes]] = {ZERO_DIGEST: set()}
        self.edges: dict[bytes, tuple[bytes, bytes]] = {}
        self.address_index: dict[bytes, set[bytes]] = {}
        self.attach_difficulty: dict[bytes, int] = {ZERO_DIGEST: 0}
        self.pruned: set[bytes] = set()
        self.archive: "ArchiveStore | None" = None
        self._weights_version = -1
        self._weights: dict[bytes, int] = {}

    # -- lookups ------------------------------------------------------------

    def __contains__(self, tx_hash: bytes) -> bool:
        return tx_hash in self.sites or tx_hash in self.pruned

    def site_count(self) -> int:
        """Sites currently held in the graph, genesis excluded."""
        return len(self.sites) - 1

    def get_transaction(self, tx_hash: bytes) -> Transaction:
        if tx_hash in self.sites:
            return self.sites[tx_hash]
        if tx_hash in self.pruned and self.archive is not None:
            return self.archive.get(tx_hash)
        raise UnknownTransaction(tx_hash.hex())

    def bundles_at(self, address: bytes) -> list[list[Transaction]]:
        """All bundles recorded at an address, deterministically ordered."""
        hashes = self.address_index.get(address, ())
        by_bundle: dict[bytes, list[Transaction]] = {}
        for h in hashes:
            tx = self.get_transaction(h)
            by_bundle.setdefault(tx.bundle_hash, []).append(tx)
        out = []
        for bh in sorted(by_bundle, key=lambda b: (by_bundle[b][0].timestamp, b)):
            out.append(sorted(by_bundle[bh], key=lambda t: t.index_in_bundle))
        return out

    # -- attach -------------------------------------------------------------

    def attach_bundle(self, bundle: Bundle, trunk_tip: bytes, branch_tip: bytes) -> list[bytes]:
        """Validate and insert a finalized bundle atomically."""
        txs = bundle.transactions
        if not txs:
            raise ValueError("bundle has no transactions")
        if txs[-1].trunk != trunk_tip or txs[-1].branch != branch_tip:
            raise DanglingReference("bundle tail does not reference the given tips")
        for ref in (trunk_tip, branch_tip):
            if ref not in self:
                raise DanglingReference(ref.hex())
        incoming = {t.tx_hash for t in txs}
        for tx in txs:
            prefix = _tx_prefix(tx)
            if sponge_hash(prefix + tx.nonce.to_bytes(8, "big")) != tx.tx_hash:
                raise ValueError("transaction hash does not match its content")
            if pow_weight(tx.tx_hash) < self.difficulty:
                raise PowUnderDifficulty(
                    f"weight {pow_weight(tx.tx_hash)} < difficulty {self.difficulty}"
                )
            if tx.tx_hash in self:
                raise DuplicateTransaction(tx.tx_hash.hex())
            for ref in (tx.trunk, tx.branch):
                if ref not in self and ref not in incoming:
                    raise DanglingReference(ref.hex())
        # validations done; commit tail-first so insertion order stays
        # chronological (every approver inserted after what it approves)
        for tx in reversed(txs):
            self.sites[tx.tx_hash] = tx
            self.edges[tx.tx_hash] = (tx.trunk, tx.branch)
            self.approvers.setdefault(tx.tx_hash, set())
            self.attach_difficulty[tx.tx_hash] = self.difficulty
            for ref in (tx.trunk, tx.branch):
                self.approvers.setdefault(ref, set()).add(tx.tx_hash)
                self.tips.discard(ref)
            self.address_index.setdefault(tx.address, set()).add(tx.tx_hash)
        self.tips.add(txs[0].tx_hash)   # only the head is unreferenced
        self._weights_version = -1
        return [t.tx_hash for t in txs]

    # -- tip selection ------------------------------------------------------

    def _cumulative_weights(self) -> dict[bytes, int]:
        """Future-set size + 1 per site, via bitmask union over approvers."""
        if self._weights_version == len(self.edges):
            return self._weights
        order = {ZERO_DIGEST: 0}
        for i, h in enumerate(self.edges, start=1):
            order[h] = i
        masks: dict[bytes, int] = {}
        # edges dict is insertion-ordered, so reversed() visits approvers first
        for h in reversed(list(order)):
            m = 1 << order[h]
            for ap in self.approvers.get(h, ()):
                m |= masks[ap]
            masks[h] = m
        self._weights = {h: m.bit_count() for h, m in masks.items()}
        self._weights_version = len(self.edges)
        return self._weights

    def _walk(self, rng: random.Random, alpha: float) -> bytes:
        weights = self._cumulative_weights() if alpha > 0 else None
        current = self.genesis
        while current not in self.tips:
            children = sorted(self.approvers[current])
            if not children:
                break
            if weights is None:
                current = children[rng.randrange(len(children))]
            else:
                top = max(weights[c] for c in children)
                ws = [math.exp(alpha * (weights[c] - top)) for c in children]
                current = rng.choices(children, weights=ws)[0]
        return current

    def select_tips(self, rng: random.Random | None = None, alpha: float | None = None) -> tuple[bytes, bytes]:
        """Two weighted random walks from genesis to (non-conflicting) tips."""
        rng = rng or self.rng
        alpha = self.alpha if alpha is None else alpha
        first = self._walk(rng, alpha)
        second = self._walk(rng, alpha)
        if second == first and len(self.tips) > 1:
            for _ in range(8):
                second = self._walk(rng, alpha)
                if second != first:
                    break
            else:
                others = sorted(self.tips - {first})
                second = others[rng.randrange(len(others))]
        return first, second

    # -- confirmation --------------------------------------------------------

    def _tip_reach_counts(self) -> dict[bytes, int]:
        counts: dict[bytes, int] = {}
        for tip in self.tips:
            seen = set()
            stack = [tip]
            while stack:
                h = stack.pop()
                if h in seen:
                    continue
                seen.add(h)
                if h in self.edges:
                    stack.extend(self.edges[h])
                elif h != self.genesis:
                    continue
            for h in seen:
                counts[h] = counts.get(h, 0) + 1
        return counts

    def confirmation_status(self, tx_hash: bytes) -> str:
        if tx_hash not in self:
            raise UnknownTransaction(tx_hash.hex())
        if tx_hash in self.tips:
            return TIP
        counts = self._tip_reach_counts()
        needed = self.confirm_fraction * len(self.tips)
        return CONFIRMED if counts.get(tx_hash, 0) + 1e-9 >= needed else UNCERTAIN

    # -- partition / merge ----------------------------------------------------

    def clone(self) -> "TangleGraph":
        other = TangleGraph(
            difficulty=self.difficulty,
            confirm_fraction=self.confirm_fraction,
            alpha=self.alpha,
            clock=self.clock,
            rng=self.rng,
        )
        other.sites = dict(self.sites)
        other.tips = set(self.tips)
        other.approvers = {h: set(s) for h, s in self.approvers.items()}
        other.edges = dict(self.edges)
        other.address_index = {a: set(s) for a, s in self.address_index.items()}
        other.attach_difficulty = dict(self.attach_difficulty)
        other.pruned = set(self.pruned)
        other.archive = self.archive
        return other

    def partition_detach(self) -> "ClusterHandle":
        """Branch an independent offline sub-ledger sharing current history."""
        return ClusterHandle(self.clone(), set(self.sites) | set(self.pruned))

    def partition_merge(self, cluster: "ClusterHandle") -> int:
        """Re-insert every cluster-only transaction; returns how many."""
        fresh = {
            h: tx
            for h, tx in cluster.graph.sites.items()
            if h not in cluster.baseline
        }
        merged = 0
        pending = {}
        for h, tx in fresh.items():
            if h in self:
                if self.get_transaction(h) != tx:
                    raise MergeConflict(h.hex())
                # identical duplicate: nothing to do
            else:
                pending[h] = tx
        while pending:
            ready = [
                h
                for h, tx in pending.items()
                if (tx.trunk in self) and (tx.branch in self)
            ]
            if not ready:
                raise DanglingReference("cluster transactions reference unknown sites")
            for h in sorted(ready):
                tx = pending.pop(h)
                prefix = _tx_prefix(tx)
                if sponge_hash(prefix + tx.nonce.to_bytes(8, "big")) != tx.tx_hash:
                    raise MergeConflict(h.hex())
                if pow_weight(tx.tx_hash) < self.difficulty:
                    raise PowUnderDifficulty(h.hex())
                self.sites[h] = tx
                self.edges[h] = (tx.trunk, tx.branch)
                self.approvers.setdefault(h, set())
                self.attach_difficulty[h] = cluster.graph.attach_difficulty.get(h, self.difficulty)
                for ref in (tx.trunk, tx.branch):
                    self.approvers.setdefault(ref, set()).add(h)
                    self.tips.discard(ref)
                if not self.approvers[h]:
                    self.tips.add(h)
                self.address_index.setdefault(tx.address, set()).add(h)
                merged += 1
        # a merged site already approved on this side is no tip
        self.tips = {h for h in self.tips if not self.approvers.get(h)}
        self._weights_version = -1
        return merged

    # -- snapshot --------------------------------------------------------------

    def local_snapshot(self, horizon: int, archive: "ArchiveStore") -> int:
        """Move confirmed sites older than ``horizon`` into the archive."""
        counts = self._tip_reach_counts()
        needed = self.confirm_fraction * len(self.tips)
        victims = []
        for h, tx in self.sites.items():
            if h == self.genesis or h in self.tips:
                continue
            if tx.timestamp >= horizon:
                continue
            if counts.get(h, 0) + 1e-9 >= needed:
                victims.append(tx)
        if not victims:
            return 0
        archive.put_many(victims)    # all-or-nothing; graph untouched on failure
        for tx in victims:
            del self.sites[tx.tx_hash]
            self.pruned.add(tx.tx_hash)
        self.archive = archive
        return len(victims)


@dataclass
class ClusterHandle:
    """An offline sub-ledger plus the history it shares with its origin."""

    graph: TangleGraph
    baseline: set[bytes]


class ArchiveStore:
    """Permanode-style store for pruned transactions."""

    def __init__(self):
        self._txs: dict[bytes, Transaction] = {}

    def __len__(self) -> int:
        return len(self._txs)

    def __contains__(self, tx_hash: bytes) -> bool:
        return tx_hash in self._txs

    def put_many(self, txs: list[Transaction]) -> None:
        try:
            staged = {tx.tx_hash: tx for tx in txs}
        except Exception as exc:   # pragma: no cover - defensive
            raise ArchiveWriteFailure(str(exc)) from exc
        self._txs.update(staged)

    def get(self, tx_hash: bytes) -> Transaction:
        if tx_hash not in self._txs:
            raise UnknownTransaction(tx_hash.hex())
        return self._txs[tx_hash]

    def transactions(self) -> list[Transaction]:
        return list(self._txs.values())
