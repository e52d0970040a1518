"""Line-delimited ledger and archive files.

One transaction per line, comma-separated fields in fixed order:

    txHash, address, trunk, branch, nonce, bundleHash, indexInBundle,
    bundleSize, timestamp, sigFragment-hex, payloadFragment-hex

Digests are lowercase hex, integers decimal, the file UTF-8 with ``\\n``
terminators.  The genesis site is implicit and never written.  Saving,
loading and saving again yields byte-identical files.
"""

from __future__ import annotations

import os
import random
from pathlib import Path

from .errors import ArchiveWriteFailure
from .tangle import ArchiveStore, TangleGraph, Transaction

_FIELDS = 11


def _format_tx(tx: Transaction) -> str:
    return ",".join(
        (
            tx.tx_hash.hex(),
            tx.address.hex(),
            tx.trunk.hex(),
            tx.branch.hex(),
            str(tx.nonce),
            tx.bundle_hash.hex(),
            str(tx.index_in_bundle),
            str(tx.bundle_size),
            str(tx.timestamp),
            tx.sig_fragment.hex(),
            tx.payload_fragment.hex(),
        )
    )


def _parse_tx(line: str, lineno: int) -> Transaction:
    parts = line.split(",")
    if len(parts) != _FIELDS:
        raise ValueError(f"line {lineno}: expected {_FIELDS} fields, got {len(parts)}")
    return Transaction(
        tx_hash=bytes.fromhex(parts[0]),
        address=bytes.fromhex(parts[1]),
        trunk=bytes.fromhex(parts[2]),
        branch=bytes.fromhex(parts[3]),
        nonce=int(parts[4]),
        bundle_hash=bytes.fromhex(parts[5]),
        index_in_bundle=int(parts[6]),
        bundle_size=int(parts[7]),
        timestamp=int(parts[8]),
        sig_fragment=bytes.fromhex(parts[9]),
        payload_fragment=bytes.fromhex(parts[10]),
    )


def save_graph(graph: TangleGraph, path: str | Path) -> None:
    """Write every non-genesis site in insertion order."""
    lines = [
        _format_tx(tx) for h, tx in graph.sites.items() if h != graph.genesis
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_graph(
    path: str | Path,
    difficulty: int = 0,
    confirm_fraction: float = 1.0,
    alpha: float = 0.0,
    clock=None,
    rng: random.Random | None = None,
    archive: ArchiveStore | None = None,
) -> TangleGraph:
    """Rebuild a graph from a ledger file (and optional archive).

    Transactions were validated when first attached, so they are inserted
    verbatim and only the derived indexes are rebuilt.
    """
    graph = TangleGraph(
        difficulty=difficulty,
        confirm_fraction=confirm_fraction,
        alpha=alpha,
        clock=clock,
        rng=rng,
    )
    if archive is not None:
        graph.archive = archive
        for tx in archive.transactions():
            graph.pruned.add(tx.tx_hash)
            graph.edges[tx.tx_hash] = (tx.trunk, tx.branch)
            graph.approvers.setdefault(tx.tx_hash, set())
            graph.address_index.setdefault(tx.address, set()).add(tx.tx_hash)
            graph.attach_difficulty[tx.tx_hash] = difficulty
        for tx in archive.transactions():
            for ref in (tx.trunk, tx.branch):
                graph.approvers.setdefault(ref, set()).add(tx.tx_hash)
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        tx = _parse_tx(line, lineno)
        graph.sites[tx.tx_hash] = tx
        graph.edges[tx.tx_hash] = (tx.trunk, tx.branch)
        graph.approvers.setdefault(tx.tx_hash, set())
        graph.attach_difficulty[tx.tx_hash] = difficulty
        for ref in (tx.trunk, tx.branch):
            graph.approvers.setdefault(ref, set()).add(tx.tx_hash)
        graph.address_index.setdefault(tx.address, set()).add(tx.tx_hash)
    graph.tips = {
        h for h in graph.sites if not graph.approvers.get(h)
    }
    if not graph.tips:
        graph.tips = {graph.genesis}
    return graph


def save_archive(archive: ArchiveStore, path: str | Path) -> None:
    try:
        lines = [_format_tx(tx) for tx in archive.transactions()]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise ArchiveWriteFailure(str(exc)) from exc


def load_archive(path: str | Path) -> ArchiveStore:
    archive = ArchiveStore()
    if not os.path.exists(path):
        return archive
    text = Path(path).read_text(encoding="utf-8")
    txs = [
        _parse_tx(line, lineno)
        for lineno, line in enumerate(text.splitlines(), start=1)
        if line
    ]
    archive.put_many(txs)
    return archive
