"""Cross-channel provenance collection and aggregation.

Starting from a (channel, transaction) pair, the walk fetches the matching
trade payload, records its backward pointers, hops to the source channel and
repeats until it reaches an origin payload.  The result is an ordered chain,
consumer end first, each adjacent pair linked by
``record.src_id == next.channel_id`` and ``record.prev_tid == next.t_id``.

A keyring gap truncates the chain at a permission boundary instead of
failing: fine-grained access control means a querier may only be entitled
to part of a product's story.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import mam, supplychain as sc
from .errors import (
    BrokenLink,
    ChannelNotSubscribed,
    CycleDetected,
    HopLimitExceeded,
    QrCapacityExceeded,
)
from .tangle import TangleGraph

DEFAULT_HOP_LIMIT = 64
SCOPE_FULL = "full"
SCOPE_POINTERS = "pointersOnly"

QR_TEXT_CAPACITY = 2953     # byte capacity of the largest QR symbol


@dataclass
class ChannelGrant:
    """Access to one channel: mode plus ordered (root, key) segments.

    A new segment is appended when the publisher rotates the authorization
    key; fetching continues from the segment's root under its key.  Earlier
    segments keep pre-rotation history readable.
    """

    mode: str
    segments: list[tuple[bytes, bytes | None]]


class Keyring:
    """The channels a querier was granted, keyed by channel identifier."""

    def __init__(self):
        self.grants: dict[str, ChannelGrant] = {}

    def __contains__(self, channel_id: str) -> bool:
        return channel_id in self.grants

    def channels(self) -> list[str]:
        return sorted(self.grants)

    def add(self, channel_id: str, mode: str, key: bytes | None, entry_root: bytes):
        self.grants[channel_id] = ChannelGrant(mode, [(entry_root, key)])

    def extend_key(self, channel_id: str, key: bytes | None, from_root: bytes):
        if channel_id not in self.grants:
            raise ChannelNotSubscribed(channel_id)
        self.grants[channel_id].segments.append((from_root, key))

    def iter_messages(self, graph: TangleGraph, channel_id: str):
        """Yield (decoded record, root) along the channel's message stream."""
        if channel_id not in self.grants:
            raise ChannelNotSubscribed(channel_id)
        grant = self.grants[channel_id]
        for root, key in grant.segments:
            current = root
            seen = set()
            while current not in seen:
                seen.add(current)
                got = mam.mam_fetch_single(graph, current, grant.mode, key)
                if got is None:
                    break
                payload, next_root = got
                try:
                    record = sc.decode_message(payload)
                except sc.DecodeError:
                    record = None       # foreign or free-form message; skip
                yield record, current
                if next_root == current:
                    break
                current = next_root

    def fetch_stream(self, graph: TangleGraph, channel_id: str) -> list[tuple[object, bytes]]:
        return list(self.iter_messages(graph, channel_id))


@dataclass(frozen=True)
class ProvenanceRecord:
    channel_id: str
    t_id: str
    src_id: str
    prev_tid: str
    aggregated: tuple[tuple[str, str], ...] = ()

    @property
    def is_origin(self) -> bool:
        return self.src_id == sc.NULL_ID


@dataclass(frozen=True)
class ProvenanceChain:
    records: tuple[ProvenanceRecord, ...]
    complete: bool
    boundary: str | None = None     # channel the keyring could not open


def _aggregate(payload: sc.TradePayload, sensors: list[sc.SensorData]) -> tuple[tuple[str, str], ...]:
    """Flatten the auxiliary/sensor details carried along with a record."""
    pairs: list[tuple[str, str]] = []
    c = payload.t_data.con_info
    if c.batch_id:
        pairs.append(("batch", c.batch_id))
    if c.component_id:
        pairs.append(("component", c.component_id))
    if c.make:
        pairs.append(("make", c.make))
    if c.model:
        pairs.append(("model", c.model))
    if c.quantity is not None:
        pairs.append(("quantity", str(c.quantity)))
    if c.unit_price is not None:
        pairs.append(("unit_price", c.unit_price))
    if c.vehicle_id is not None:
        pairs.append(("vehicle", c.vehicle_id))
    a = payload.a_data
    if a.qc:
        pairs.append(("qc", ";".join(a.qc)))
    if a.reg_cert:
        pairs.append(("cert", ";".join(a.reg_cert)))
    for k, v in a.optional_field:
        pairs.append((k, v))
    if a.warranty_months is not None:
        pairs.append(("warranty_months", str(a.warranty_months)))
    all_sensors = list(sensors)
    if payload.s_data is not None:
        all_sensors.append(payload.s_data)
    by_kind: dict[tuple[str, str], list[float]] = {}
    for s in all_sensors:
        for r in s.readings:
            by_kind.setdefault((r.kind, r.unit), []).append(r.value)
    for (kind, unit), values in sorted(by_kind.items()):
        mean = sum(values) / len(values)
        pairs.append((f"sensor_{kind}", f"n={len(values)} mean={mean:g}{unit}"))
    return tuple(pairs)


def lookup_tx_in_channel(
    graph: TangleGraph,
    channel_id: str,
    keyring: Keyring,
    target_tid: str,
) -> sc.TradePayload | None:
    """Scan a channel's stream for the trade with the given id."""
    payload, _, _ = _scan_channel(graph, channel_id, keyring, target_tid)
    return payload


def _scan_channel(graph, channel_id, keyring, target_tid):
    """Scan for a trade id, also collecting receipts and loose sensor data."""
    receipts: dict[str, str] = {}
    sensors: list[sc.SensorData] = []
    for record, _root in keyring.iter_messages(graph, channel_id):
        if isinstance(record, sc.Receipt):
            receipts[record.t_id] = record.status
        elif isinstance(record, sc.SensorData):
            sensors.append(record)
        elif isinstance(record, sc.TradePayload):
            if record.t_data.t_id == target_tid:
                return record, receipts, sensors
    return None, receipts, sensors


def fetch_aggr(
    graph: TangleGraph,
    start_channel_id: str,
    start_tid: str,
    keyring: Keyring,
    scope: str = SCOPE_FULL,
    hop_limit: int = DEFAULT_HOP_LIMIT,
) -> ProvenanceChain:
    """Walk backward pointers until the origin, collecting one record per hop."""
    if scope not in (SCOPE_FULL, SCOPE_POINTERS):
        raise ValueError(f"unknown scope {scope!r}")
    records: list[ProvenanceRecord] = []
    receipts: dict[str, str] = {}
    visited: set[str] = set()
    channel_id, t_id = start_channel_id, start_tid
    complete = False
    boundary = None
    hops = 0
    while True:
        if hops >= hop_limit:
            raise HopLimitExceeded(f"more than {hop_limit} hops from {start_channel_id}")
        hops += 1
        if channel_id in visited:
            raise CycleDetected(channel_id)
        visited.add(channel_id)
        if channel_id not in keyring:
            boundary = channel_id       # permission boundary: stop, stay partial
            break
        payload, seen_receipts, sensors = _scan_channel(graph, channel_id, keyring, t_id)
        receipts.update(seen_receipts)
        if payload is None:
            if not records:
                raise BrokenLink(f"{t_id!r} not found in channel {channel_id!r}")
            raise BrokenLink(
                f"{records[-1].channel_id!r} points at {t_id!r} "
                f"in {channel_id!r}, which has no such trade"
            )
        aggregated = _aggregate(payload, sensors) if scope == SCOPE_FULL else ()
        records.append(
            ProvenanceRecord(
                channel_id=channel_id,
                t_id=payload.t_data.t_id,
                src_id=payload.src_id,
                prev_tid=payload.prev_tid,
                aggregated=aggregated,
            )
        )
        if payload.is_origin:
            complete = True
            break
        channel_id, t_id = payload.src_id, payload.prev_tid
    if scope == SCOPE_FULL and receipts:
        records = [_annotate_shrinkage(r, receipts) for r in records]
    return ProvenanceChain(tuple(records), complete, boundary)


def _annotate_shrinkage(record: ProvenanceRecord, receipts: dict[str, str]) -> ProvenanceRecord:
    status = receipts.get(record.t_id)
    if status and status != "OK":
        extra = record.aggregated + (("shrinkage", status),)
        return ProvenanceRecord(
            record.channel_id, record.t_id, record.src_id, record.prev_tid, extra
        )
    return record


# ---------------------------------------------------------------------------
# rendering


def _null(value: str) -> str:
    return value if value else "NULL"


def render_trace(chain: ProvenanceChain, fmt: str = "text") -> bytes:
    """Deterministic rendering of a chain, consumer end first."""
    if fmt == "text":
        lines = [
            f"provenance trace records={len(chain.records)} "
            f"complete={'true' if chain.complete else 'false'}"
        ]
        if chain.boundary:
            lines[0] += f" boundary={chain.boundary}"
        for r in chain.records:
            line = (
                f"channel={r.channel_id} tid={r.t_id} "
                f"src={_null(r.src_id)} prev={_null(r.prev_tid)}"
            )
            for k, v in r.aggregated:
                line += f" {k}={v}"
            lines.append(line)
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "csv":
        lines = ["channel,tid,src,prev,extras"]
        for r in chain.records:
            extras = " ".join(f"{k}={v}" for k, v in r.aggregated)
            lines.append(f"{r.channel_id},{r.t_id},{r.src_id},{r.prev_tid},{extras}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "qrtext":
        parts = []
        for r in chain.records:
            extras = ",".join(f"{k}={v}" for k, v in r.aggregated)
            parts.append(
                "|".join((r.channel_id, r.t_id, _null(r.src_id), _null(r.prev_tid), extras))
            )
        body = (";".join(parts)).encode("utf-8")
        if len(body) > QR_TEXT_CAPACITY:
            raise QrCapacityExceeded(f"{len(body)} bytes > {QR_TEXT_CAPACITY}")
        return body
    raise ValueError(f"unknown trace format {fmt!r}")
