"""Supply-chain domain records and their canonical byte encoding.

Every message published on a channel is one of four tagged record kinds:
trade payloads, receipts, standalone sensor readings, and channel-split
announcements.  The encoding is deliberately rigid so equal records always
produce identical bytes:

  tag byte      1=trade  2=receipt  3=sensor  4=split announcement
  strings       u32 big-endian length + UTF-8 bytes
  bytes         u32 big-endian length + raw
  integers      u64 big-endian (optionals get a u8 presence flag first)
  floats        IEEE-754 big-endian doubles
  lists         u32 count + items
  free-form map u32 count + (key, value) string pairs, sorted by key

Field order follows the dataclass declarations below.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

from . import mam
from .errors import (
    DecodeError,
    NotRestricted,
    SellerMismatch,
    TimestampRegression,
    UnknownTrade,
)
from .mam import ChannelState, SplitAnnouncement
from .tangle import TangleGraph

NULL_ID = ""        # encodes the absent source/previous pointers

RECEIPT_STATUSES = ("OK", "DAMAGED", "LOST", "PARTIAL")

ROLES = (
    "RawProducer",
    "Supplier",
    "Manufacturer",
    "Warehouse",
    "Logistics",
    "Retailer",
    "Customer",
    "Analyst",
)
NON_PUBLISHING_ROLES = ("Customer", "Analyst")

_TAG_TRADE = 1
_TAG_RECEIPT = 2
_TAG_SENSOR = 3
_TAG_SPLIT = 4

DEFAULT_AGGREGATION_WINDOW = 10


@dataclass(frozen=True)
class ConsignmentInfo:
    batch_id: str = ""
    component_id: str = ""
    make: str = ""
    model: str = ""
    quantity: int | None = None
    unit_price: str | None = None
    vehicle_id: str | None = None


@dataclass(frozen=True)
class TradeData:
    t_id: str
    seller_id: str
    buyer_id: str
    con_info: ConsignmentInfo = ConsignmentInfo()


@dataclass(frozen=True)
class AuxData:
    qc: tuple[str, ...] = ()
    reg_cert: tuple[str, ...] = ()
    optional_field: tuple[tuple[str, str], ...] = ()
    warranty_months: int | None = None

    def __post_init__(self):
        if self.warranty_months is not None and self.warranty_months < 0:
            raise ValueError("warranty months must be non-negative")
        object.__setattr__(self, "qc", tuple(self.qc))
        object.__setattr__(self, "reg_cert", tuple(self.reg_cert))
        pairs = self.optional_field
        if isinstance(pairs, dict):
            pairs = pairs.items()
        object.__setattr__(
            self, "optional_field", tuple(sorted((str(k), str(v)) for k, v in pairs))
        )


@dataclass(frozen=True)
class SensorReading:
    kind: str
    value: float
    unit: str


@dataclass(frozen=True)
class SensorData:
    sensor_id: str
    channel_id: str
    readings: tuple[SensorReading, ...]
    timestamp: int


@dataclass(frozen=True)
class TradePayload:
    t_data: TradeData
    a_data: AuxData = AuxData()
    s_data: SensorData | None = None
    src_id: str = NULL_ID
    prev_tid: str = NULL_ID

    def __post_init__(self):
        if (self.src_id == NULL_ID) != (self.prev_tid == NULL_ID):
            raise ValueError(
                "origin payloads carry neither src_id nor prev_tid; "
                "non-origin payloads carry both"
            )

    @property
    def is_origin(self) -> bool:
        return self.src_id == NULL_ID


@dataclass(frozen=True)
class Receipt:
    t_id: str
    status: str

    def __post_init__(self):
        if self.status not in RECEIPT_STATUSES:
            raise ValueError(f"unknown receipt status {self.status!r}")


# ---------------------------------------------------------------------------
# codec


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(bytes([v]))

    def u64(self, v: int):
        self.parts.append(struct.pack(">Q", v))

    def f64(self, v: float):
        self.parts.append(struct.pack(">d", v))

    def string(self, s: str):
        raw = s.encode("utf-8")
        self.parts.append(struct.pack(">I", len(raw)) + raw)

    def raw(self, b: bytes):
        self.parts.append(struct.pack(">I", len(b)) + b)

    def opt_u64(self, v: int | None):
        if v is None:
            self.u8(0)
        else:
            self.u8(1)
            self.u64(v)

    def opt_string(self, s: str | None):
        if s is None:
            self.u8(0)
        else:
            self.u8(1)
            self.string(s)

    def count(self, n: int):
        self.parts.append(struct.pack(">I", n))

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DecodeError("truncated record", self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def string(self) -> str:
        n = struct.unpack(">I", self._take(4))[0]
        start = self.offset
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("invalid UTF-8 in string field", start) from None

    def raw(self) -> bytes:
        n = struct.unpack(">I", self._take(4))[0]
        return self._take(n)

    def opt_u64(self) -> int | None:
        return self.u64() if self.u8() else None

    def opt_string(self) -> str | None:
        return self.string() if self.u8() else None

    def count(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def done(self):
        if self.offset != len(self.data):
            raise DecodeError("trailing bytes after record", self.offset)


def _write_sensor(w: _Writer, s: SensorData):
    w.string(s.sensor_id)
    w.string(s.channel_id)
    w.count(len(s.readings))
    for r in s.readings:
        w.string(r.kind)
        w.f64(r.value)
        w.string(r.unit)
    w.u64(s.timestamp)


def _read_sensor(r: _Reader) -> SensorData:
    sensor_id = r.string()
    channel_id = r.string()
    readings = tuple(
        SensorReading(r.string(), r.f64(), r.string()) for _ in range(r.count())
    )
    return SensorData(sensor_id, channel_id, readings, r.u64())


def encode_payload(p: TradePayload) -> bytes:
    """Canonical bytes for a trade payload (tag 1)."""
    w = _Writer()
    w.u8(_TAG_TRADE)
    t = p.t_data
    w.string(t.t_id)
    w.string(t.seller_id)
    w.string(t.buyer_id)
    c = t.con_info
    w.string(c.batch_id)
    w.string(c.component_id)
    w.string(c.make)
    w.string(c.model)
    w.opt_u64(c.quantity)
    w.opt_string(c.unit_price)
    w.opt_string(c.vehicle_id)
    a = p.a_data
    w.count(len(a.qc))
    for item in a.qc:
        w.string(item)
    w.count(len(a.reg_cert))
    for item in a.reg_cert:
        w.string(item)
    w.count(len(a.optional_field))
    for k, v in a.optional_field:
        w.string(k)
        w.string(v)
    w.opt_u64(a.warranty_months)
    if p.s_data is None:
        w.u8(0)
    else:
        w.u8(1)
        _write_sensor(w, p.s_data)
    w.string(p.src_id)
    w.string(p.prev_tid)
    return w.bytes()


def decode_payload(data: bytes) -> TradePayload:
    r = _Reader(data)
    tag = r.u8()
    if tag != _TAG_TRADE:
        raise DecodeError(f"expected trade payload tag, got {tag}", 0)
    t_data = TradeData(
        t_id=r.string(),
        seller_id=r.string(),
        buyer_id=r.string(),
        con_info=ConsignmentInfo(
            batch_id=r.string(),
            component_id=r.string(),
            make=r.string(),
            model=r.string(),
            quantity=r.opt_u64(),
            unit_price=r.opt_string(),
            vehicle_id=r.opt_string(),
        ),
    )
    qc = tuple(r.string() for _ in range(r.count()))
    reg_cert = tuple(r.string() for _ in range(r.count()))
    optional = tuple((r.string(), r.string()) for _ in range(r.count()))
    warranty = r.opt_u64()
    s_data = _read_sensor(r) if r.u8() else None
    src_id = r.string()
    prev_tid = r.string()
    r.done()
    try:
        return TradePayload(
            t_data=t_data,
            a_data=AuxData(qc, reg_cert, optional, warranty),
            s_data=s_data,
            src_id=src_id,
            prev_tid=prev_tid,
        )
    except ValueError as exc:
        raise DecodeError(str(exc), 0) from None


def encode_receipt(receipt: Receipt) -> bytes:
    w = _Writer()
    w.u8(_TAG_RECEIPT)
    w.string(receipt.t_id)
    w.u8(RECEIPT_STATUSES.index(receipt.status))
    return w.bytes()


def encode_sensor(s: SensorData) -> bytes:
    w = _Writer()
    w.u8(_TAG_SENSOR)
    _write_sensor(w, s)
    return w.bytes()


def encode_announcement(a: SplitAnnouncement) -> bytes:
    w = _Writer()
    w.u8(_TAG_SPLIT)
    w.string(a.child_channel_id)
    w.raw(a.child_root)
    w.opt_string(a.category)
    return w.bytes()


def decode_message(data: bytes):
    """Decode any tagged record; returns one of the dataclasses above."""
    if not data:
        raise DecodeError("empty record", 0)
    tag = data[0]
    if tag == _TAG_TRADE:
        return decode_payload(data)
    r = _Reader(data)
    r.u8()
    if tag == _TAG_RECEIPT:
        t_id = r.string()
        code = r.u8()
        r.done()
        if code >= len(RECEIPT_STATUSES):
            raise DecodeError(f"unknown receipt status code {code}", 1)
        return Receipt(t_id, RECEIPT_STATUSES[code])
    if tag == _TAG_SENSOR:
        s = _read_sensor(r)
        r.done()
        return s
    if tag == _TAG_SPLIT:
        a = SplitAnnouncement(r.string(), r.raw(), r.opt_string())
        r.done()
        return a
    raise DecodeError(f"unknown record tag {tag}", 0)


# ---------------------------------------------------------------------------
# publishing


@dataclass
class EntityChannel:
    """A supply-chain entity's channel: mutable state plus publish history.

    ``ident`` is the entity-assigned channel identifier used in payloads,
    keyrings and traces; the derived ``channel_id`` remains the cryptographic
    name underneath.
    """

    state: ChannelState
    seen_tids: set[str] = field(default_factory=set)
    sensor_floors: dict[str, int] = field(default_factory=dict)
    aggregation: str = "fine"               # or "coarse"
    aggregation_window: int = DEFAULT_AGGREGATION_WINDOW
    # override to route bundles somewhere other than a bare graph attach,
    # e.g. through a simulated network node; called as transport(draft, address)
    transport = None

    @property
    def ident(self) -> str:
        return self.state.ident

    @property
    def current_root(self) -> bytes:
        return self.state.current_root

    def note_fetched(self, t_id: str):
        self.seen_tids.add(t_id)

    def _publish(self, graph: TangleGraph, body: bytes) -> tuple[list[bytes], bytes]:
        root = self.state.current_root
        message, draft, new_state = mam.mam_create(self.state, body)
        if self.transport is not None:
            hashes = self.transport(draft, message.address)
        else:
            hashes = mam.mam_attach(draft, message.address, graph)
        self.state = new_state
        return hashes, root


def publish_trade(channel: EntityChannel, graph: TangleGraph, p: TradePayload) -> tuple[list[bytes], bytes]:
    """Publish a trade event; confidential flows require restricted mode."""
    if channel.state.mode != mam.RESTRICTED:
        raise NotRestricted("trade payloads go on restricted channels")
    if p.t_data.seller_id != channel.ident:
        raise SellerMismatch(
            f"payload seller {p.t_data.seller_id!r} != channel {channel.ident!r}"
        )
    return channel._publish(graph, encode_payload(p))


def coarsen(s: SensorData, window: int = DEFAULT_AGGREGATION_WINDOW) -> SensorData:
    """Average readings in windows; one reading out per full-or-partial window."""
    if not s.readings:
        return s
    groups = [s.readings[i : i + window] for i in range(0, len(s.readings), window)]
    averaged = tuple(
        SensorReading(
            kind=g[0].kind,
            value=sum(r.value for r in g) / len(g),
            unit=g[0].unit,
        )
        for g in groups
    )
    return replace(s, readings=averaged)


def publish_sensor(channel: EntityChannel, graph: TangleGraph, s: SensorData) -> tuple[list[bytes], bytes]:
    """Publish sensor data, enforcing per-sensor timestamp monotonicity."""
    floor = channel.sensor_floors.get(s.sensor_id)
    if floor is not None and s.timestamp < floor:
        raise TimestampRegression(
            f"sensor {s.sensor_id}: {s.timestamp} < previous {floor}"
        )
    if channel.aggregation == "coarse":
        s = coarsen(s, channel.aggregation_window)
    channel.sensor_floors[s.sensor_id] = s.timestamp
    return channel._publish(graph, encode_sensor(s))


def issue_receipt(
    buyer_channel: EntityChannel,
    graph: TangleGraph,
    t_id: str,
    status: str,
) -> tuple[list[bytes], bytes]:
    """Close a trade the buyer has fetched; unreceipted trades stay incomplete."""
    if t_id not in buyer_channel.seen_tids:
        raise UnknownTrade(f"buyer never fetched trade {t_id!r}")
    return buyer_channel._publish(graph, encode_receipt(Receipt(t_id, status)))


def publish_announcement(
    channel: EntityChannel, graph: TangleGraph, announcement: SplitAnnouncement
) -> tuple[list[bytes], bytes]:
    return channel._publish(graph, encode_announcement(announcement))
