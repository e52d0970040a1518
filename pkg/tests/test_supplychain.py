import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tangleprov import crypto, mam, supplychain as sc
from tangleprov.errors import (
    DecodeError,
    NotRestricted,
    SellerMismatch,
    TimestampRegression,
    UnknownTrade,
)
from tangleprov.mam import SplitAnnouncement
from tangleprov.tangle import TangleGraph

RNG = random.Random(211)
KEY = b"trade-key"


def make_entity(alias, level=1):
    seed = crypto.generate_seed(RNG.randbytes)
    state = mam.mam_init(seed, level, alias=alias)
    state = mam.change_mode(state, mam.RESTRICTED, KEY)
    return sc.EntityChannel(state=state)


def make_graph():
    return TangleGraph(difficulty=0, clock=lambda: 7)


def trade(t_id, seller, buyer, src=sc.NULL_ID, prev=sc.NULL_ID, **con):
    opt = con.pop("optional_field", ())
    return sc.TradePayload(
        t_data=sc.TradeData(t_id, seller, buyer, sc.ConsignmentInfo(**con)),
        a_data=sc.AuxData(optional_field=opt),
        src_id=src,
        prev_tid=prev,
    )


# -- identifier strategy mirrors the ids seen in real consignments
ident = st.text(
    alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-", min_size=1, max_size=16
)
opt_pairs = st.dictionaries(ident, ident, max_size=4)


payloads = st.builds(
    lambda t_id, seller, buyer, batch, comp, make, model, qty, price, veh, qc,
    cert, opt, warranty, linked, src, prev: sc.TradePayload(
        t_data=sc.TradeData(
            t_id, seller, buyer,
            sc.ConsignmentInfo(batch, comp, make, model, qty, price, veh),
        ),
        a_data=sc.AuxData(tuple(qc), tuple(cert), opt, warranty),
        src_id=src if linked else sc.NULL_ID,
        prev_tid=prev if linked else sc.NULL_ID,
    ),
    t_id=ident, seller=ident, buyer=ident, batch=ident, comp=ident,
    make=ident, model=ident,
    qty=st.none() | st.integers(min_value=0, max_value=10**9),
    price=st.none() | ident, veh=st.none() | ident,
    qc=st.lists(ident, max_size=3), cert=st.lists(ident, max_size=3),
    opt=opt_pairs, warranty=st.none() | st.integers(min_value=0, max_value=600),
    linked=st.booleans(), src=ident, prev=ident,
)


class TestCodec:
    def test_minimal_origin_roundtrip(self):
        p = trade("T1", "SELLER", "BUYER")
        assert sc.decode_payload(sc.encode_payload(p)) == p

    def test_retail_payload_roundtrip(self):
        p = sc.TradePayload(
            t_data=sc.TradeData("SM-G8846", "SK_SEL679", "CUSTOMER"),
            a_data=sc.AuxData(optional_field={"product": "R39H50JCOA"}),
            src_id="SK_SEL002",
            prev_tid="SM-G4993",
        )
        assert sc.decode_payload(sc.encode_payload(p)) == p

    @settings(max_examples=250, deadline=None)
    @given(p=payloads)
    def test_randomized_roundtrip_canonical(self, p):
        encoded = sc.encode_payload(p)
        decoded = sc.decode_payload(encoded)
        assert decoded == p
        assert sc.encode_payload(decoded) == encoded

    def test_origin_rule_enforced(self):
        with pytest.raises(ValueError):
            trade("T1", "S", "B", src="SRC")        # src without prev
        with pytest.raises(ValueError):
            trade("T1", "S", "B", prev="P")         # prev without src

    def test_truncated_bytes_decode_error_carries_offset(self):
        p = trade("T1", "S", "B")
        encoded = sc.encode_payload(p)
        with pytest.raises(DecodeError) as err:
            sc.decode_payload(encoded[: len(encoded) // 2])
        assert err.value.offset >= 0

    def test_receipt_roundtrip(self):
        r = sc.Receipt("SM-S7850", "OK")
        assert sc.decode_message(sc.encode_receipt(r)) == r
        with pytest.raises(ValueError):
            sc.Receipt("T", "FINE")

    def test_sensor_roundtrip(self):
        s = sc.SensorData(
            "DHT11", "CH1",
            (sc.SensorReading("temperature", 21.5, "C"),),
            1_700_000,
        )
        assert sc.decode_message(sc.encode_sensor(s)) == s

    def test_announcement_roundtrip(self):
        a = SplitAnnouncement("CHILD", crypto.sponge_hash(b"root"), "SalesInfo")
        assert sc.decode_message(sc.encode_announcement(a)) == a

    def test_unknown_tag_rejected(self):
        with pytest.raises(DecodeError):
            sc.decode_message(b"\x09junk")


class TestPublishTrade:
    def test_origin_publish_roundtrips_with_null_pointers(self):
        g = make_graph()
        seller = make_entity("SK_GIH003")
        p = trade("SM-D4561", "SK_GIH003", "SK_PYE001", batch_id="B1")
        hashes, root = sc.publish_trade(seller, g, p)
        assert hashes
        fetched = mam.mam_fetch(g, root, mam.RESTRICTED, KEY)
        got = sc.decode_payload(fetched[0][0])
        assert got.is_origin and got.src_id == sc.NULL_ID and got.prev_tid == sc.NULL_ID

    def test_linked_publish_keeps_pointers(self):
        g = make_graph()
        maker = make_entity("SK_PYE001")
        p = trade(
            "SM-S7850", "SK_PYE001", "SK_SEL002",
            src="SK_GIH003", prev="SM-D4561",
            batch_id="SKPYEL01D", component_id="SKPYE100A",
        )
        _, root = sc.publish_trade(maker, g, p)
        got = sc.decode_payload(mam.mam_fetch(g, root, mam.RESTRICTED, KEY)[0][0])
        assert (got.src_id, got.prev_tid) == ("SK_GIH003", "SM-D4561")

    def test_seller_mismatch(self):
        g = make_graph()
        seller = make_entity("SK_GIH003")
        with pytest.raises(SellerMismatch):
            sc.publish_trade(seller, g, trade("T1", "SOMEONE_ELSE", "B"))

    def test_requires_restricted(self):
        g = make_graph()
        seed = crypto.generate_seed(RNG.randbytes)
        open_channel = sc.EntityChannel(state=mam.mam_init(seed, 1, alias="OPEN"))
        with pytest.raises(NotRestricted):
            sc.publish_trade(open_channel, g, trade("T1", "OPEN", "B"))


class TestSensors:
    def test_single_reading_roundtrips(self):
        g = make_graph()
        ch = make_entity("SENSORCH")
        s = sc.SensorData(
            "DHT11", "SENSORCH",
            (sc.SensorReading("temperature", 19.25, "C"),),
            5_000,
        )
        _, root = sc.publish_sensor(ch, g, s)
        got = sc.decode_message(mam.mam_fetch(g, root, mam.RESTRICTED, KEY)[0][0])
        assert got == s

    def test_coarse_mode_averages_window(self):
        g = make_graph()
        ch = make_entity("SENSORCH")
        ch.aggregation = "coarse"
        readings = tuple(
            sc.SensorReading("temperature", float(t), "C") for t in range(10)
        )
        s = sc.SensorData("DHT11", "SENSORCH", readings, 6_000)
        _, root = sc.publish_sensor(ch, g, s)
        got = sc.decode_message(mam.mam_fetch(g, root, mam.RESTRICTED, KEY)[0][0])
        assert len(got.readings) == 1
        assert got.readings[0].value == pytest.approx(4.5)

    def test_timestamp_regression(self):
        g = make_graph()
        ch = make_entity("SENSORCH")
        s1 = sc.SensorData("DHT11", "SENSORCH", (), 5_000)
        sc.publish_sensor(ch, g, s1)
        s2 = sc.SensorData("DHT11", "SENSORCH", (), 4_000)
        with pytest.raises(TimestampRegression):
            sc.publish_sensor(ch, g, s2)
        # a different sensor id has its own clock
        s3 = sc.SensorData("OTHER", "SENSORCH", (), 4_000)
        sc.publish_sensor(ch, g, s3)


class TestReceipts:
    def test_receipt_roundtrip_on_buyer_channel(self):
        g = make_graph()
        buyer = make_entity("SK_SEL002")
        buyer.note_fetched("SM-S7850")
        _, root = sc.issue_receipt(buyer, g, "SM-S7850", "OK")
        got = sc.decode_message(mam.mam_fetch(g, root, mam.RESTRICTED, KEY)[0][0])
        assert got == sc.Receipt("SM-S7850", "OK")

    def test_unfetched_trade_rejected(self):
        g = make_graph()
        buyer = make_entity("SK_SEL002")
        with pytest.raises(UnknownTrade):
            sc.issue_receipt(buyer, g, "SM-NEVER", "OK")

    def test_damaged_status_roundtrips(self):
        g = make_graph()
        buyer = make_entity("B")
        buyer.note_fetched("T9")
        _, root = sc.issue_receipt(buyer, g, "T9", "DAMAGED")
        got = sc.decode_message(mam.mam_fetch(g, root, mam.RESTRICTED, KEY)[0][0])
        assert got.status == "DAMAGED"
