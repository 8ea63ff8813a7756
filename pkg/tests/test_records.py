import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ztflow import records as R

HEADER = ",".join(R.TRACE_COLUMNS)

TCP_LINE = ("1700000000.5,2,aa:00:00:00:00:01,aa:00:00:00:00:02,2048,-1,"
            "10.0.0.1,10.0.0.2,TCP,64,60,0,0,43512,5001,SYN,,,")


def trace(*lines):
    return HEADER + "\n" + "\n".join(lines) + "\n"


def test_parse_tcp_line_direct_mapping():
    recs = R.parse_trace(trace(TCP_LINE))
    assert len(recs) == 1
    rec = recs[0]
    assert rec.proto is R.Protocol.TCP
    assert rec.dst_port == 5001
    assert rec.src_port == 43512
    assert rec.tcp_flags == frozenset({"SYN"})
    assert rec.ttl == 64 and rec.ip_len == 60
    assert rec.day == 2


def test_parse_empty_body_gives_empty_list():
    assert R.parse_trace(HEADER + "\n") == []


def test_decreasing_timestamp_rejected_with_line_number():
    line2 = TCP_LINE.replace("1700000000.5", "1699999999.0")
    with pytest.raises(R.TraceParseError) as exc:
        R.parse_trace(trace(TCP_LINE, line2))
    assert exc.value.line_no == 3


def test_malformed_cell_reports_line():
    bad = TCP_LINE.replace(",64,", ",sixtyfour,")
    with pytest.raises(R.TraceParseError) as exc:
        R.parse_trace(trace(TCP_LINE, bad))
    assert exc.value.line_no == 3


def test_missing_header_rejected():
    with pytest.raises(R.TraceParseError):
        R.parse_trace(io.StringIO(""))
    with pytest.raises(R.TraceParseError):
        R.parse_trace("ts,day\n1,2\n")


def test_day_derived_from_ts_when_blank():
    # 1700000000 is a Tuesday (weekday 1) in UTC.
    line = TCP_LINE.replace("1700000000.5,2,", "1700000000.5,,")
    rec = R.parse_trace(trace(line))[0]
    assert rec.day == 1


def test_proto_field_presence_enforced():
    udp_with_flags = TCP_LINE.replace(",TCP,", ",UDP,")
    with pytest.raises(R.TraceParseError):
        R.parse_trace(trace(udp_with_flags))


def test_infer_stack_examples():
    rec = R.parse_trace(trace(TCP_LINE))[0]
    assert R.infer_stack(rec).name == "ETHERNET_IP_TCP"

    arp = R.PacketRecord(
        ts=1.0, day=3, src_mac="aa", dst_mac="bb", eth_type=2054, vlan_id=-1,
        src_ip="10.0.0.1", dst_ip="10.0.0.2", proto=R.Protocol.ARP,
        ip_len=28, arp_op=1)
    assert R.infer_stack(arp).name == "ETHERNET_ARP"

    other = R.PacketRecord(
        ts=1.0, day=3, src_mac="aa", dst_mac="bb", eth_type=1536, vlan_id=-1,
        src_ip="10.0.0.1", dst_ip="10.0.0.2", proto=R.Protocol.OTHER, ip_len=10)
    with pytest.raises(R.UnsupportedStackError):
        R.infer_stack(other)


def test_preprocess_tcp_one_hot_flags():
    rec = R.parse_trace(trace(TCP_LINE))[0]
    vec = R.preprocess(rec)
    assert vec.schema == R.FEATURE_SCHEMAS["ETHERNET_IP_TCP"]
    by_name = dict(zip(vec.schema, vec.values))
    assert by_name["flag_syn"] == 1.0
    for name in ("flag_fin", "flag_rst", "flag_psh", "flag_ack",
                 "flag_urg", "flag_ece", "flag_cwr"):
        assert by_name[name] == 0.0


def test_preprocess_udp_has_no_flag_features():
    line = TCP_LINE.replace(",TCP,", ",UDP,").replace(",SYN,", ",,")
    vec = R.preprocess(R.parse_trace(trace(line))[0])
    assert not any(n.startswith("flag_") for n in vec.schema)
    assert "src_port" in vec.schema and "dst_port" in vec.schema


def test_preprocess_midnight_time_of_day_zero():
    ts = 86400.0 * 19722  # exactly midnight UTC
    rec = R.PacketRecord(
        ts=ts, day=R.day_from_ts(ts), src_mac="aa", dst_mac="bb",
        eth_type=2048, vlan_id=-1, src_ip="1.1.1.1", dst_ip="2.2.2.2",
        proto=R.Protocol.UDP, ip_len=100, ttl=64, dscp=0, ecn=0,
        src_port=1000, dst_port=2000)
    vec = R.preprocess(rec)
    assert dict(zip(vec.schema, vec.values))["time_of_day"] == 0.0


def test_preprocess_schema_stable_per_stack():
    rng = np.random.default_rng(0)
    lengths = set()
    for _ in range(20):
        rec = R.PacketRecord(
            ts=1.0, day=1, src_mac="a", dst_mac="b", eth_type=2048,
            vlan_id=-1, src_ip="1.1.1.1", dst_ip="2.2.2.2",
            proto=R.Protocol.TCP, ip_len=int(rng.integers(40, 1500)),
            ttl=64, dscp=0, ecn=0,
            src_port=int(rng.integers(0, 65536)),
            dst_port=int(rng.integers(0, 65536)),
            tcp_flags=frozenset({"ACK"}))
        lengths.add(len(R.preprocess(rec).values))
    assert len(lengths) == 1


def test_scaler_two_point_example():
    schema = ("x",)
    data = [R.FeatureVector((0.0,), schema), R.FeatureVector((2.0,), schema)]
    s = R.fit_scaler(data)
    assert s.means[0] == pytest.approx(1.0)
    assert s.stds[0] == pytest.approx(1.0)
    assert R.scale(s, R.FeatureVector((2.0,), schema)).values == (1.0,)


def test_scaler_zero_variance_maps_to_zero():
    schema = ("x",)
    data = [R.FeatureVector((5.0,), schema)] * 2
    s = R.fit_scaler(data)
    assert R.scale(s, R.FeatureVector((5.0,), schema)).values == (0.0,)
    assert R.scale(s, R.FeatureVector((9.0,), schema)).values == (0.0,)


def test_scaler_schema_mismatch():
    s = R.fit_scaler([R.FeatureVector((1.0,), ("x",))])
    with pytest.raises(R.SchemaMismatchError):
        R.scale(s, R.FeatureVector((1.0,), ("y",)))


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
                min_size=2, max_size=40))
@settings(max_examples=60)
def test_scaler_postfit_property_and_inverse(rows):
    schema = ("a", "b", "c")
    data = [R.FeatureVector(tuple(r), schema) for r in rows]
    s = R.fit_scaler(data)
    mat = np.array(rows)
    scaled = np.array([R.scale(s, v).values for v in data])
    for j in range(3):
        if s.stds[j] > 0:
            assert abs(scaled[:, j].mean()) < 1e-9 * max(1.0, abs(mat[:, j]).max())
            assert abs(scaled[:, j].var() - 1.0) < 1e-6
            back = s.inverse_array(scaled[:, j] * 0 + scaled[:, j]
                                   if False else scaled)[:, j]
            assert np.allclose(back, mat[:, j], atol=1e-9 * max(1.0, abs(mat[:, j]).max()))


_macs = st.sampled_from(["aa:00:00:00:00:01", "bb:00:00:00:00:02"])
_ips = st.sampled_from(["10.0.0.1", "10.0.0.2", "192.168.1.9"])


@st.composite
def packet_records(draw):
    proto = draw(st.sampled_from([R.Protocol.TCP, R.Protocol.UDP,
                                  R.Protocol.ICMP, R.Protocol.IGMP,
                                  R.Protocol.ARP]))
    ts = draw(st.floats(0, 2e9).map(lambda x: round(x, 3)))
    is_ip = proto is not R.Protocol.ARP
    is_transport = proto in (R.Protocol.TCP, R.Protocol.UDP)
    return R.PacketRecord(
        ts=ts,
        day=draw(st.integers(0, 6)),
        src_mac=draw(_macs), dst_mac=draw(_macs),
        eth_type=2054 if proto is R.Protocol.ARP else 2048,
        vlan_id=draw(st.sampled_from([-1, 10])),
        src_ip=draw(_ips), dst_ip=draw(_ips),
        proto=proto,
        ip_len=draw(st.integers(20, 1500)),
        ttl=draw(st.integers(1, 255)) if is_ip else None,
        dscp=draw(st.integers(0, 63)) if is_ip else None,
        ecn=draw(st.integers(0, 3)) if is_ip else None,
        src_port=draw(st.integers(0, 65535)) if is_transport else None,
        dst_port=draw(st.integers(0, 65535)) if is_transport else None,
        tcp_flags=frozenset(draw(st.sets(st.sampled_from(R.TCP_FLAGS))))
        if proto is R.Protocol.TCP else None,
        icmp_type=draw(st.integers(0, 40)) if proto is R.Protocol.ICMP else None,
        icmp_code=draw(st.integers(0, 15)) if proto is R.Protocol.ICMP else None,
        arp_op=draw(st.integers(1, 2)) if proto is R.Protocol.ARP else None,
    )


@given(st.lists(packet_records(), min_size=1, max_size=10))
@settings(max_examples=80)
def test_serialization_round_trip(recs):
    recs = sorted(recs, key=lambda r: r.ts)
    text = R.serialize_trace(recs)
    parsed = R.parse_trace(text)
    assert parsed == recs
    assert R.serialize_trace(parsed) == text  # canonical form is a fixpoint


def test_stats_from_records_buckets_cumulatively():
    recs = R.parse_trace(trace(TCP_LINE))
    base = recs[0]
    from dataclasses import replace
    stream = [replace(base, ts=base.ts + dt, ip_len=100)
              for dt in (0.0, 1.0, 2.5, 7.0)]
    samples = R.stats_from_records(stream, sampling_rate=5.0)
    assert samples[0] == R.FlowStatSample(base.ts, 1, 100)
    assert samples[1] == R.FlowStatSample(base.ts + 5.0, 3, 300)
    counts = [s.packets_cum for s in samples]
    assert counts == sorted(counts)


def test_labeled_trace_reader():
    labeled = (HEADER + ",label\n" + TCP_LINE + ",benign\n"
               + TCP_LINE + ",abnormal\n")
    pairs = list(R.iter_labeled_trace(labeled))
    assert [lbl for _, lbl in pairs] == ["benign", "abnormal"]
    assert pairs[0][0].dst_port == 5001
