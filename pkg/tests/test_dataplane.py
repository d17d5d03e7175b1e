import pytest

from bridgesim.dataplane import (
    Actor,
    Admitted,
    BridgeState,
    Consumed,
    Drop,
    DropReason,
    EdgeAssociation,
    EgressQueues,
    FdbEntry,
    MeterConfig,
    Origin,
    Owner,
    PortConfig,
    PortId,
    TokenBucket,
    Transmit,
    UnknownPolicy,
    age_fdb,
    config_dump,
    egress_process,
    fdb_dump,
    fdb_remove,
    fdb_write,
    forbidden_entries,
    ingress_process,
    learn,
    relay,
)
from bridgesim.errors import OwnershipViolation, UnknownVid
from bridgesim.flowmap import FlowKey, FlowRule, MapToBvid, MapToFlowHash, MapToIsid, make_payload
from bridgesim.frames import Frame, ITag, MacAddress, btag, ctag, encapsulate_pbb, group_mac, stag, wire_size

A, B, C = MacAddress(0xA), MacAddress(0xB), MacAddress(0xC)


def bridge(n_ports=3):
    b = BridgeState(1, MacAddress(0x02BB00000001))
    for i in range(1, n_ports + 1):
        b.add_port(i, PortConfig(vlan_membership={10}))
    b.assign_vid(10, Owner.SPB, learning=True)
    b.assign_vid(200, Owner.EXTERNAL_AGENT)
    return b


def test_token_bucket_rate():
    tb = TokenBucket(MeterConfig(rate=1000, burst=1500), now=0.0)
    assert tb.admit(1500, 0.0)
    assert not tb.admit(1, 0.0)
    assert not tb.admit(600, 0.5)
    assert tb.admit(500, 0.5)
    assert tb.admit(1500, 10.0)  # refill capped at burst
    assert not tb.admit(1, 10.0)


def test_meter_config_checks():
    with pytest.raises(ValueError):
        MeterConfig(rate=0, burst=2000)
    with pytest.raises(ValueError):
        MeterConfig(rate=1, burst=10)


def test_strict_priority_drain():
    q = EgressQueues()
    for i, pcp in enumerate([0, 7, 3, 7, 0]):
        q.enqueue(i, pcp)
    assert len(q) == 5
    assert q.drain() == [1, 3, 2, 0, 4]
    assert len(q) == 0


def test_untagged_gets_pvid_and_filtering():
    b = bridge()
    res = ingress_process(b, PortId(1, 1), Frame(B, A))
    assert res == Drop(DropReason.INGRESS_FILTERED)  # pvid 1 not a member
    b.ports[PortId(1, 1)].pvid = 10
    res = ingress_process(b, PortId(1, 1), Frame(B, A))
    assert isinstance(res, Admitted) and res.vid == 10 and res.frame.tags == (ctag(10),)


def test_admin_down_port():
    b = bridge()
    b.ports[PortId(1, 1)].admin_up = False
    assert ingress_process(b, PortId(1, 1), Frame(B, A, (ctag(10),))) == Drop(DropReason.PORT_DOWN)


def test_ingress_translation_before_filtering():
    b = bridge()
    b.ports[PortId(1, 1)].ingress_vid_translation = {30: 10}
    res = ingress_process(b, PortId(1, 1), Frame(B, A, (ctag(30),)))
    assert res.vid == 10
    with pytest.raises(ValueError):
        PortConfig(ingress_vid_translation={1: 5, 2: 5})


def test_meter_drops_in_simulated_time():
    b = bridge()
    b.ports[PortId(1, 1)].meter = MeterConfig(rate=100, burst=1500)
    f = Frame(B, A, (ctag(10),), payload=bytes(1400))
    assert isinstance(ingress_process(b, PortId(1, 1), f, 0.0), Admitted)
    assert ingress_process(b, PortId(1, 1), f, 0.1) == Drop(DropReason.METER_EXCEEDED)
    assert isinstance(ingress_process(b, PortId(1, 1), f, 0.1 + wire_size(f) / 100), Admitted)


def edge_bridge():
    b = bridge()
    b.assign_vid(100, Owner.SPB)
    cfg = b.ports[PortId(1, 1)]
    cfg.ingress_filtering, cfg.decap = False, True
    cfg.edge[20] = EdgeAssociation(5, 100, group_mac(5))
    b.ports[PortId(1, 2)].vlan_membership = {100}
    return b, cfg


def test_edge_encapsulation():
    b, _ = edge_bridge()
    res = ingress_process(b, PortId(1, 1), Frame(B, A, (stag(20, pcp=4),)))
    assert res.vid == 100
    f = res.frame
    assert f.is_pbb and f.dst == group_mac(5) and f.src == b.bmac
    assert f.tags == (btag(100, 4),) and f.itag == ITag(5, 4)


def test_flow_rules_override_edge():
    b, cfg = edge_bridge()
    b.assign_vid(101, Owner.SPB)
    b.assign_vid(102, Owner.SPB)
    cfg.flow_rules = (
        FlowRule(9, FlowKey(selector=1), MapToBvid(101)),
        FlowRule(8, FlowKey(selector=2), MapToIsid(77, 102)),
        FlowRule(7, FlowKey(selector=3), MapToFlowHash()),
    )
    cfg.hash_range = (101, 102)
    f = lambda s: Frame(B, A, (stag(20),), payload=make_payload(selector=s))  # noqa: E731
    assert ingress_process(b, PortId(1, 1), f(1)).vid == 101
    res = ingress_process(b, PortId(1, 1), f(2))
    assert res.vid == 102 and res.frame.itag.isid == 77
    assert ingress_process(b, PortId(1, 1), f(3)).vid in (101, 102)
    assert ingress_process(b, PortId(1, 1), f(4)).vid == 100


def test_learning_only_on_spb_fids():
    b = bridge()
    assert learn(b, PortId(1, 1), Frame(B, A, (ctag(10),)), 10, now=1.0)
    assert b.fdbs[10][A].ports == {PortId(1, 1)} and b.fdbs[10][A].origin is Origin.LEARNED
    assert not learn(b, PortId(1, 1), Frame(B, A, (ctag(10),)), 10, now=2.0)  # refresh only
    assert not learn(b, PortId(1, 1), Frame(B, A), 200)
    assert not learn(b, PortId(1, 1), Frame(B, group_mac(1)), 10)
    assert age_fdb(b, 2.0 + b.aging_time + 1) == 1 and A not in b.fdbs[10]


def test_relay_known_flood_and_drop():
    b = bridge()
    fdb_write(b, 10, FdbEntry(B, {PortId(1, 2)}, Origin.SPB), Actor.SPB_PLANE)
    f = Frame(B, A, (ctag(10),))
    assert relay(b, PortId(1, 1), f, 10) == {PortId(1, 2)}
    assert relay(b, PortId(1, 1), Frame(C, A), 10) == {PortId(1, 2), PortId(1, 3)}
    for p in b.ports.values():
        p.vlan_membership.add(200)
    assert b.policy_for(200) is UnknownPolicy.DROP
    assert relay(b, PortId(1, 1), Frame(C, A), 200) == frozenset()
    assert relay(b, PortId(1, 1), f, 999) == frozenset()


def test_relay_never_returns_ingress():
    b = bridge()
    fdb_write(b, 10, FdbEntry(B, {PortId(1, 1)}, Origin.SPB), Actor.SPB_PLANE)
    assert relay(b, PortId(1, 1), Frame(B, A), 10) == frozenset()


def test_relay_masks_by_membership():
    b = bridge()
    fdb_write(b, 10, FdbEntry(B, {PortId(1, 2), PortId(1, 3)}, Origin.SPB), Actor.SPB_PLANE)
    b.ports[PortId(1, 3)].vlan_membership.clear()
    assert relay(b, PortId(1, 1), Frame(B, A), 10) == {PortId(1, 2)}


def test_egress_decap_and_isid_check():
    b, cfg = edge_bridge()
    inner = Frame(B, A, (stag(20),), payload=b"x")
    f = encapsulate_pbb(inner, group_mac(5), C, btag(100), ITag(5))
    assert egress_process(b, PortId(1, 1), f, 100) == Transmit(inner, 0)
    other = encapsulate_pbb(inner, group_mac(6), C, btag(100), ITag(6))
    assert egress_process(b, PortId(1, 1), other, 100) == Drop(DropReason.EGRESS_FILTERED)
    assert egress_process(b, PortId(1, 3), f, 100) == Drop(DropReason.EGRESS_FILTERED)
    assert egress_process(b, PortId(1, 1), f, 100, intercept=lambda fr: True) == Consumed(f)


def test_egress_translation_and_queue():
    b = bridge()
    b.ports[PortId(1, 2)].egress_vid_translation = {10: 30}
    res = egress_process(b, PortId(1, 2), Frame(B, A, (ctag(10, pcp=6),)), 10)
    assert res.frame.tags == (ctag(30, pcp=6),) and res.queue == 6


def test_ownership_enforced():
    b = bridge()
    with pytest.raises(OwnershipViolation):
        fdb_write(b, 10, FdbEntry(B, {PortId(1, 2)}, Origin.SDN), Actor.SDN_CONTROLLER)
    with pytest.raises(OwnershipViolation):
        fdb_write(b, 200, FdbEntry(B, {PortId(1, 2)}, Origin.SPB), Actor.SPB_PLANE)
    assert b.violations == 2 and b.fdbs[10] == {} and b.fdbs[200] == {}
    with pytest.raises(ValueError):
        fdb_write(b, 10, FdbEntry(B, {PortId(1, 2)}, Origin.SDN), Actor.SPB_PLANE)
    with pytest.raises(UnknownVid):
        fdb_write(b, 999, FdbEntry(B, {PortId(1, 2)}, Origin.SPB), Actor.SPB_PLANE)
    fdb_write(b, 200, FdbEntry(B, {PortId(1, 2)}, Origin.SDN), Actor.SDN_CONTROLLER)
    with pytest.raises(OwnershipViolation):
        fdb_remove(b, 200, B, Actor.SPB_PLANE)
    assert fdb_remove(b, 200, B, Actor.SDN_CONTROLLER).mac == B


def test_management_bypasses_and_is_logged():
    b = bridge()
    fdb_write(b, 200, FdbEntry(B, {PortId(1, 2)}, Origin.STATIC), Actor.MANAGEMENT)
    fdb_remove(b, 200, B, Actor.MANAGEMENT)
    assert b.management_log == [f"write fid=200 mac={B}", f"remove fid=200 mac={B}"]


def test_forbidden_entries_detects_smuggled_state():
    b = bridge()
    assert forbidden_entries(b) == []
    b.fdbs[200][A] = FdbEntry(A, {PortId(1, 1)}, Origin.SPB)
    assert len(forbidden_entries(b)) == 1


def test_owner_change_clears_fid():
    b = bridge()
    fdb_write(b, 10, FdbEntry(B, {PortId(1, 2)}, Origin.SPB), Actor.SPB_PLANE)
    b.assign_vid(10, Owner.EXTERNAL_AGENT)
    assert b.fdbs[10] == {}


def test_dumps_are_sorted_text():
    b = bridge()
    fdb_write(b, 10, FdbEntry(B, {PortId(1, 2)}, Origin.SPB), Actor.SPB_PLANE)
    learn(b, PortId(1, 1), Frame(B, A, (ctag(10),)), 10, now=1.0)
    assert fdb_dump(b, now=3.0) == [
        "fid=10 mac=00:00:00:00:00:0a ports=1.1 origin=Learned age=2",
        "fid=10 mac=00:00:00:00:00:0b ports=1.2 origin=Spb age=-",
    ]
    assert len(config_dump(b)) == 3
