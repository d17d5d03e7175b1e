import pytest

from bridgesim.controller import (
    Attachment,
    Control,
    ExplicitPath,
    ExplicitTree,
    ProtectionSpec,
    ServiceRequest,
    ServiceType,
)
from bridgesim.dataplane import Origin, Owner, config_dump
from bridgesim.errors import (
    CycleRefused,
    InstallFailed,
    InvalidPath,
    OwnershipViolation,
    PathRequired,
    ResourceExhausted,
    UnknownAttachment,
    UnknownBinding,
    UnknownPort,
)
from bridgesim.flowmap import FlowKey, FlowRule, MapToBvid, make_payload
from bridgesim.topology import LinkState
from oracles import best_paths

EDGE = {1, 2, 3, 4}
V3, V4 = Attachment(3, (3, 11), 22), Attachment(4, (4, 11), 22)


def p2p(name="VN2", path=(3, 13, 12, 4), **kw):
    return ServiceRequest(name, ServiceType.P2P, (V3, V4),
                          explicit=ExplicitPath(path) if path else None, **kw)


def snapshot(net):
    return (net.fdb_dump(), [config_dump(net.bridges[b]) for b in sorted(net.bridges)],
            {v: n for v, n in net.msti.in_use.items() if n})


def send(net, host, dst, svid, n=1, payload=b""):
    base = len(net.deliveries)
    for _ in range(n):
        net.inject(host, net.make_frame(host, net.hosts[dst].mac if dst in net.hosts else dst, svid,
                                        payload=payload))
    net.run_until(net.sim.now + 0.1)
    return net.deliveries[base:]


def test_spb_service_touches_edges_only(fig7):
    before = [config_dump(fig7.bridges[b]) for b in sorted(fig7.bridges) if b not in EDGE]
    b = fig7.controller.setup_service(ServiceRequest(
        "VN1", ServiceType.MP2MP, [Attachment(x, (x, 10), 11) for x in (1, 2, 3)], isid=1, bvid=101))
    assert b.control is Control.SPB and b.entries == []
    assert {bid for bid, _ in fig7.controller.write_log} <= EDGE
    fig7.run_until(0.5)
    assert before == [config_dump(fig7.bridges[x]) for x in sorted(fig7.bridges) if x not in EDGE]
    assert fig7.controller.decisions == ["service=VN1 control=Spb isid=1 bvid=101 path=spb"]


def test_explicit_path_forwarding(fig7):
    b = fig7.controller.setup_service(p2p())
    assert b.control is Control.SDN and b.bvid == 102 and b.path == (3, 13, 12, 4)
    assert all(e.origin is Origin.SDN for _, _, e in b.entries)
    got = send(fig7, "v3", "v4", 22, n=3)
    assert [(d.host, d.path) for d in got] == [("v4", (3, 13, 12, 4))] * 3
    got = send(fig7, "v4", "v3", 22)
    assert [(d.host, d.path) for d in got] == [("v3", (4, 12, 13, 3))]


def test_explicit_path_unknown_destination_not_flooded(fig7):
    fig7.controller.setup_service(p2p())
    got = send(fig7, "v3", "ff:ff:ff:ff:ff:ff", 22)
    assert [d.host for d in got] == ["v4"]


def test_shortest_path_default_for_sdn_p2p(fig7):
    b = fig7.controller.setup_service(p2p(path=None, protection=ProtectionSpec(), oam_interval=0.01))
    _, want = best_paths([(11, 12, 1), (12, 13, 2), (13, 14, 1), (14, 11, 1), (1, 11, 1), (2, 12, 1),
                          (3, 13, 1), (3, 11, 1), (4, 14, 1), (4, 12, 1)], 3, 4)
    assert [b.path] == want
    assert not set(zip(b.path, b.path[1:])) & set(zip(b.backup_path, b.backup_path[1:]))


@pytest.mark.parametrize("index", [0, 1, 2, 3])
def test_install_is_all_or_nothing(fig7, index):
    before = snapshot(fig7)
    path = (3, 13, 12, 4)

    def fail(bridge, i):
        if i == index:
            raise RuntimeError("switch rejected write")
    fig7.controller.fault_injector = fail
    with pytest.raises(InstallFailed) as info:
        fig7.controller.setup_service(p2p(path=path))
    assert info.value.bridge == path[index]
    assert snapshot(fig7) == before
    assert fig7.controller.bindings == {}
    fig7.controller.fault_injector = None
    fig7.controller.setup_service(p2p(path=path))


def test_protection_install_rolls_back_working_path(fig7):
    before = snapshot(fig7)
    calls = []

    def fail(bridge, i):
        calls.append(bridge)
        if len(calls) == 6:  # third bridge of the protection path
            raise RuntimeError("boom")
    fig7.controller.fault_injector = fail
    with pytest.raises(InstallFailed):
        fig7.controller.setup_service(p2p(path=(3, 13, 14, 4), oam_interval=0.01,
                                          protection=ProtectionSpec((3, 11, 12, 4))))
    assert snapshot(fig7) == before


@pytest.mark.parametrize("path,error", [
    ((3, 12, 4), InvalidPath),
    ((3, 13, 3, 13, 12, 4), InvalidPath),
    ((1, 11, 12, 2), InvalidPath),
])
def test_bad_paths(fig7, path, error):
    with pytest.raises(error):
        fig7.controller.setup_service(p2p(path=path))
    assert fig7.controller.bindings == {}


def test_path_over_down_link_refused(fig7):
    fig7.set_link(13, 12, LinkState.DOWN)
    fig7.run_until(0.2)
    with pytest.raises(InvalidPath):
        fig7.controller.setup_service(p2p())


def test_path_required(fig7):
    with pytest.raises(PathRequired):
        fig7.controller.setup_service(p2p(path=None, shortest_path_ok=False))


def test_tree_service(fig7):
    atts = [Attachment(x, (x, 10), 11) for x in (1, 2, 3)]
    tree = ExplicitTree({(1, 11), (11, 12), (12, 2), (11, 3)})
    b = fig7.controller.setup_service(ServiceRequest("T", ServiceType.MP2MP, atts, explicit=tree))
    assert b.control is Control.SDN and b.tree == tree.edges
    got = send(fig7, "h1", "ff:ff:ff:ff:ff:ff", 11)
    assert sorted((d.host, d.path) for d in got) == [("h2", (1, 11, 12, 2)), ("h3", (1, 11, 3))]
    # multipoint services address the service group, so known unicast still follows the tree
    got = send(fig7, "h2", "h1", 11)
    assert sorted((d.host, d.path) for d in got) == [("h1", (2, 12, 11, 1)), ("h3", (2, 12, 11, 3))]


def test_tree_with_cycle_refused(fig7):
    atts = [Attachment(x, (x, 10), 11) for x in (1, 2, 3)]
    tree = ExplicitTree({(1, 11), (11, 12), (12, 2), (11, 3), (3, 13), (13, 12)})
    with pytest.raises(CycleRefused):
        fig7.controller.setup_service(ServiceRequest("T", ServiceType.MP2MP, atts, explicit=tree))


def test_teardown_restores_state(fig7):
    before = snapshot(fig7)
    fig7.controller.setup_service(p2p(path=(3, 13, 14, 4), oam_interval=0.01,
                                      protection=ProtectionSpec((3, 11, 12, 4))))
    fig7.run_until(0.2)
    fig7.controller.teardown_service("VN2")
    assert snapshot(fig7) == before
    assert fig7.oam.mas == {} and fig7.protection.groups == {}
    with pytest.raises(UnknownBinding):
        fig7.controller.teardown_service("VN2")


def test_pools_lowest_free_first(fig7):
    ctrl = fig7.controller
    a = ctrl.setup_service(p2p("a"))
    b = ctrl.setup_service(ServiceRequest("b", ServiceType.P2P, (Attachment(1, (1, 10), 5), Attachment(4, (4, 10), 5)),
                                          explicit=ExplicitPath((1, 11, 14, 4))))
    assert (a.bvid, b.bvid) == (102, 103) and (a.isid, b.isid) == (1, 2)
    ctrl.teardown_service("a")
    c = ctrl.setup_service(p2p("c"))
    assert (c.bvid, c.isid) == (102, 1)


def test_pool_exhaustion(fig7):
    ctrl = fig7.controller
    for i, svid in enumerate((22, 23, 24)):
        atts = (Attachment(3, (3, 11), svid), Attachment(4, (4, 11), svid))
        ctrl.setup_service(ServiceRequest(f"s{i}", ServiceType.P2P, atts, explicit=ExplicitPath((3, 13, 12, 4))))
    with pytest.raises(ResourceExhausted):
        atts = (Attachment(3, (3, 11), 25), Attachment(4, (4, 11), 25))
        ctrl.setup_service(ServiceRequest("s4", ServiceType.P2P, atts, explicit=ExplicitPath((3, 13, 12, 4))))


def test_cannot_attach_on_core_port(fig7):
    with pytest.raises(UnknownPort):
        fig7.controller.setup_service(ServiceRequest(
            "x", ServiceType.P2P, (Attachment(11, (11, 1), 5), Attachment(4, (4, 10), 5))))


def test_controller_never_writes_spb_fids(fig7):
    fig7.controller.setup_service(p2p())
    for bid, b in fig7.bridges.items():
        for vid in fig7.msti.vids_of(Owner.SPB):
            assert all(e.origin is not Origin.SDN for e in b.fdbs[vid].values())
    b = fig7.controller.bindings["VN2"]
    with pytest.raises(InstallFailed) as info:
        fig7.controller.install_path(b, (3, 13, 12, 4), bvid=101)
    assert isinstance(info.value.cause, OwnershipViolation)


def test_flow_path_carries_selected_traffic(fig7):
    ctrl = fig7.controller
    b = ctrl.setup_service(p2p())
    bvid = ctrl.add_flow_path(b, (3, 11, 14, 4))
    assert bvid == 103
    fig7.bridges[3].ports[(3, 11)].flow_rules = (FlowRule(1, FlowKey(selector=9), MapToBvid(bvid)),)
    got = send(fig7, "v3", "v4", 22, payload=make_payload(selector=9))
    assert [d.path for d in got] == [(3, 11, 14, 4)]
    got = send(fig7, "v3", "v4", 22, payload=make_payload(selector=1))
    assert [d.path for d in got] == [(3, 13, 12, 4)]


def test_move_attachment(fig7):
    ctrl = fig7.controller
    ctrl.setup_service(ServiceRequest("VN1", ServiceType.MP2MP,
                                      [Attachment(x, (x, 10), 11) for x in (1, 2, 3)], isid=1, bvid=101))
    with pytest.raises(UnknownAttachment):
        ctrl.move_attachment("VN1", (4, 10), (2, 10))
    ctrl.setup_service(p2p())
    with pytest.raises(PathRequired):
        ctrl.move_attachment("VN2", (4, 11), (2, 10))
    moved = ctrl.move_attachment("VN2", (4, 11), (2, 10), path=(3, 13, 12, 2))
    assert moved.path == (3, 13, 12, 2) and moved.isid == 2
