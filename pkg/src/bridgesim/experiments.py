"""
Randomized and exhaustive experiments built on scenarios.

``run_fuzz``   hammers both control planes with random operations, including
               writes aimed at the other plane's VLANs, and checks after each
               one that no forwarding table holds an entry its owner forbids.
``run_sweep``  fails each link once in a fresh copy of a scenario and compares
               the OAM defects raised against the links each monitored path uses.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .controller import Attachment, ExplicitPath, ServiceRequest, ServiceType
from .dataplane import Actor, FdbEntry, Origin, Owner, PortId, fdb_remove, fdb_write, forbidden_entries
from .errors import BridgeSimError, OwnershipViolation
from .frames import MacAddress
from .oam import LOSS_THRESHOLD
from .scenario import AssertionResult, RunResult, Scenario, build, evaluate
from .simnet.network import Network
from .simnet.trace import Trace
from .spb import ServiceAttachment, compute_spt
from .topology import LinkState, set_vlan_membership

# -- hybrid fuzz -------------------------------------------------------------------

CROSS_PLANE_OPS = ("spb_write_ext", "ctrl_write_spb", "ctrl_remove_spb", "spb_member_ext",
                   "ctrl_member_spb", "spb_advertise_ext", "spb_edge_ext")
VALID_OPS = ("ctrl_setup_spb", "ctrl_setup_sdn", "ctrl_teardown", "ctrl_static", "ctrl_unstatic",
             "link_flap", "advance", "spb_advertise")


@dataclass
class FuzzReport:
    operations: int = 0
    cross_plane: int = 0
    refused: int = 0
    forbidden: int = 0
    ext_touched_by_spb: int = 0
    spb_touched_by_ctrl: int = 0
    kinds: Counter = field(default_factory=Counter)
    failures: List[str] = field(default_factory=list)

    @property
    def clean(self):
        return (self.refused == self.cross_plane and self.forbidden == 0
                and self.ext_touched_by_spb == 0 and self.spb_touched_by_ctrl == 0)

    def summary(self):
        return (f"operations={self.operations} cross_plane={self.cross_plane} refused={self.refused} "
                f"forbidden={self.forbidden} spb_on_ext={self.ext_touched_by_spb} "
                f"ctrl_on_spb={self.spb_touched_by_ctrl}")


def _plane_snapshot(net: Network, owner: Owner):
    """Forwarding entries and memberships of every VLAN owned by ``owner``."""
    vids = set(net.msti.vids_of(owner))
    entries, members = [], []
    for bid in sorted(net.bridges):
        b = net.bridges[bid]
        for vid in sorted(vids):
            fid = b.fid_for(vid)
            if fid is None:
                continue
            entries += [(bid, vid, e.mac, e.ports, e.origin) for e in b.fdbs[fid.id].values()
                        if e.origin is not Origin.LEARNED]
            members += [(bid, vid, p) for p, c in sorted(b.ports.items()) if vid in c.vlan_membership]
    return entries, members


def _random_mac(rng):
    return MacAddress((rng.getrandbits(48) & ~(1 << 40)) | (0x02 << 40))


class _Fuzzer:
    def __init__(self, net: Network, rng: random.Random):
        self.net = net
        self.rng = rng
        self.report = FuzzReport()
        self.statics: List[Tuple[int, int, MacAddress]] = []
        self.used_svids: Dict[PortId, Set[int]] = {}
        self.serial = 0
        self.host_ports = sorted(h.port for h in net.hosts.values())

    def _vid(self, owner):
        vids = self.net.msti.vids_of(owner)
        return self.rng.choice(vids) if vids else None

    def _bridge(self):
        return self.net.bridges[self.rng.choice(sorted(self.net.bridges))]

    def cross(self, kind):
        net, rng = self.net, self.rng
        spb_vid, ext_vid = self._vid(Owner.SPB), self._vid(Owner.EXTERNAL_AGENT)
        bridge = self._bridge()
        ports = sorted(bridge.ports)
        if kind == "spb_write_ext":
            fdb_write(bridge, ext_vid, FdbEntry(_random_mac(rng), {rng.choice(ports)}, Origin.SPB), Actor.SPB_PLANE)
        elif kind == "ctrl_write_spb":
            fdb_write(bridge, spb_vid, FdbEntry(_random_mac(rng), {rng.choice(ports)}, Origin.SDN),
                      Actor.SDN_CONTROLLER)
        elif kind == "ctrl_remove_spb":
            table = bridge.fdbs[spb_vid]
            mac = rng.choice(sorted(table)) if table else _random_mac(rng)
            fdb_remove(bridge, spb_vid, mac, Actor.SDN_CONTROLLER)
        elif kind == "spb_member_ext":
            set_vlan_membership(net.msti, bridge, ext_vid, rng.sample(ports, 1), Actor.SPB_PLANE)
        elif kind == "ctrl_member_spb":
            set_vlan_membership(net.msti, bridge, spb_vid, rng.sample(ports, 1), Actor.SDN_CONTROLLER)
        elif kind == "spb_advertise_ext":
            net.spb.advertise(bridge.id, ServiceAttachment(bridge.id, rng.randrange(1, 1 << 20), ext_vid))
        elif kind == "spb_edge_ext":
            port = rng.choice(self.host_ports)
            net.controller.program_edge(port.bridge, port, rng.randrange(1, 4095), rng.randrange(1, 1 << 20),
                                        ext_vid, actor=Actor.SPB_PLANE)

    def _free_svid(self, port):
        used = self.used_svids.setdefault(port, set())
        while True:
            svid = self.rng.randrange(100, 4000)
            if svid not in used:
                used.add(svid)
                return svid

    def valid(self, kind):
        net, rng, ctrl = self.net, self.rng, self.net.controller
        if kind in ("ctrl_setup_spb", "ctrl_setup_sdn"):
            hosts = rng.sample(self.host_ports, 2 if kind == "ctrl_setup_sdn" else rng.choice((2, 3)))
            atts = [Attachment(p.bridge, p, self._free_svid(p)) for p in hosts]
            if len({a.bridge for a in atts}) < len(atts):
                return
            self.serial += 1
            if kind == "ctrl_setup_spb":
                req = ServiceRequest(f"fz{self.serial}", ServiceType.MP2MP, atts)
            else:
                view = ctrl.sync_topology()
                path = compute_spt(view, atts[0].bridge).path_from_root(atts[1].bridge)
                if path is None:
                    return
                req = ServiceRequest(f"fz{self.serial}", ServiceType.P2P, atts, explicit=ExplicitPath(path))
            ctrl.setup_service(req)
        elif kind == "ctrl_teardown":
            if ctrl.bindings:
                ctrl.teardown_service(rng.choice(sorted(ctrl.bindings)))
        elif kind == "ctrl_static":
            bridge = self._bridge()
            vid = self._vid(Owner.EXTERNAL_AGENT)
            mac = _random_mac(rng)
            fdb_write(bridge, vid, FdbEntry(mac, {rng.choice(sorted(bridge.ports))}, Origin.SDN),
                      Actor.SDN_CONTROLLER)
            self.statics.append((bridge.id, vid, mac))
        elif kind == "ctrl_unstatic":
            if self.statics:
                bid, vid, mac = self.statics.pop(rng.randrange(len(self.statics)))
                fdb_remove(net.bridges[bid], vid, mac, Actor.SDN_CONTROLLER)
        elif kind == "link_flap":
            link = net.phys.links[rng.choice(sorted(net.phys.links))]
            net.set_link(link.a, link.b, LinkState.DOWN if link.up else LinkState.UP)
        elif kind == "advance":
            net.run_until(net.sim.now + rng.choice((0.01, 0.05, 0.15)))
        elif kind == "spb_advertise":
            bridge = self._bridge()
            net.spb.advertise(bridge.id, ServiceAttachment(bridge.id, rng.randrange(1 << 20, 1 << 21),
                                                           self._vid(Owner.SPB)))

    def step(self):
        rep, net = self.report, self.net
        rep.operations += 1
        cross = self.rng.random() < 0.5
        kind = self.rng.choice(CROSS_PLANE_OPS if cross else VALID_OPS)
        rep.kinds[kind] += 1
        before_spb = _plane_snapshot(net, Owner.SPB)
        before_ext = _plane_snapshot(net, Owner.EXTERNAL_AGENT)
        if cross:
            rep.cross_plane += 1
            try:
                self.cross(kind)
                rep.failures.append(f"op {rep.operations} {kind} was accepted")
            except OwnershipViolation:
                rep.refused += 1
            if _plane_snapshot(net, Owner.SPB) != before_spb or _plane_snapshot(net, Owner.EXTERNAL_AGENT) != before_ext:
                rep.failures.append(f"op {rep.operations} {kind} changed state despite refusal")
                rep.refused -= 1
        else:
            try:
                self.valid(kind)
            except OwnershipViolation as exc:
                rep.failures.append(f"op {rep.operations} {kind} refused: {exc}")
            except BridgeSimError:
                pass  # resource or path errors are legitimate outcomes
            if kind.startswith("ctrl_") and _plane_snapshot(net, Owner.SPB) != before_spb:
                rep.spb_touched_by_ctrl += 1
                rep.failures.append(f"op {rep.operations} {kind} changed SPB forwarding state")
            if not kind.startswith("ctrl_") and _plane_snapshot(net, Owner.EXTERNAL_AGENT) != before_ext:
                rep.ext_touched_by_spb += 1
                rep.failures.append(f"op {rep.operations} {kind} changed external forwarding state")
        for bid in sorted(net.bridges):
            bad = forbidden_entries(net.bridges[bid])
            if bad:
                rep.forbidden += len(bad)
                rep.failures.append(f"op {rep.operations} {kind} left forbidden entries {bad[:2]}")


def run_fuzz(net: Network, seed: int, operations: int) -> FuzzReport:
    fuzzer = _Fuzzer(net, random.Random(seed))
    for _ in range(operations):
        fuzzer.step()
    return fuzzer.report


def run_fuzz_scenario(scn: Scenario, until=None, trace: Optional[Trace] = None) -> RunResult:
    net, labels, errors = build(scn, trace)
    net.run_until(0.0)
    report = run_fuzz(net, scn.seed, scn.data["fuzz"]["operations"])
    net.trace.event(f"FUZZ {report.summary()}")
    result = RunResult(scn, net, labels, errors=errors, extras={"fuzz": report})
    plain = [a for a in scn.assertions if a["type"] != "fuzz_clean"]
    results = evaluate(Scenario(**{**scn.__dict__, "data": {**scn.data, "assertions": plain}}), net, labels)
    for i, a in enumerate(scn.assertions):
        if a["type"] == "fuzz_clean":
            detail = report.summary() + (f" first-failure={report.failures[0]}" if report.failures else "")
            results.insert(i, AssertionResult(i, "fuzz_clean", report.clean, detail))
    result.results = results
    return result


# -- fate-sharing sweep -----------------------------------------------------------------

@dataclass
class SweepCase:
    link: Tuple[int, int]
    expected: Set[Tuple[int, int, int]]
    observed: Set[Tuple[int, int, int]]
    early: List[Tuple[int, int, int]]
    late: List[Tuple[Tuple[int, int, int], float, float]]  # (pair, latency, bound)

    @property
    def ok(self):
        return self.expected == self.observed and not self.early and not self.late


def _links_of(path):
    return {tuple(sorted(e)) for e in zip(path, path[1:])}


def _path_delay(net, path):
    return sum(net.phys.link(a, b).delay for a, b in zip(path, path[1:]))


def probe_paths(scn: Scenario, probe_at: float) -> Dict[Tuple[int, int, int], Tuple[int, ...]]:
    """Bridge path from each peer MEP to each MEP, learned from data frames.

    For every association one data frame is sent from each MEP's host, on the
    monitored service; its deliveries give the path data takes to every
    other MEP.  Associations on a standby B-VID (protection paths carry no
    data until a switch) take the installed backup path instead.
    """
    net, _, _ = build(scn, timeline=False)
    net.run_until(probe_at)
    paths = {}
    probes = {}
    for ma_id in sorted(net.oam.mas):
        ma = net.oam.mas[ma_id]
        binding = next((b for b in net.controller.bindings.values() if ma_id in b.oam), None)
        if binding is not None and ma.bvid == binding.backup_bvid:
            for mep in ma.meps.values():
                for peer in ma.meps.values():
                    if peer.id != mep.id:
                        path = binding.backup_path
                        if path[0] != peer.bridge:
                            path = path[::-1]
                        paths[(ma_id, mep.id, peer.id)] = tuple(path)
            continue
        for peer in ma.meps.values():
            host = net.host_at[peer.port]
            frame = net.make_frame(host.name, "ff:ff:ff:ff:ff:ff", svid=peer.svid)
            probes[net.inject(host.name, frame)] = (ma_id, peer)
    net.run_until(net.sim.now + 0.5)
    for d in net.deliveries:
        if d.pkt not in probes:
            continue
        ma_id, peer = probes[d.pkt]
        for mep in net.oam.mas[ma_id].meps.values():
            if mep.id != peer.id and net.host_at[mep.port].name == d.host:
                paths[(ma_id, mep.id, peer.id)] = d.path
    return paths


def run_sweep(scn: Scenario, fail_at=None, observe=None) -> Tuple[List[SweepCase], Dict]:
    sweep = scn.data.get("sweep") or {}
    fail_at = sweep.get("fail_at", 1.0) if fail_at is None else fail_at
    observe = sweep.get("observe", 0.5) if observe is None else observe
    paths = probe_paths(scn, fail_at)
    cases = []
    template, _, _ = build(scn, timeline=False)
    for key in sorted(template.phys.links):
        link = template.phys.links[key]
        pair = tuple(sorted(link.bridges))
        net, _, _ = build(scn, timeline=False)
        net.set_link(*pair, LinkState.DOWN, at=fail_at)
        net.run_until(fail_at + observe)
        expected = {k for k, p in paths.items() if pair in _links_of(p)}
        observed, early, late = set(), [], []
        for ev in net.oam.events:
            if not ev.raised:
                continue
            k = (ev.ma, ev.mep, ev.peer)
            if ev.time <= fail_at:
                early.append(k)
                continue
            if k in observed:
                continue
            observed.add(k)
            if k in paths:
                bound = LOSS_THRESHOLD * net.oam.mas[ev.ma].interval + _path_delay(net, paths[k])
                if ev.time - fail_at > bound + 1e-9:
                    late.append((k, ev.time - fail_at, bound))
        cases.append(SweepCase(pair, expected, observed, early, late))
    return cases, paths


def run_sweep_scenario(scn: Scenario, trace: Optional[Trace] = None) -> RunResult:
    cases, paths = run_sweep(scn)
    net, labels, errors = build(scn, trace, timeline=False)
    net.run_until(scn.data["sweep"].get("fail_at", 1.0))
    for c in cases:
        net.trace.event(
            f"SWEEP link={c.link[0]}-{c.link[1]} expected={len(c.expected)} observed={len(c.observed)} "
            f"false_pos={len(c.observed - c.expected)} false_neg={len(c.expected - c.observed)} "
            f"late={len(c.late)} {'ok' if c.ok else 'MISMATCH'}")
    result = RunResult(scn, net, labels, errors=errors, extras={"sweep": cases, "paths": paths})
    results = []
    for i, a in enumerate(scn.assertions):
        if a["type"] == "fate_sharing":
            bad = [c for c in cases if not c.ok]
            detail = (f"links={len(cases)} pairs={len(paths)} "
                      f"defects={sum(len(c.observed) for c in cases)} mismatched_links={len(bad)}")
            if bad:
                c = bad[0]
                detail += (f" first={c.link} expected={sorted(c.expected)} observed={sorted(c.observed)}"
                           f" late={c.late} early={c.early}")
            results.append(AssertionResult(i, "fate_sharing", not bad and bool(paths), detail))
        else:
            results.append(AssertionResult(i, a["type"], False, "not available in sweep scenarios"))
    result.results = results
    return result
