"""
A simulated bridged network: bridges, links, hosts, both control planes,
OAM and protection, all driven by one event loop.

Frame lifecycle per bridge: ingress action set -> learning -> relay ->
egress action set per output port -> strict-priority queue.  Queues are
drained in a follow-up event at the same instant, so higher priority
frames leave first.  Transmission checks link state at send time; frames
already in flight arrive even if the link fails meanwhile.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..controller import Pools, SdnController
from ..dataplane import (
    BridgeState,
    Consumed,
    Drop,
    DropReason,
    PortConfig,
    PortId,
    egress_process,
    fdb_dump,
    ingress_process,
    learn,
    relay,
)
from ..frames import Frame, MacAddress, bridge_mac, ctag, push_tag, stag, wire_size
from ..oam import OamEngine, is_ccm
from ..protection import ProtectionManager
from ..spb import DEFAULT_CONVERGENCE_DELAY, SpbPlane, lsdb_dump
from ..topology import DEFAULT_LINK_DELAY, LinkState, MstiTable, PhysicalTopology, allocate_vlan, topology_dump
from .engine import EventKind, Simulator
from .trace import Trace, fmt_time

HOST_ACCESS_DELAY = 0.0
OAM_PKT = "ccm"


@dataclass(frozen=True)
class Host:
    name: str
    bridge: int
    port: PortId
    mac: MacAddress


@dataclass(frozen=True)
class Delivery:
    pkt: int
    host: str
    time: float
    frame: Frame
    path: Tuple[int, ...]


@dataclass(frozen=True)
class DropRecord:
    pkt: object
    time: float
    bridge: int
    port: Optional[PortId]
    reason: DropReason


class Network:
    def __init__(self, convergence_delay=DEFAULT_CONVERGENCE_DELAY, trace: Optional[Trace] = None,
                 pools: Optional[Pools] = None):
        self.sim = Simulator()
        self.trace = trace if trace is not None else Trace()
        self.phys = PhysicalTopology()
        self.msti = MstiTable()
        self.bridges: Dict[int, BridgeState] = {}
        self.names: Dict[int, str] = {}
        self.hosts: Dict[str, Host] = {}
        self.host_at: Dict[PortId, Host] = {}
        self.spb = SpbPlane(self.phys, self.msti, self.bridges, defer=self._defer, delay=convergence_delay)
        self.oam = OamEngine(self.sim, self.bridges, self.emit_local, log=self.trace.event)
        self.protection = ProtectionManager(self.sim, self._select, log=self.trace.event)
        self.oam.listeners.append(self.protection.on_defect)
        self.controller = SdnController(self.phys, self.msti, self.bridges, self.spb,
                                        self.oam, self.protection, pools)
        self.deliveries: List[Delivery] = []
        self.drops: List[DropRecord] = []
        self.injected: Dict[int, Tuple[str, float, Frame]] = {}
        self.ccm_consumed = 0
        self.link_tx: Dict[PortId, List[int]] = {}  # port -> [frames, bytes] sent onto its link
        self._pkt = 0
        self._drain_pending = set()

    # -- construction --------------------------------------------------------

    def add_bridge(self, bridge_id, bmac=None, name=None) -> BridgeState:
        bmac = bridge_mac(bridge_id) if bmac is None else MacAddress(bmac)
        self.phys.add_bridge(bridge_id, bmac)
        bridge = self.bridges[bridge_id] = BridgeState(bridge_id, bmac)
        self.names[bridge_id] = name or str(bridge_id)
        return bridge

    def add_link(self, a, b, metric=1, delay=DEFAULT_LINK_DELAY):
        link = self.phys.add_link(a, b, metric, delay)
        for end in (link.a, link.b):
            self.bridges[end.bridge].add_port(end.index)
        return link

    def add_host(self, name, bridge, port, mac) -> Host:
        pid = PortId(bridge, port)
        if pid in self.host_at or name in self.hosts:
            raise ValueError(f"host {name} or port {pid} already taken")
        self.bridges[bridge].add_port(port, PortConfig(
            ingress_filtering=False, egress_filtering=True, decap=True, access=True))
        host = Host(name, bridge, pid, MacAddress(mac))
        self.hosts[name] = self.host_at[pid] = host
        return host

    def allocate_vlan(self, vid, msti):
        allocate_vlan(self.msti, self.bridges, vid, msti)

    def bootstrap(self):
        """Initial SPB convergence, applied at once."""
        self.spb.apply()

    # -- control hooks -----------------------------------------------------------

    def _defer(self, delay, fn):
        self.sim.schedule_in(delay, EventKind.CONTROL_OP, fn)

    def _select(self, group, bvid):
        binding = self.controller.bindings.get(group.service)
        if binding is not None:
            self.controller.select_bvid(binding, bvid)
            self.trace.event(f"PROT group={group.id} select bvid={bvid} t={fmt_time(self.sim.now)}")

    def set_link(self, a, b, state: LinkState, at=None):
        link = self.phys.link(a, b)

        def change():
            if self.phys.set_link_state(link, state):
                self.trace.event(f"LINK {link.a} {link.b} state={state.value} t={fmt_time(self.sim.now)}")
        if at is None:
            change()
        else:
            self.sim.schedule(at, EventKind.LINK_CHANGE, change)
        return link

    def at(self, t, fn, kind=EventKind.SCENARIO_ACTION):
        return self.sim.schedule(t, kind, fn)

    def run_until(self, t):
        return self.sim.run_until(t)

    # -- traffic -------------------------------------------------------------------

    def make_frame(self, src_host, dst, svid=None, cvid=None, pcp=0, payload=b"") -> Frame:
        host = self.hosts[src_host]
        frame = Frame(MacAddress(dst), host.mac, (), payload=payload)
        if cvid is not None:
            frame = push_tag(frame, ctag(cvid, pcp))
        if svid is not None:
            frame = push_tag(frame, stag(svid, pcp))
        return frame

    def inject(self, host_name, frame: Frame, at=None) -> int:
        host = self.hosts[host_name]
        self._pkt += 1
        pkt = self._pkt
        t = self.sim.now if at is None else at
        self.injected[pkt] = (host_name, t, frame)
        self.sim.schedule(t + HOST_ACCESS_DELAY, EventKind.FRAME_ARRIVAL,
                          lambda: self._arrive(host.bridge, host.port, frame, pkt, ()))
        return pkt

    def emit_local(self, bridge_id, port, frame: Frame):
        """Entry point for frames generated inside a bridge port (CCMs)."""
        self._arrive(bridge_id, PortId(*port), frame, OAM_PKT, ())

    def _traced(self, pkt):
        return pkt != OAM_PKT or self.trace.oam_frames

    def _drop(self, pkt, bridge, port, reason, frame, path):
        now = self.sim.now
        if pkt != OAM_PKT:
            self.drops.append(DropRecord(pkt, now, bridge, port, reason))
        if self._traced(pkt):
            self.trace.frame(now, pkt, "drop", bridge, port, frame, reason=reason.value, path=path)

    def _arrive(self, bid, port: PortId, frame: Frame, pkt, path):
        now = self.sim.now
        bridge = self.bridges[bid]
        path = path + (bid,)
        traced = self._traced(pkt)
        if traced:
            self.trace.frame(now, pkt, "ingress", bid, port, frame)
        res = ingress_process(bridge, port, frame, now)
        if isinstance(res, Drop):
            self._drop(pkt, bid, port, res.reason, frame, path)
            return
        frame, vid = res.frame, res.vid
        learn(bridge, port, frame, vid, now)
        outs = sorted(relay(bridge, port, frame, vid))
        if not outs:
            self._drop(pkt, bid, None, DropReason.NO_ROUTE, frame, path)
            return
        if traced:
            self.trace.frame(now, pkt, "relay", bid, ",".join(map(str, outs)), frame)
        for out in outs:
            cfg = bridge.ports[out]
            intercept = is_ccm if cfg.access else None
            eg = egress_process(bridge, out, frame, vid, intercept)
            if isinstance(eg, Drop):
                self._drop(pkt, bid, out, eg.reason, frame, path)
            elif isinstance(eg, Consumed):
                if self.oam.receive(out, eg.frame):
                    self.ccm_consumed += 1
                else:
                    self._drop(pkt, bid, out, DropReason.NO_MEP, frame, path)
            else:
                if traced:
                    self.trace.frame(now, pkt, "egress", bid, out, eg.frame)
                bridge.queues[out].enqueue((eg.frame, pkt, path), eg.queue)
                if out not in self._drain_pending:
                    self._drain_pending.add(out)
                    self.sim.schedule(now, EventKind.FRAME_ARRIVAL, lambda o=out: self._drain(o))

    def _drain(self, port: PortId):
        self._drain_pending.discard(port)
        now = self.sim.now
        for frame, pkt, path in self.bridges[port.bridge].queues[port].drain():
            host = self.host_at.get(port)
            if host is not None:
                if pkt != OAM_PKT:
                    self.deliveries.append(Delivery(pkt, host.name, now, frame, path))
                if self._traced(pkt):
                    self.trace.frame(now, pkt, "deliver", host.name, port, frame, path=path)
                continue
            link = self.phys.link_at(port)
            if link is None:
                self._drop(pkt, port.bridge, port, DropReason.NO_HOST, frame, path)
                continue
            if not link.up:
                self._drop(pkt, port.bridge, port, DropReason.LINK_DOWN, frame, path)
                continue
            sent = self.link_tx.setdefault(port, [0, 0])
            sent[0] += 1
            sent[1] += wire_size(frame)
            far = link.far_end(port)
            self.sim.schedule(now + link.delay, EventKind.FRAME_ARRIVAL,
                              lambda f=frame, p=pkt, pa=path, far=far: self._arrive(far.bridge, far, f, p, pa))

    # -- dumps -------------------------------------------------------------------

    def fdb_dump(self) -> List[str]:
        lines = []
        for bid in sorted(self.bridges):
            lines += [f"bridge={bid} {line}" for line in fdb_dump(self.bridges[bid], self.sim.now)]
        return lines

    def topology_dump(self) -> List[str]:
        return topology_dump(self.phys)

    def links_dump(self) -> List[str]:
        """Per-direction transmit counters; the controller exposes but does not act on them."""
        lines = []
        for _, link in sorted(self.phys.links.items()):
            for near in (link.a, link.b):
                frames, nbytes = self.link_tx.get(near, (0, 0))
                lines.append(f"link={near} -> {link.far_end(near)} state={link.state.value} frames={frames} bytes={nbytes}")
        return lines

    def lsdb_dump(self) -> List[str]:
        return lsdb_dump(self.spb.lsdb)

    def bindings_dump(self) -> List[str]:
        return self.controller.bindings_dump()
