"""
Continuity checking between maintenance end points (MEPs).

A MEP sits on a customer-facing port of an edge bridge (an "up" MEP).  Its
CCMs are built as ordinary customer frames addressed to the CFM group MAC,
encapsulated with the monitored service's I-SID and the association's
B-VID, and then pushed through the normal ingress/relay/egress pipeline.
The receiving MEP takes them off the data path at egress of its port, so
CCMs share every forwarding decision with the service's data frames.

A peer is declared in defect once no CCM from it has arrived for three
intervals; each arrival re-arms a deadline timer, so the defect is raised
at most three intervals after the last CCM that got through.

PDU layout (big-endian, frame payload)::

    opcode:u16 = 0x0001 | ma id:u32 | mep id:u16 | sequence:u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple

from .dataplane import BridgeState, PortId
from .frames import CFM_GROUP_MAC, Frame, ITag, btag, encapsulate_pbb, stag
from .simnet.engine import TIME_QUANTUM, EventKind, Simulator
from .simnet.trace import fmt_time

LOSS_THRESHOLD = 3
CCM_OPCODE = 0x0001
_PDU = struct.Struct(">HIHI")


class CcmPdu(NamedTuple):
    ma: int
    mep: int
    seq: int


def ccm_pdu(ma_id, mep_id, seq) -> bytes:
    return _PDU.pack(CCM_OPCODE, ma_id, mep_id, seq & 0xFFFFFFFF)


def parse_ccm(payload: bytes) -> Optional[CcmPdu]:
    if len(payload) != _PDU.size:
        return None
    op, ma, mep, seq = _PDU.unpack(payload)
    return CcmPdu(ma, mep, seq) if op == CCM_OPCODE else None


def is_ccm(frame: Frame) -> bool:
    return frame.customer.dst == CFM_GROUP_MAC


@dataclass
class Mep:
    ma: int
    id: int
    bridge: int
    port: PortId
    svid: int
    last_rx: Dict[int, float] = field(default_factory=dict)
    defect: Dict[int, bool] = field(default_factory=dict)
    seq: int = 0
    emitted: int = 0
    received: int = 0


@dataclass
class MaintenanceAssociation:
    id: int
    isid: int
    bvid: int
    interval: float
    meps: Dict[int, Mep] = field(default_factory=dict)
    start: float = 0.0
    active: bool = True

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("CCM interval must be positive")


class DefectEvent(NamedTuple):
    ma: int
    mep: int
    peer: int
    raised: bool
    time: float

    def line(self):
        what = "defect-raised" if self.raised else "defect-cleared"
        return f"OAM {what} ma={self.ma} mep={self.mep} peer={self.peer} t={fmt_time(self.time)}"


def ccm_frame(ma: MaintenanceAssociation, mep: Mep, seq: int, bsrc, bdst) -> Frame:
    inner = Frame(CFM_GROUP_MAC, bsrc, (stag(mep.svid, 7),), payload=ccm_pdu(ma.id, mep.id, seq))
    return encapsulate_pbb(inner, bdst, bsrc, btag(ma.bvid, 7), ITag(ma.isid, 7))


def ccm_receive(mep: Mep, pdu: CcmPdu, now) -> List[DefectEvent]:
    """Record a peer CCM; clears the peer's defect if it was set."""
    mep.received += 1
    mep.last_rx[pdu.mep] = now
    if mep.defect.get(pdu.mep):
        mep.defect[pdu.mep] = False
        return [DefectEvent(mep.ma, mep.id, pdu.mep, False, now)]
    mep.defect.setdefault(pdu.mep, False)
    return []


def defect_scan(mep: Mep, interval, now) -> List[DefectEvent]:
    out = []
    limit = LOSS_THRESHOLD * interval - TIME_QUANTUM
    for peer in sorted(mep.last_rx):
        if not mep.defect.get(peer) and now - mep.last_rx[peer] >= limit:
            mep.defect[peer] = True
            out.append(DefectEvent(mep.ma, mep.id, peer, True, now))
    return out


class OamEngine:
    """Runs MEP timers and hands CCMs between the data plane and MEP state."""

    def __init__(self, sim: Simulator, bridges: Mapping[int, BridgeState],
                 emit: Callable[[int, PortId, Frame], None], log: Optional[Callable[[str], None]] = None):
        self.sim = sim
        self.bridges = bridges
        self.emit = emit
        self.log = log or (lambda line: None)
        self.mas: Dict[int, MaintenanceAssociation] = {}
        self.meps_at: Dict[PortId, List[Mep]] = {}
        self.listeners: List[Callable[[DefectEvent], None]] = []
        self.events: List[DefectEvent] = []
        self.mismatches = 0
        self._timers: Dict[Tuple[int, int, int], object] = {}
        self._next_id = 1

    def new_ma_id(self):
        while self._next_id in self.mas:
            self._next_id += 1
        return self._next_id

    def create_ma(self, isid, bvid, interval, endpoints, ma_id=None, start=None) -> MaintenanceAssociation:
        """``endpoints``: (bridge, port, svid) per MEP; MEP ids are 1..n in order."""
        if len(endpoints) < 2:
            raise ValueError("a maintenance association needs at least two MEPs")
        ma_id = self.new_ma_id() if ma_id is None else ma_id
        if ma_id in self.mas:
            raise ValueError(f"MA {ma_id} already exists")
        start = self.sim.now if start is None else start
        ma = MaintenanceAssociation(ma_id, isid, bvid, interval, start=start)
        for i, (bridge, port, svid) in enumerate(endpoints, 1):
            ma.meps[i] = Mep(ma_id, i, bridge, PortId(*port), svid)
        for mep in ma.meps.values():
            for peer in ma.meps:
                if peer != mep.id:
                    mep.last_rx[peer] = start
                    mep.defect[peer] = False
                    self._arm(ma, mep, peer, start)
            self.meps_at.setdefault(mep.port, []).append(mep)
            self.sim.schedule(start, EventKind.TIMER, lambda m=mep: self._tick(ma, m, 0))
        self.mas[ma_id] = ma
        return ma

    def remove_ma(self, ma_id):
        ma = self.mas.pop(ma_id, None)
        if ma is None:
            return
        ma.active = False
        for mep in ma.meps.values():
            self.meps_at[mep.port].remove(mep)
            for peer in mep.last_rx:
                Simulator.cancel(self._timers.pop((ma_id, mep.id, peer), None))

    def _arm(self, ma, mep, peer, last):
        key = (ma.id, mep.id, peer)
        Simulator.cancel(self._timers.get(key))
        self._timers[key] = self.sim.schedule(
            last + LOSS_THRESHOLD * ma.interval, EventKind.TIMER, lambda: self._deadline(ma, mep))

    def _deadline(self, ma, mep):
        if ma.active:
            self._publish(defect_scan(mep, ma.interval, self.sim.now))

    def _tick(self, ma: MaintenanceAssociation, mep: Mep, k: int):
        if not ma.active:
            return
        mep.seq += 1
        mep.emitted += 1
        bridge = self.bridges[mep.bridge]
        assoc = bridge.ports[mep.port].edge.get(mep.svid)
        if assoc is not None:
            self.emit(mep.bridge, mep.port, ccm_frame(ma, mep, mep.seq, bridge.bmac, assoc.bdst))
        self.sim.schedule(ma.start + (k + 1) * ma.interval, EventKind.TIMER,
                          lambda: self._tick(ma, mep, k + 1))

    def receive(self, port: PortId, frame: Frame) -> bool:
        """Deliver a CCM leaving ``port``; False when no MEP sits there."""
        meps = self.meps_at.get(PortId(*port))
        if not meps:
            return False
        pdu = parse_ccm(frame.customer.payload)
        mep = next((m for m in meps if pdu is not None and m.ma == pdu.ma), None)
        if mep is None:
            self.mismatches += 1
            return True
        if pdu.mep == mep.id or pdu.mep not in mep.last_rx:
            return True
        ma = self.mas[mep.ma]
        self._publish(ccm_receive(mep, pdu, self.sim.now))
        self._arm(ma, mep, pdu.mep, self.sim.now)
        return True

    def _publish(self, events):
        for ev in events:
            self.events.append(ev)
            self.log(ev.line())
            for listener in list(self.listeners):
                listener(ev)
