"""
Per-bridge data plane: ingress action set, relay, egress action set.

Ingress order:  classify -> VID translation -> ingress filtering ->
                PBB encapsulation (edge rule / flow rule) -> metering
Egress order:   admin state -> egress filtering -> MEP interception ->
                PBB decapsulation -> VID translation -> strict-priority queue

Encapsulation happens on ingress at customer ports that carry edge
associations; decapsulation happens on egress at ports with ``decap`` set.
Forwarding tables are per FID (FID == VID here) and each FID is owned by
exactly one control plane; every write is checked against that owner.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple

from .errors import OwnershipViolation, UnknownPort, UnknownVid
from .flowmap import MapToBvid, MapToFlowHash, MapToIsid, classify, flow_hash
from .frames import (
    Frame,
    ITag,
    MacAddress,
    btag,
    ctag,
    decapsulate_pbb,
    encapsulate_pbb,
    group_mac,
    push_tag,
    translate_vid,
    valid_service_vid,
    wire_size,
)

DEFAULT_AGING_TIME = 300.0
NUM_QUEUES = 8


class Origin(Enum):
    LEARNED = "Learned"
    SPB = "Spb"
    SDN = "Sdn"
    STATIC = "Static"


class Owner(Enum):
    SPB = "Spb"
    EXTERNAL_AGENT = "ExternalAgent"


class Actor(Enum):
    SPB_PLANE = "SpbPlane"
    SDN_CONTROLLER = "SdnController"
    MANAGEMENT = "Management"


class UnknownPolicy(Enum):
    FLOOD = "Flood"
    DROP = "Drop"


class DropReason(Enum):
    INGRESS_FILTERED = "IngressFiltered"
    METER_EXCEEDED = "MeterExceeded"
    PORT_DOWN = "PortDown"
    EGRESS_FILTERED = "EgressFiltered"
    NO_ROUTE = "NoRoute"
    LINK_DOWN = "LinkDown"
    NO_HOST = "NoHost"
    NO_MEP = "NoMep"


class PortId(NamedTuple):
    bridge: int
    index: int

    def __str__(self):
        return f"{self.bridge}.{self.index}"


@dataclass(frozen=True)
class EdgeAssociation:
    """Customer S-VID -> (I-SID, B-VID) mapping with the backbone destination."""

    isid: int
    bvid: int
    bdst: MacAddress


@dataclass(frozen=True)
class MeterConfig:
    rate: float  # bytes per simulated second
    burst: int  # bucket depth in bytes
    max_frame: int = 1500

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("meter rate must be positive")
        if self.burst < self.max_frame:
            raise ValueError("meter burst must cover the maximum frame size")


class TokenBucket:
    """Single-rate token bucket in simulated time, starting full."""

    def __init__(self, config: MeterConfig, now=0.0):
        self.rate = config.rate
        self.burst = config.burst
        self.tokens = float(config.burst)
        self.last = now

    def admit(self, nbytes, now):
        if now > self.last:
            self.tokens = min(self.burst, self.tokens + self.rate * (now - self.last))
            self.last = now
        if nbytes <= self.tokens:
            self.tokens -= nbytes
            return True
        return False


@dataclass
class PortConfig:
    vlan_membership: Set[int] = field(default_factory=set)
    ingress_filtering: bool = True
    egress_filtering: bool = True
    pvid: int = 1
    default_pcp: int = 0
    ingress_vid_translation: Dict[int, int] = field(default_factory=dict)
    egress_vid_translation: Dict[int, int] = field(default_factory=dict)
    edge: Dict[int, EdgeAssociation] = field(default_factory=dict)
    decap: bool = False
    meter: Optional[MeterConfig] = None
    learning_enabled: bool = True
    admin_up: bool = True
    access: bool = False
    flow_rules: tuple = ()
    hash_range: Tuple[int, ...] = ()

    def __post_init__(self):
        self.check()

    def check(self):
        if not valid_service_vid(self.pvid):
            raise ValueError(f"pvid {self.pvid} outside 1..4094")
        for name in ("ingress_vid_translation", "egress_vid_translation"):
            table = getattr(self, name)
            if len(set(table.values())) != len(table):
                raise ValueError(f"{name} is not injective")

    def is_member(self, vid):
        if vid in self.vlan_membership:
            return True
        return any(a.bvid == vid for a in self.edge.values())

    def edge_isids(self):
        return {a.isid for a in self.edge.values()}


@dataclass(frozen=True)
class FdbEntry:
    mac: MacAddress
    ports: FrozenSet[PortId]
    origin: Origin
    timestamp: float = 0.0  # last refresh, meaningful for Learned entries

    def __post_init__(self):
        object.__setattr__(self, "mac", MacAddress(self.mac))
        object.__setattr__(self, "ports", frozenset(self.ports))


@dataclass
class Fid:
    id: int
    owner: Owner
    vids: Set[int] = field(default_factory=set)
    learning: bool = False


class EgressQueues:
    """Eight strict-priority FIFO queues indexed by PCP."""

    def __init__(self):
        self._queues = [deque() for _ in range(NUM_QUEUES)]

    def enqueue(self, item, priority):
        self._queues[priority].append(item)

    def __len__(self):
        return sum(len(q) for q in self._queues)

    def drain(self):
        out = []
        for q in reversed(self._queues):
            while q:
                out.append(q.popleft())
        return out


@dataclass
class BridgeState:
    id: int
    bmac: MacAddress
    ports: Dict[PortId, PortConfig] = field(default_factory=dict)
    fdbs: Dict[int, Dict[MacAddress, FdbEntry]] = field(default_factory=dict)
    fids: Dict[int, Fid] = field(default_factory=dict)
    vid_to_fid: Dict[int, int] = field(default_factory=dict)
    unknown_policy: Dict[int, UnknownPolicy] = field(default_factory=dict)
    flood_tree: Dict[int, FrozenSet[PortId]] = field(default_factory=dict)
    aging_time: float = DEFAULT_AGING_TIME
    meters: Dict[PortId, TokenBucket] = field(default_factory=dict)
    queues: Dict[PortId, EgressQueues] = field(default_factory=dict)
    violations: int = 0
    management_log: List[str] = field(default_factory=list)
    lookup_log: Optional[list] = None

    def __post_init__(self):
        self.bmac = MacAddress(self.bmac)

    def add_port(self, index, config: Optional[PortConfig] = None) -> PortId:
        pid = PortId(self.id, index)
        self.ports[pid] = config if config is not None else PortConfig()
        self.queues[pid] = EgressQueues()
        return pid

    def port(self, pid) -> PortConfig:
        try:
            return self.ports[pid]
        except KeyError:
            raise UnknownPort(f"bridge {self.id} has no port {pid}") from None

    def assign_vid(self, vid, owner: Owner, learning=False):
        """Bind ``vid`` to its own FID under ``owner``; clears entries on owner change."""
        old = self.fids.get(vid)
        if old is not None and old.owner is not owner:
            self.fdbs[vid] = {}
        fid = Fid(vid, owner, {vid}, learning and owner is Owner.SPB)
        self.fids[vid] = fid
        self.vid_to_fid[vid] = vid
        self.fdbs.setdefault(vid, {})
        return fid

    def fid_for(self, vid) -> Optional[Fid]:
        fid = self.vid_to_fid.get(vid)
        return None if fid is None else self.fids[fid]

    def members(self, vid) -> Set[PortId]:
        return {p for p, cfg in self.ports.items() if cfg.is_member(vid)}

    def policy_for(self, vid) -> UnknownPolicy:
        if vid in self.unknown_policy:
            return self.unknown_policy[vid]
        fid = self.fid_for(vid)
        if fid is not None and fid.owner is Owner.EXTERNAL_AGENT:
            return UnknownPolicy.DROP
        return UnknownPolicy.FLOOD


# -- outcomes ------------------------------------------------------------------

@dataclass(frozen=True)
class Drop:
    reason: DropReason


@dataclass(frozen=True)
class Admitted:
    frame: Frame
    vid: int


@dataclass(frozen=True)
class Transmit:
    frame: Frame
    queue: int


@dataclass(frozen=True)
class Consumed:
    """Frame taken off the data path by a port function (a MEP)."""

    frame: Frame


# -- ingress -------------------------------------------------------------------

def edge_association(bridge: BridgeState, cfg: PortConfig, frame: Frame) -> Optional[EdgeAssociation]:
    default = cfg.edge.get(frame.outer_vid)
    rule = classify(cfg.flow_rules, frame) if cfg.flow_rules else None
    if rule is None:
        return default
    action = rule.action
    if isinstance(action, MapToIsid):
        bdst = next((a.bdst for a in cfg.edge.values() if a.isid == action.isid), group_mac(action.isid))
        return EdgeAssociation(action.isid, action.bvid, bdst)
    if default is None:
        return None
    if isinstance(action, MapToBvid):
        return replace(default, bvid=action.bvid)
    if isinstance(action, MapToFlowHash):
        return replace(default, bvid=flow_hash(frame, cfg.hash_range))
    raise TypeError(f"unknown flow action {action!r}")


def ingress_process(bridge: BridgeState, port: PortId, frame: Frame, now=0.0):
    cfg = bridge.port(port)
    if not cfg.admin_up:
        return Drop(DropReason.PORT_DOWN)
    if not frame.tags:
        frame = push_tag(frame, ctag(cfg.pvid, cfg.default_pcp))
    if cfg.ingress_vid_translation:
        frame = translate_vid(frame, cfg.ingress_vid_translation)
    vid = frame.outer_vid
    if cfg.ingress_filtering and not cfg.is_member(vid):
        return Drop(DropReason.INGRESS_FILTERED)
    if not frame.is_pbb and (cfg.edge or cfg.flow_rules):
        assoc = edge_association(bridge, cfg, frame)
        if assoc is not None:
            pcp = frame.tags[0].pcp
            frame = encapsulate_pbb(frame, assoc.bdst, bridge.bmac, btag(assoc.bvid, pcp), ITag(assoc.isid, pcp))
            vid = assoc.bvid
    if cfg.meter is not None:
        bucket = bridge.meters.get(port)
        if bucket is None:
            bucket = bridge.meters[port] = TokenBucket(cfg.meter, now)
        if not bucket.admit(wire_size(frame), now):
            return Drop(DropReason.METER_EXCEEDED)
    return Admitted(frame, vid)


def learn(bridge: BridgeState, port: PortId, frame: Frame, vid, now=0.0) -> bool:
    """Record the source address; returns True when the FDB changed."""
    cfg = bridge.port(port)
    fid = bridge.fid_for(vid)
    if not cfg.learning_enabled or fid is None or not fid.learning:
        return False
    if frame.src.is_group or frame.src == bridge.bmac:
        return False
    table = bridge.fdbs[fid.id]
    old = table.get(frame.src)
    if old is not None and old.origin is not Origin.LEARNED:
        return False
    table[frame.src] = FdbEntry(frame.src, frozenset({port}), Origin.LEARNED, now)
    return old is None or old.ports != {port}


# -- relay -------------------------------------------------------------------

def relay(bridge: BridgeState, ingress: PortId, frame: Frame, vid) -> FrozenSet[PortId]:
    fid = bridge.fid_for(vid)
    if fid is None:
        return frozenset()
    dst = frame.dst
    if bridge.lookup_log is not None:
        bridge.lookup_log.append((vid, dst))
    members = bridge.members(vid)
    entry = bridge.fdbs[fid.id].get(dst)
    if entry is not None:
        out = entry.ports & members
    elif bridge.policy_for(vid) is UnknownPolicy.DROP:
        out = set()
    else:
        tree = bridge.flood_tree.get(vid)
        if tree is None:
            out = members
        else:
            out = {p for p in members if p in tree or bridge.ports[p].access}
    return frozenset(p for p in out if p != ingress)


# -- egress --------------------------------------------------------------------

def egress_process(bridge: BridgeState, port: PortId, frame: Frame, vid,
                   intercept: Optional[Callable[[Frame], bool]] = None):
    cfg = bridge.port(port)
    if not cfg.admin_up:
        return Drop(DropReason.PORT_DOWN)
    if cfg.egress_filtering and not cfg.is_member(vid):
        return Drop(DropReason.EGRESS_FILTERED)
    if intercept is not None and intercept(frame):
        return Consumed(frame)
    if frame.is_pbb and cfg.decap:
        if cfg.edge and frame.itag.isid not in cfg.edge_isids():
            return Drop(DropReason.EGRESS_FILTERED)
        frame = decapsulate_pbb(frame)[0]
    if cfg.egress_vid_translation and frame.tags:
        frame = translate_vid(frame, cfg.egress_vid_translation)
    queue = frame.tags[0].pcp if frame.tags else cfg.default_pcp
    return Transmit(frame, queue)


# -- forwarding table control --------------------------------------------------

_ACTOR_OWNER = {Actor.SPB_PLANE: Owner.SPB, Actor.SDN_CONTROLLER: Owner.EXTERNAL_AGENT}
_ACTOR_ORIGIN = {Actor.SPB_PLANE: Origin.SPB, Actor.SDN_CONTROLLER: Origin.SDN, Actor.MANAGEMENT: Origin.STATIC}


def check_actor(owner: Owner, actor: Actor, what="", bridge: Optional[BridgeState] = None):
    """Raise OwnershipViolation unless ``actor`` may write state owned by ``owner``."""
    if actor is Actor.MANAGEMENT or _ACTOR_OWNER[actor] is owner:
        return
    if bridge is not None:
        bridge.violations += 1
    raise OwnershipViolation(actor.value, owner.value, what)


def _fid_or_raise(bridge, fid_id):
    fid = bridge.fids.get(fid_id)
    if fid is None:
        raise UnknownVid(f"bridge {bridge.id} has no FID {fid_id}")
    return fid


def fdb_write(bridge: BridgeState, fid_id, entry: FdbEntry, actor: Actor):
    fid = _fid_or_raise(bridge, fid_id)
    if entry.origin is not _ACTOR_ORIGIN[actor]:
        raise ValueError(f"{actor.value} writes {_ACTOR_ORIGIN[actor].value} entries, not {entry.origin.value}")
    check_actor(fid.owner, actor, f"FID {fid_id} on bridge {bridge.id}", bridge)
    table = bridge.fdbs[fid_id]
    old = table.get(entry.mac)
    if old is not None and old.origin is not entry.origin and actor is not Actor.MANAGEMENT \
            and old.origin is not Origin.LEARNED:
        # never overwrite the other writer's entry silently
        bridge.violations += 1
        raise OwnershipViolation(actor.value, old.origin.value, f"entry {entry.mac}")
    table[entry.mac] = entry
    if actor is Actor.MANAGEMENT:
        bridge.management_log.append(f"write fid={fid_id} mac={entry.mac}")


def fdb_remove(bridge: BridgeState, fid_id, mac, actor: Actor) -> Optional[FdbEntry]:
    fid = _fid_or_raise(bridge, fid_id)
    check_actor(fid.owner, actor, f"FID {fid_id} on bridge {bridge.id}", bridge)
    table = bridge.fdbs[fid_id]
    old = table.get(MacAddress(mac))
    if old is None:
        return None
    if old.origin is not _ACTOR_ORIGIN[actor] and old.origin is not Origin.LEARNED:
        bridge.violations += 1
        raise OwnershipViolation(actor.value, old.origin.value, f"entry {old.mac}")
    if actor is Actor.MANAGEMENT:
        bridge.management_log.append(f"remove fid={fid_id} mac={old.mac}")
    return table.pop(old.mac)


def age_fdb(bridge: BridgeState, now) -> int:
    removed = 0
    for table in bridge.fdbs.values():
        stale = [mac for mac, e in table.items()
                 if e.origin is Origin.LEARNED and now - e.timestamp > bridge.aging_time]
        for mac in stale:
            del table[mac]
        removed += len(stale)
    return removed


def forbidden_entries(bridge: BridgeState):
    """Entries whose origin contradicts the owner of their FID."""
    bad = []
    for fid_id, table in bridge.fdbs.items():
        owner = bridge.fids[fid_id].owner
        for e in table.values():
            if e.origin in (Origin.LEARNED, Origin.SPB) and owner is not Owner.SPB:
                bad.append((bridge.id, fid_id, e))
            elif e.origin is Origin.SDN and owner is not Owner.EXTERNAL_AGENT:
                bad.append((bridge.id, fid_id, e))
    return bad


def _ports_str(ports):
    return ",".join(str(p) for p in sorted(ports))


def fdb_dump(bridge: BridgeState, now=0.0) -> List[str]:
    lines = []
    for fid_id in sorted(bridge.fdbs):
        table = bridge.fdbs[fid_id]
        for mac in sorted(table):
            e = table[mac]
            age = f"{now - e.timestamp:g}" if e.origin is Origin.LEARNED else "-"
            lines.append(f"fid={fid_id} mac={e.mac} ports={_ports_str(e.ports)} origin={e.origin.value} age={age}")
    return lines


def config_dump(bridge: BridgeState) -> List[str]:
    """Port configuration as stable text, for before/after diffs."""
    lines = []
    for pid in sorted(bridge.ports):
        c = bridge.ports[pid]
        edge = ";".join(f"{s}>{a.isid}/{a.bvid}/{a.bdst}" for s, a in sorted(c.edge.items()))
        lines.append(
            f"port={pid} members={','.join(map(str, sorted(c.vlan_membership)))} "
            f"ifilter={int(c.ingress_filtering)} efilter={int(c.egress_filtering)} pvid={c.pvid} "
            f"itrans={sorted(c.ingress_vid_translation.items())} etrans={sorted(c.egress_vid_translation.items())} "
            f"edge={edge} decap={int(c.decap)} up={int(c.admin_up)} rules={len(c.flow_rules)}"
        )
    return lines
