"""
The external control agent: an in-process SDN controller.

It reads the topology from the SPB link-state database, decides per service
whether SPB or the controller itself provides connectivity, and then

* for SPB-controlled services programs the edge associations only and lets
  SPB compute everything in the core;
* for controller-owned services picks a B-VID on the external MSTI and
  installs an explicit path (or tree) hop by hop, all-or-nothing.

Address choices: point-to-point controller services send to the far edge
bridge's B-MAC; multipoint controller services use ``group_mac(isid)``;
SPB services use the per-source SPB group address.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from .dataplane import (
    Actor,
    BridgeState,
    EdgeAssociation,
    FdbEntry,
    Origin,
    Owner,
    PortId,
    check_actor,
    fdb_remove,
    fdb_write,
)
from .errors import (
    CycleRefused,
    InstallFailed,
    InvalidPath,
    NoSpbAvailable,
    PathRequired,
    PathsNotDisjoint,
    ResourceExhausted,
    UnknownAttachment,
    UnknownBinding,
    UnknownBridge,
    UnknownPort,
)
from .frames import ISID_SPACE, group_mac, spb_group_mac
from .oam import OamEngine
from .protection import DEFAULT_WTR, ProtectionGroup, ProtectionManager, check_disjoint
from .spb import Lsdb, Role, ServiceAttachment, SpbPlane, compute_spt
from .topology import (
    EXT_MSTI,
    SPBM_MSTI,
    ActiveTree,
    CycleFound,
    Disconnected,
    InvalidEdges,
    MstiTable,
    PhysicalTopology,
    allocate_vlan,
    validate_active_tree,
)


class ServiceType(Enum):
    P2P = "P2P"
    MP2MP = "MP2MP"
    ROOTED_MP = "RootedMP"


class Control(Enum):
    SPB = "Spb"
    SDN = "Sdn"


@dataclass(frozen=True)
class Attachment:
    bridge: int
    port: PortId
    svid: int
    role: Role = Role.FULL

    def __post_init__(self):
        object.__setattr__(self, "port", PortId(*self.port))
        if self.port.bridge != self.bridge:
            raise ValueError(f"port {self.port} is not on bridge {self.bridge}")

    def __str__(self):
        return f"{self.port}/{self.svid}"


@dataclass(frozen=True)
class ExplicitPath:
    bridges: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bridges", tuple(self.bridges))


@dataclass(frozen=True)
class ExplicitTree:
    edges: FrozenSet[Tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset(tuple(sorted(e)) for e in self.edges))


@dataclass(frozen=True)
class ProtectionSpec:
    path: Optional[Tuple[int, ...]] = None
    revertive: bool = True
    wtr: float = DEFAULT_WTR


@dataclass
class ServiceRequest:
    name: str
    type: ServiceType
    attachments: Tuple[Attachment, ...]
    shortest_path_ok: bool = True
    explicit: Optional[Union[ExplicitPath, ExplicitTree]] = None
    oam_interval: Optional[float] = None
    protection: Optional[ProtectionSpec] = None
    isid: Optional[int] = None
    bvid: Optional[int] = None

    def __post_init__(self):
        self.attachments = tuple(self.attachments)
        if self.type is ServiceType.P2P and len(self.attachments) != 2:
            raise ValueError("a point-to-point service has exactly two attachments")
        if len(self.attachments) < 2:
            raise ValueError("a service needs at least two attachments")
        if self.protection is not None:
            if self.type is not ServiceType.P2P or self.oam_interval is None:
                raise ValueError("protection needs a point-to-point service with OAM")
        if isinstance(self.explicit, ExplicitPath) and self.type is not ServiceType.P2P:
            raise ValueError("an explicit path only fits a point-to-point service")
        ports = [a.port for a in self.attachments]
        if len(set(ports)) != len(ports):
            raise ValueError("attachments must use distinct ports")

    @property
    def wants_sdn(self):
        return self.explicit is not None or self.protection is not None


@dataclass
class ServiceBinding:
    request: ServiceRequest
    isid: int
    bvid: int
    control: Control
    entries: List[Tuple[int, int, FdbEntry]] = field(default_factory=list)
    memberships: List[Tuple[int, int, PortId]] = field(default_factory=list)
    oam: List[int] = field(default_factory=list)
    protection: Optional[int] = None
    path: Optional[Tuple[int, ...]] = None
    tree: Optional[FrozenSet[Tuple[int, int]]] = None
    backup_bvid: Optional[int] = None
    backup_path: Optional[Tuple[int, ...]] = None

    @property
    def name(self):
        return self.request.name


@dataclass
class Pools:
    isid: Sequence[int] = range(1, ISID_SPACE - 1)
    spb_bvid: Sequence[int] = ()
    ext_bvid: Sequence[int] = ()


def _fmt_path(path):
    return ">".join(map(str, path)) if path else "-"


class _Undo:
    """Reverse log of configuration writes, replayed on failure."""

    def __init__(self):
        self.steps: List[Callable[[], None]] = []

    def push(self, fn):
        self.steps.append(fn)

    def rollback(self):
        while self.steps:
            self.steps.pop()()


class SdnController:
    def __init__(self, phys: PhysicalTopology, msti: MstiTable, bridges: Dict[int, BridgeState],
                 spb: SpbPlane, oam: Optional[OamEngine] = None,
                 protection: Optional[ProtectionManager] = None, pools: Optional[Pools] = None):
        self.phys = phys
        self.msti = msti
        self.bridges = bridges
        self.spb = spb
        self.oam = oam
        self.protection = protection
        self.pools = pools or Pools()
        self.view: Optional[Lsdb] = None
        self.bindings: Dict[str, ServiceBinding] = {}
        self.decisions: List[str] = []
        self.write_log: List[Tuple[int, str]] = []
        self.fault_injector: Optional[Callable[[int, int], None]] = None
        self._next_group = 1

    # -- view ---------------------------------------------------------------

    def sync_topology(self) -> Lsdb:
        for bid in sorted(self.phys.bridges):
            try:
                self.view = self.spb.export_lsdb(bid)
                return self.view
            except UnknownBridge:
                continue
        raise NoSpbAvailable("no SPB bridge to read the topology from")

    def _view_links(self):
        return {(a, b) for a, b, _ in self.view.links}

    def _check_path(self, path: Sequence[int]):
        path = tuple(path)
        if len(path) < 2:
            raise InvalidPath("a path needs at least two bridges")
        if len(set(path)) != len(path):
            raise InvalidPath(f"path {_fmt_path(path)} revisits a bridge")
        links = self._view_links()
        for a, b in zip(path, path[1:]):
            if tuple(sorted((a, b))) not in links:
                raise InvalidPath(f"bridges {a} and {b} share no Up link")
        return path

    def _check_tree(self, edges, required):
        result = validate_active_tree(ActiveTree(0, edges), self.phys, required)
        if isinstance(result, CycleFound):
            raise CycleRefused(f"tree contains cycle {result.edges}")
        if isinstance(result, InvalidEdges):
            raise InvalidPath(f"tree edges {result.edges} are not Up links")
        if isinstance(result, Disconnected):
            raise InvalidPath(f"tree does not reach bridges {result.bridges}")

    # -- resources ----------------------------------------------------------

    def _used_isids(self):
        return {b.isid for b in self.bindings.values()}

    def _pick_isid(self, req):
        used = self._used_isids()
        if req.isid is not None:
            if req.isid in used:
                raise ResourceExhausted(f"I-SID {req.isid} already in use")
            return req.isid
        for isid in self.pools.isid:
            if isid not in used:
                return isid
        raise ResourceExhausted("I-SID pool exhausted")

    def _ensure_vid(self, vid, msti):
        if vid not in self.msti.vid_to_msti:
            allocate_vlan(self.msti, self.bridges, vid, msti)
            self.write_log.append((0, f"allocate vid={vid} msti={msti}"))

    def _pick_spb_bvid(self, req):
        if req.bvid is not None:
            self._ensure_vid(req.bvid, SPBM_MSTI)
            if self.msti.owner_of_vid(req.bvid) is not Owner.SPB:
                raise ResourceExhausted(f"B-VID {req.bvid} is not on the SPB MSTI")
            return req.bvid
        owned = [v for v in self.pools.spb_bvid if self.msti.vid_to_msti.get(v) is not None
                 and self.msti.owner_of_vid(v) is Owner.SPB]
        if owned:
            return owned[0]
        for v in self.pools.spb_bvid:
            if v not in self.msti.vid_to_msti:
                self._ensure_vid(v, SPBM_MSTI)
                return v
        raise ResourceExhausted("no SPB B-VID available")

    def _ext_free(self, v):
        if v not in self.msti.vid_to_msti:
            return True
        return self.msti.owner_of_vid(v) is Owner.EXTERNAL_AGENT and self.msti.in_use.get(v, 0) == 0

    def _pick_ext_bvid(self, pinned=None, exclude=()):
        if pinned is not None:
            if not self._ext_free(pinned):
                raise ResourceExhausted(f"B-VID {pinned} is not a free external B-VID")
            self._ensure_vid(pinned, EXT_MSTI)
            return pinned
        for v in self.pools.ext_bvid:
            if v not in exclude and self._ext_free(v):
                self._ensure_vid(v, EXT_MSTI)
                return v
        raise ResourceExhausted("no external B-VID available")

    # -- edge programming -----------------------------------------------------

    def program_edge(self, bridge, port, svid, isid, bvid, bdst=None, actor=Actor.SDN_CONTROLLER):
        if bridge not in self.bridges:
            raise UnknownBridge(f"bridge {bridge} not declared")
        b = self.bridges[bridge]
        port = PortId(*port)
        cfg = b.port(port)
        if not cfg.access:
            raise UnknownPort(f"{port} has no customer attachment")
        owner = self.msti.owner_of_vid(bvid)
        if actor is Actor.SPB_PLANE:
            check_actor(owner, actor, f"edge association on B-VID {bvid}", b)
        if bdst is None:
            bdst = spb_group_mac(bridge, isid) if owner is Owner.SPB else group_mac(isid)
        assoc = EdgeAssociation(isid, bvid, bdst)
        if cfg.edge.get(svid) != assoc:
            cfg.edge[svid] = assoc
            self.write_log.append((bridge, f"edge port={port} svid={svid} isid={isid} bvid={bvid}"))
        return assoc

    def unprogram_edge(self, bridge, port, svid):
        cfg = self.bridges[bridge].port(PortId(*port))
        if cfg.edge.pop(svid, None) is not None:
            self.write_log.append((bridge, f"edge-remove port={PortId(*port)} svid={svid}"))

    # -- explicit forwarding ----------------------------------------------------

    def _add_member(self, bridge: BridgeState, vid, port, binding, undo):
        check_actor(self.msti.owner_of_vid(vid), Actor.SDN_CONTROLLER, f"VLAN {vid} membership", bridge)
        cfg = bridge.port(port)
        if vid in cfg.vlan_membership:
            return
        cfg.vlan_membership.add(vid)
        binding.memberships.append((bridge.id, vid, port))
        self.write_log.append((bridge.id, f"member vid={vid} port={port}"))
        undo.push(lambda: (cfg.vlan_membership.discard(vid), binding.memberships.pop()))

    def _write(self, bridge: BridgeState, vid, mac, ports, binding, undo):
        entry = FdbEntry(mac, frozenset(ports), Origin.SDN)
        old = bridge.fdbs.get(vid, {}).get(entry.mac)
        fdb_write(bridge, vid, entry, Actor.SDN_CONTROLLER)
        binding.entries.append((bridge.id, vid, entry))
        self.write_log.append((bridge.id, f"fdb fid={vid} mac={entry.mac}"))

        def revert():
            binding.entries.pop()
            if old is None:
                bridge.fdbs[vid].pop(entry.mac, None)
            else:
                bridge.fdbs[vid][entry.mac] = old
        undo.push(revert)

    def _local_ports(self, binding, bridge_id):
        return [a.port for a in binding.request.attachments if a.bridge == bridge_id]

    def install_path(self, binding: ServiceBinding, path: Sequence[int], bvid=None):
        """Program an explicit point-to-point path; all-or-nothing."""
        if binding.control is not Control.SDN:
            raise InvalidPath(f"service {binding.name} is not controller-owned")
        bvid = binding.bvid if bvid is None else bvid
        if self.view is None:
            self.sync_topology()
        path = self._check_path(path)
        self._check_tree(set(zip(path, path[1:])), path)
        undo = _Undo()
        first, last = path[0], path[-1]
        bmac_first, bmac_last = self.bridges[first].bmac, self.bridges[last].bmac
        current = None
        try:
            for i, bid in enumerate(path):
                current = bid
                if self.fault_injector is not None:
                    self.fault_injector(bid, i)
                bridge = self.bridges[bid]
                prev_port = self.phys.port_toward(bid, path[i - 1]) if i > 0 else None
                next_port = self.phys.port_toward(bid, path[i + 1]) if i + 1 < len(path) else None
                local = self._local_ports(binding, bid) if bid in (first, last) else []
                for p in [prev_port, next_port] + local:
                    if p is not None:
                        self._add_member(bridge, bvid, p, binding, undo)
                self._write(bridge, bvid, bmac_last, [next_port] if next_port else local, binding, undo)
                self._write(bridge, bvid, bmac_first, [prev_port] if prev_port else local, binding, undo)
        except Exception as exc:
            undo.rollback()
            raise InstallFailed(current, exc) from exc
        binding.path = path if bvid == binding.bvid else binding.path
        return binding

    def install_tree(self, binding: ServiceBinding, edges, bvid=None):
        """Program an explicit multipoint tree; all-or-nothing."""
        if binding.control is not Control.SDN:
            raise InvalidPath(f"service {binding.name} is not controller-owned")
        bvid = binding.bvid if bvid is None else bvid
        edges = ExplicitTree(edges).edges
        ends = sorted({a.bridge for a in binding.request.attachments})
        self._check_tree(edges, ends)
        adj = {}
        for a, b in edges:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        undo = _Undo()
        current = None
        try:
            for i, bid in enumerate(sorted(adj) if adj else ends):
                current = bid
                if self.fault_injector is not None:
                    self.fault_injector(bid, i)
                bridge = self.bridges[bid]
                tree_ports = [self.phys.port_toward(bid, n) for n in sorted(adj.get(bid, ()))]
                local = self._local_ports(binding, bid)
                for p in tree_ports + local:
                    self._add_member(bridge, bvid, p, binding, undo)
                self._write(bridge, bvid, group_mac(binding.isid), tree_ports + local, binding, undo)
                for r in ends:
                    if r == bid:
                        ports = local
                    else:
                        ports = [self.phys.port_toward(bid, _toward(adj, bid, r))]
                    self._write(bridge, bvid, self.bridges[r].bmac, ports, binding, undo)
        except Exception as exc:
            undo.rollback()
            raise InstallFailed(current, exc) from exc
        binding.tree = edges
        return binding

    def _uninstall(self, binding: ServiceBinding, bvid=None):
        keep_e, keep_m = [], []
        for bid, vid, entry in reversed(binding.entries):
            if bvid is not None and vid != bvid:
                keep_e.append((bid, vid, entry))
                continue
            bridge = self.bridges[bid]
            if entry.mac in bridge.fdbs.get(vid, {}):
                fdb_remove(bridge, vid, entry.mac, Actor.SDN_CONTROLLER)
                self.write_log.append((bid, f"fdb-remove fid={vid} mac={entry.mac}"))
        for bid, vid, port in reversed(binding.memberships):
            if bvid is not None and vid != bvid:
                keep_m.append((bid, vid, port))
                continue
            self.bridges[bid].ports[port].vlan_membership.discard(vid)
            self.write_log.append((bid, f"member-remove vid={vid} port={port}"))
        binding.entries = keep_e[::-1]
        binding.memberships = keep_m[::-1]

    def add_flow_path(self, binding: ServiceBinding, path: Sequence[int], bvid=None) -> int:
        """Install an extra explicit path for a flow-mapped subset of a service's traffic."""
        bvid = self._pick_ext_bvid(bvid, exclude={binding.bvid, binding.backup_bvid})
        self.msti.acquire(bvid)
        try:
            self.install_path(binding, path, bvid)
        except Exception:
            self.msti.release(bvid)
            raise
        return bvid

    # -- service lifecycle ------------------------------------------------------

    def _check_attachments(self, req):
        for a in req.attachments:
            if a.bridge not in self.bridges:
                raise UnknownBridge(f"bridge {a.bridge} not declared")
            if not self.bridges[a.bridge].port(a.port).access:
                raise UnknownPort(f"{a.port} has no customer attachment")

    def _p2p_path(self, req):
        a, b = req.attachments[0].bridge, req.attachments[1].bridge
        if isinstance(req.explicit, ExplicitPath):
            path = tuple(req.explicit.bridges)
            if (path[0], path[-1]) == (b, a):
                path = path[::-1]
            if (path[0], path[-1]) != (a, b):
                raise InvalidPath(f"path {_fmt_path(path)} does not join bridges {a} and {b}")
            return path
        path = compute_spt(self.view, a).path_from_root(b)
        if path is None:
            raise InvalidPath(f"bridges {a} and {b} are not connected")
        return tuple(path)

    def _disjoint_path(self, working):
        a, b = working[0], working[-1]
        banned = {tuple(sorted(e)) for e in zip(working, working[1:])}
        pruned = replace(self.view, links=tuple(l for l in self.view.links if (l[0], l[1]) not in banned))
        path = compute_spt(pruned, a).path_from_root(b)
        if path is None:
            raise PathsNotDisjoint(f"no link-disjoint alternative to {_fmt_path(working)}")
        return tuple(path)

    def setup_service(self, req: ServiceRequest) -> ServiceBinding:
        if req.name in self.bindings:
            raise ValueError(f"service {req.name} already exists")
        self._check_attachments(req)
        if not req.wants_sdn and not req.shortest_path_ok:
            raise PathRequired(f"service {req.name} refuses shortest paths but names no path")
        isid = self._pick_isid(req)
        if req.wants_sdn:
            binding = self._setup_sdn(req, isid)
        else:
            binding = self._setup_spb(req, isid)
        self.bindings[req.name] = binding
        path = "spb" if binding.control is Control.SPB else (
            _fmt_path(binding.path) if binding.path else "tree:" + ",".join(f"{a}-{b}" for a, b in sorted(binding.tree)))
        line = f"service={req.name} control={binding.control.value} isid={isid} bvid={binding.bvid} path={path}"
        if binding.backup_path:
            line += f" protection={_fmt_path(binding.backup_path)}@{binding.backup_bvid}"
        self.decisions.append(line)
        return binding

    def _setup_spb(self, req, isid):
        bvid = self._pick_spb_bvid(req)
        binding = ServiceBinding(req, isid, bvid, Control.SPB)
        for a in req.attachments:
            self.program_edge(a.bridge, a.port, a.svid, isid, bvid)
        self.msti.acquire(bvid)
        for a in req.attachments:
            self.spb.advertise(a.bridge, ServiceAttachment(a.bridge, isid, bvid, a.role))
        if req.oam_interval is not None and self.oam is not None:
            ma = self.oam.create_ma(isid, bvid, req.oam_interval,
                                    [(a.bridge, a.port, a.svid) for a in req.attachments])
            binding.oam.append(ma.id)
        return binding

    def _program_sdn_edges(self, binding, bvid, undo):
        req = binding.request
        for a in req.attachments:
            if req.type is ServiceType.P2P:
                other = next(x for x in req.attachments if x is not a)
                bdst = self.bridges[other.bridge].bmac
            else:
                bdst = group_mac(binding.isid)
            cfg = self.bridges[a.bridge].ports[a.port]
            old = cfg.edge.get(a.svid)
            self.program_edge(a.bridge, a.port, a.svid, binding.isid, bvid, bdst)
            undo.push(lambda c=cfg, s=a.svid, o=old: c.edge.__setitem__(s, o) if o else c.edge.pop(s, None))

    def _setup_sdn(self, req, isid):
        self.sync_topology()
        bvid = self._pick_ext_bvid(req.bvid)
        binding = ServiceBinding(req, isid, bvid, Control.SDN)
        if req.type is ServiceType.P2P:
            path = self._p2p_path(req)
            backup = None
            if req.protection is not None:
                backup = tuple(req.protection.path) if req.protection.path else self._disjoint_path(path)
                if (backup[0], backup[-1]) == (path[-1], path[0]):
                    backup = backup[::-1]
                if (backup[0], backup[-1]) != (path[0], path[-1]):
                    raise InvalidPath("protection path must join the same endpoints")
                check_disjoint(path, backup)
                self._check_path(backup)
        else:
            if not isinstance(req.explicit, ExplicitTree):
                raise PathRequired(f"multipoint service {req.name} needs an explicit tree")
            path = None
        undo = _Undo()
        acquired = []
        try:
            if path is not None:
                self.install_path(binding, path)
            else:
                self.install_tree(binding, req.explicit.edges)
            undo.push(lambda: self._uninstall(binding))
            self.msti.acquire(bvid)
            acquired.append(bvid)
            if req.protection is not None:
                pbvid = self._pick_ext_bvid(exclude={bvid})
                self.install_path(binding, backup, pbvid)
                undo.push(lambda: self._uninstall(binding, pbvid))
                self.msti.acquire(pbvid)
                acquired.append(pbvid)
                binding.backup_bvid, binding.backup_path = pbvid, backup
            self._program_sdn_edges(binding, bvid, undo)
        except Exception:
            undo.rollback()
            for v in acquired:
                self.msti.release(v)
            raise
        ends = [(a.bridge, a.port, a.svid) for a in req.attachments]
        if req.oam_interval is not None and self.oam is not None:
            binding.oam.append(self.oam.create_ma(isid, bvid, req.oam_interval, ends).id)
            if binding.backup_bvid is not None:
                binding.oam.append(self.oam.create_ma(isid, binding.backup_bvid, req.oam_interval, ends).id)
        if req.protection is not None and self.protection is not None:
            group = ProtectionGroup(
                self._next_group, req.name, path, binding.backup_path, bvid, binding.backup_bvid,
                binding.oam[0], binding.oam[1], req.protection.revertive, req.protection.wtr)
            self._next_group += 1
            self.protection.add(group)
            binding.protection = group.id
        return binding

    def select_bvid(self, binding: ServiceBinding, bvid):
        """Point every endpoint's edge association at ``bvid`` (protection selector)."""
        for a in binding.request.attachments:
            cfg = self.bridges[a.bridge].ports[a.port]
            assoc = cfg.edge.get(a.svid)
            if assoc is not None and assoc.bvid != bvid:
                cfg.edge[a.svid] = replace(assoc, bvid=bvid)
                self.write_log.append((a.bridge, f"select port={a.port} svid={a.svid} bvid={bvid}"))

    def active_bvid(self, binding: ServiceBinding):
        a = binding.request.attachments[0]
        assoc = self.bridges[a.bridge].ports[a.port].edge.get(a.svid)
        return assoc.bvid if assoc is not None else None

    def binding(self, name) -> ServiceBinding:
        try:
            return self.bindings[name]
        except KeyError:
            raise UnknownBinding(f"no service {name}") from None

    def teardown_service(self, binding):
        name = binding if isinstance(binding, str) else binding.name
        b = self.binding(name)
        if self.oam is not None:
            for ma in b.oam:
                self.oam.remove_ma(ma)
        if b.protection is not None and self.protection is not None:
            self.protection.remove(b.protection)
        for a in b.request.attachments:
            self.unprogram_edge(a.bridge, a.port, a.svid)
        if b.control is Control.SPB:
            for a in b.request.attachments:
                self.spb.withdraw(a.bridge, ServiceAttachment(a.bridge, b.isid, b.bvid, a.role))
            self.msti.release(b.bvid)
        else:
            vids = {vid for _, vid, _ in b.entries} | {vid for _, vid, _ in b.memberships}
            self._uninstall(b)
            for vid in sorted(vids):
                self.msti.release(vid)
        del self.bindings[name]
        return b

    def move_attachment(self, binding, frm, to, path=None):
        b = self.binding(binding if isinstance(binding, str) else binding.name)
        frm, to = PortId(*frm), PortId(*to)
        old = next((a for a in b.request.attachments if a.port == frm), None)
        if old is None:
            raise UnknownAttachment(f"service {b.name} has no attachment at {frm}")
        if frm == to:
            return b
        if to.bridge not in self.bridges:
            raise UnknownBridge(f"bridge {to.bridge} not declared")
        if not self.bridges[to.bridge].port(to).access:
            raise UnknownPort(f"{to} has no customer attachment")
        new = replace(old, bridge=to.bridge, port=to)
        atts = tuple(new if a is old else a for a in b.request.attachments)
        if b.control is Control.SDN:
            if path is None:
                raise PathRequired(f"moving controller-owned service {b.name} needs a new path")
            req = replace(b.request, attachments=atts, explicit=ExplicitPath(tuple(path)), isid=b.isid,
                          bvid=b.bvid)
            self.teardown_service(b)
            return self.setup_service(req)
        self.unprogram_edge(old.bridge, old.port, old.svid)
        if not any(a.bridge == old.bridge for a in atts):
            self.spb.withdraw(old.bridge, ServiceAttachment(old.bridge, b.isid, b.bvid, old.role))
        self.program_edge(new.bridge, new.port, new.svid, b.isid, b.bvid)
        self.spb.advertise(new.bridge, ServiceAttachment(new.bridge, b.isid, b.bvid, new.role))
        b.request = replace(b.request, attachments=atts)
        if b.oam and self.oam is not None:
            interval = self.oam.mas[b.oam[0]].interval
            for ma in b.oam:
                self.oam.remove_ma(ma)
            b.oam = [self.oam.create_ma(b.isid, b.bvid, interval,
                                        [(a.bridge, a.port, a.svid) for a in atts]).id]
        self.decisions.append(f"service={b.name} control=Spb isid={b.isid} bvid={b.bvid} path=spb moved={frm}>{to}")
        return b

    # -- reporting ----------------------------------------------------------------

    def bindings_dump(self) -> List[str]:
        lines = []
        for name in sorted(self.bindings):
            b = self.bindings[name]
            atts = ",".join(str(a) for a in b.request.attachments)
            line = (f"service={name} type={b.request.type.value} control={b.control.value} "
                    f"isid={b.isid} bvid={b.bvid} attachments={atts} entries={len(b.entries)}")
            if b.path:
                line += f" path={_fmt_path(b.path)}"
            if b.tree:
                line += " tree=" + ",".join(f"{x}-{y}" for x, y in sorted(b.tree))
            if b.oam:
                line += " oam=" + ",".join(map(str, b.oam))
            if b.protection is not None and self.protection is not None:
                g = self.protection.groups[b.protection]
                line += f" group={g.id} backup={_fmt_path(b.backup_path)}@{b.backup_bvid} state={g.state.value}"
            lines.append(line)
        return lines


def _toward(adj, start, target):
    """First hop from ``start`` toward ``target`` inside a tree."""
    prev = {target: None}
    q = deque([target])
    while q:
        u = q.popleft()
        for v in sorted(adj.get(u, ())):
            if v not in prev:
                prev[v] = u
                q.append(v)
    if start not in prev:
        raise InvalidPath(f"bridge {target} unreachable from {start} in the tree")
    return prev[start]
