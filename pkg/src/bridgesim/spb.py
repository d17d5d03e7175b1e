"""
Simplified shortest path bridging.

The link-state database is modeled as globally consistent: after a
convergence delay every bridge sees the Up subgraph of the physical
topology plus all advertised service attachments.  Shortest path trees are
computed with a deterministic, direction-independent tie-break so that the
path chosen from A to B is the reverse of the one chosen from B to A.

Tie-break among equal-cost paths: fewer hops first, then the lexicographically
smallest sorted sequence of bridge ids on the path.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

from .dataplane import (
    Actor,
    BridgeState,
    FdbEntry,
    Origin,
    Owner,
    PortId,
    check_actor,
    fdb_remove,
    fdb_write,
)
from .errors import UnknownBridge
from .frames import MacAddress, spb_group_mac
from .topology import MstiTable, PhysicalTopology, set_vlan_membership

DEFAULT_CONVERGENCE_DELAY = 0.1


class Role(Enum):
    FULL = "Full"
    ROOT = "Root"
    LEAF = "Leaf"


@dataclass(frozen=True)
class ServiceAttachment:
    bridge: int
    isid: int
    bvid: int
    role: Role = Role.FULL

    @property
    def key(self):
        return (self.bridge, self.isid, self.bvid)

    def sort_key(self):
        return (self.bridge, self.isid, self.bvid, self.role.value)


@dataclass(frozen=True)
class Lsdb:
    bridges: Tuple[Tuple[int, MacAddress], ...] = ()
    links: Tuple[Tuple[int, int, int], ...] = ()  # (low id, high id, metric)
    attachments: Tuple[ServiceAttachment, ...] = ()
    seq: int = 0

    def content(self):
        return (self.bridges, self.links, self.attachments)

    def bmac(self, bridge) -> MacAddress:
        return dict(self.bridges)[bridge]

    @property
    def bridge_ids(self):
        return [b for b, _ in self.bridges]

    def adjacency(self) -> Dict[int, List[Tuple[int, int]]]:
        adj = {b: [] for b, _ in self.bridges}
        for a, b, m in self.links:
            adj[a].append((b, m))
            adj[b].append((a, m))
        for b in adj:
            adj[b].sort()
        return adj


@dataclass(frozen=True)
class SptResult:
    root: int
    parent: Mapping[int, int]  # bridge -> next bridge toward the root
    cost: Mapping[int, int]

    def path_from_root(self, target) -> Optional[List[int]]:
        if target not in self.cost:
            return None
        path = [target]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path[::-1]


def path_rank(cost, path):
    """Ordering key used for tie-breaking between equal-cost paths."""
    return (cost, len(path), tuple(sorted(path)))


def compute_spt(lsdb: Lsdb, root) -> SptResult:
    adj = lsdb.adjacency()
    if root not in adj:
        raise UnknownBridge(f"bridge {root} not in LSDB")
    best = {root: (0, 1, (root,))}
    parent = {}
    done = set()
    heap = [(best[root], root)]
    while heap:
        label, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        cost, hops, ids = label
        for v, metric in adj[u]:
            if v in done:
                continue
            cand = (cost + metric, hops + 1, tuple(sorted(ids + (v,))))
            if v not in best or cand < best[v]:
                best[v] = cand
                parent[v] = u
                heapq.heappush(heap, (cand, v))
    return SptResult(root, dict(sorted(parent.items())), {b: best[b][0] for b in sorted(best)})


def _allowed(src: Role, dst: Role):
    return not (src is Role.LEAF and dst is not Role.ROOT)


def populate_fdb(lsdb: Lsdb, bridge: int, phys: PhysicalTopology,
                 local_ports: Mapping[Tuple[int, int], Set[PortId]] = None,
                 spts: Optional[Dict[int, SptResult]] = None) -> Dict[int, Dict[MacAddress, FrozenSet[PortId]]]:
    """SPB-origin forwarding state of one bridge, per B-VID: ``{bvid: {mac: ports}}``.

    ``local_ports`` maps (isid, bvid) to this bridge's customer ports.
    """
    local_ports = local_ports or {}
    if spts is None:
        spts = {}

    def spt(root):
        if root not in spts:
            spts[root] = compute_spt(lsdb, root)
        return spts[root]

    services = defaultdict(dict)
    for att in lsdb.attachments:
        services[(att.bvid, att.isid)][att.bridge] = att.role
    out: Dict[int, Dict[MacAddress, Set[PortId]]] = defaultdict(lambda: defaultdict(set))

    for (bvid, isid), roles in sorted(services.items()):
        members = sorted(roles)
        local = set(local_ports.get((isid, bvid), ()))
        # unicast toward each attached bridge, on bridges along attachment-pair paths
        for r in members:
            tree = spt(r)
            for x in members:
                if x == r or x not in tree.cost:
                    continue
                path = tree.path_from_root(x)
                if bridge in path and bridge != r:
                    out[bvid][lsdb.bmac(r)].add(phys.port_toward(bridge, tree.parent[bridge]))
        if len(members) < 2:
            continue
        # per-source multicast trees
        for s in members:
            tree = spt(s)
            targets = [t for t in members if t != s and t in tree.cost and _allowed(roles[s], roles[t])]
            ports = set()
            for t in targets:
                path = tree.path_from_root(t)
                if bridge not in path:
                    continue
                i = path.index(bridge)
                if i + 1 < len(path):
                    ports.add(phys.port_toward(bridge, path[i + 1]))
                if bridge == t:
                    ports |= local
            if bridge == s and targets:
                ports |= local
            if ports:
                out[bvid][spb_group_mac(s, isid)] |= ports
    return {bvid: {mac: frozenset(p) for mac, p in macs.items()} for bvid, macs in out.items()}


def active_edges(lsdb: Lsdb, spts: Mapping[int, SptResult]) -> Set[Tuple[int, int]]:
    """Union of all shortest path tree edges: the SPB active topology."""
    edges = set()
    for tree in spts.values():
        for child, par in tree.parent.items():
            edges.add(tuple(sorted((child, par))))
    return edges


def flood_tree_edges(lsdb: Lsdb, spts: Mapping[int, SptResult]) -> Set[Tuple[int, int]]:
    """Tree for unknown-destination floods: SPT of the lowest bridge id per partition."""
    edges = set()
    covered = set()
    for b in sorted(lsdb.bridge_ids):
        if b in covered:
            continue
        tree = spts[b]
        covered |= set(tree.cost)
        for child, par in tree.parent.items():
            edges.add(tuple(sorted((child, par))))
    return edges


def lsdb_dump(lsdb: Lsdb) -> List[str]:
    lines = [f"seq={lsdb.seq}"]
    body = [f"bridge {b} bmac={mac}" for b, mac in lsdb.bridges]
    body += [f"link {a} {b} metric={m}" for a, b, m in lsdb.links]
    body += [
        f"attach {a.bridge} isid={a.isid} bvid={a.bvid} role={a.role.value}"
        for a in lsdb.attachments
    ]
    return lines + sorted(body)


class SpbPlane:
    """The distributed control plane, one logical instance for the network."""

    def __init__(self, phys: PhysicalTopology, msti: MstiTable, bridges: Mapping[int, BridgeState],
                 defer: Optional[Callable[[float, Callable[[], None]], None]] = None,
                 delay=DEFAULT_CONVERGENCE_DELAY):
        self.phys = phys
        self.msti = msti
        self.bridges = bridges
        self.defer = defer
        self.delay = delay
        self.attachments: Dict[Tuple[int, int, int], ServiceAttachment] = {}
        self.lsdb = Lsdb()
        self.spts: Dict[int, SptResult] = {}
        self.convergences = 0
        self.writes = 0
        phys.listeners.append(self._on_topology_change)

    def _on_topology_change(self, link):
        self.converge()

    def converge(self, delay=None):
        """Schedule a convergence; without a scheduler it happens immediately."""
        delay = self.delay if delay is None else delay
        if self.defer is None:
            self.apply()
        else:
            self.defer(delay, self.apply)

    def build_lsdb(self) -> Lsdb:
        spb_vids = set(self.msti.vids_of(Owner.SPB))
        return Lsdb(
            bridges=tuple(sorted(self.phys.bridges.items())),
            links=tuple(sorted(
                (min(l.bridges), max(l.bridges), l.metric) for l in self.phys.up_links()
            )),
            attachments=tuple(sorted(
                (a for a in self.attachments.values() if a.bvid in spb_vids),
                key=ServiceAttachment.sort_key,
            )),
            seq=self.lsdb.seq,
        )

    def apply(self):
        new = self.build_lsdb()
        if new.content() != self.lsdb.content():
            self.lsdb = Lsdb(*new.content(), seq=self.lsdb.seq + 1)
            self.spts = {b: compute_spt(self.lsdb, b) for b in self.lsdb.bridge_ids}
        self.convergences += 1
        self.repopulate()

    def _local_ports(self, bridge: BridgeState):
        out = defaultdict(set)
        for pid, cfg in bridge.ports.items():
            for assoc in cfg.edge.values():
                out[(assoc.isid, assoc.bvid)].add(pid)
        return out

    def repopulate(self):
        spb_vids = self.msti.vids_of(Owner.SPB)
        active = active_edges(self.lsdb, self.spts)
        flood = flood_tree_edges(self.lsdb, self.spts)
        for bid in sorted(self.bridges):
            bridge = self.bridges[bid]
            want = populate_fdb(self.lsdb, bid, self.phys, self._local_ports(bridge), self.spts)
            for vid in spb_vids:
                fid = bridge.fid_for(vid)
                if fid is None:
                    continue
                table = bridge.fdbs[fid.id]
                desired = want.get(vid, {})
                for mac in sorted(table):
                    e = table[mac]
                    if e.origin is Origin.SPB and mac not in desired:
                        fdb_remove(bridge, fid.id, mac, Actor.SPB_PLANE)
                        self.writes += 1
                for mac in sorted(desired):
                    old = table.get(mac)
                    if old is None or old.origin is not Origin.SPB or old.ports != desired[mac]:
                        if old is not None and old.origin not in (Origin.SPB, Origin.LEARNED):
                            continue
                        fdb_write(bridge, fid.id, FdbEntry(mac, desired[mac], Origin.SPB), Actor.SPB_PLANE)
                        self.writes += 1
                members = self._edge_ports(bid, active)
                set_vlan_membership(self.msti, bridge, vid, members, Actor.SPB_PLANE)
                bridge.flood_tree[vid] = frozenset(self._edge_ports(bid, flood))

    def _edge_ports(self, bid, edges):
        ports = set()
        for a, b in edges:
            if bid in (a, b):
                ports.add(self.phys.port_toward(bid, b if a == bid else a))
        return ports

    def advertise(self, bridge, attachment: ServiceAttachment):
        check_actor(self.msti.owner_of_vid(attachment.bvid), Actor.SPB_PLANE,
                    f"attachment on B-VID {attachment.bvid}", self.bridges.get(bridge))
        if attachment.bridge != bridge:
            raise ValueError("attachment belongs to another bridge")
        self.attachments[attachment.key] = attachment
        self.converge()

    def withdraw(self, bridge, attachment: ServiceAttachment):
        if self.attachments.pop(attachment.key, None) is not None:
            self.converge()

    def export_lsdb(self, bridge) -> Lsdb:
        if bridge not in self.phys.bridges:
            raise UnknownBridge(f"bridge {bridge} does not run SPB")
        return self.lsdb
