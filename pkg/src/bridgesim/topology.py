"""
Topology layers: physical links, loop-free active trees, VLAN membership,
and the VID -> MSTI allocation that picks the control plane of each VLAN.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .dataplane import Actor, BridgeState, Owner, PortId, check_actor
from .errors import UnknownBridge, UnknownLink, UnknownMsti, UnknownVid, VlanInUse
from .frames import MacAddress, valid_service_vid

EXT_MSTI = 0xFFE
SPBM_MSTI = 1
DEFAULT_LINK_DELAY = 0.001


class LinkState(Enum):
    UP = "Up"
    DOWN = "Down"


def link_key(a: PortId, b: PortId):
    return (a, b) if a <= b else (b, a)


@dataclass
class Link:
    a: PortId
    b: PortId
    metric: int = 1
    state: LinkState = LinkState.UP
    delay: float = DEFAULT_LINK_DELAY

    def __post_init__(self):
        self.a, self.b = link_key(PortId(*self.a), PortId(*self.b))
        if self.a.bridge == self.b.bridge:
            raise ValueError("a link must connect two distinct bridges")
        if int(self.metric) != self.metric or self.metric < 1:
            raise ValueError("link metric must be an integer >= 1")

    @property
    def key(self):
        return (self.a, self.b)

    @property
    def bridges(self):
        return (self.a.bridge, self.b.bridge)

    @property
    def up(self):
        return self.state is LinkState.UP

    def far_end(self, port: PortId) -> PortId:
        return self.b if port == self.a else self.a

    def __str__(self):
        return f"{self.a}-{self.b}"


class PhysicalTopology:
    """Bridges and point-to-point links.  At most one link per bridge pair."""

    def __init__(self):
        self.bridges: Dict[int, MacAddress] = {}
        self.links: Dict[Tuple[PortId, PortId], Link] = {}
        self._by_port: Dict[PortId, Link] = {}
        self._by_pair: Dict[Tuple[int, int], Link] = {}
        self.listeners: List[Callable[[Link], None]] = []

    def add_bridge(self, bridge_id, bmac):
        self.bridges[bridge_id] = MacAddress(bmac)

    def add_link(self, a, b, metric=1, delay=DEFAULT_LINK_DELAY) -> Link:
        link = Link(PortId(*a), PortId(*b), metric, LinkState.UP, delay)
        for end in (link.a, link.b):
            if end.bridge not in self.bridges:
                raise UnknownBridge(f"bridge {end.bridge} not declared")
            if end in self._by_port:
                raise ValueError(f"port {end} already has a link")
        pair = tuple(sorted(link.bridges))
        if pair in self._by_pair:
            raise ValueError(f"bridges {pair} are already linked")
        self.links[link.key] = link
        self._by_port[link.a] = self._by_port[link.b] = link
        self._by_pair[pair] = link
        return link

    def link(self, a, b=None) -> Link:
        """Find a link by its two ports, by one port, or by two bridge ids."""
        if b is None:
            link = self._by_port.get(PortId(*a))
        elif isinstance(a, int) and isinstance(b, int):
            link = self._by_pair.get(tuple(sorted((a, b))))
        else:
            link = self.links.get(link_key(PortId(*a), PortId(*b)))
        if link is None:
            raise UnknownLink(f"no link {a} {b if b is not None else ''}".strip())
        return link

    def link_at(self, port) -> Optional[Link]:
        return self._by_port.get(PortId(*port))

    def port_toward(self, bridge, neighbor) -> PortId:
        link = self.link(bridge, neighbor)
        return link.a if link.a.bridge == bridge else link.b

    def up_links(self) -> List[Link]:
        return [l for l in self.links.values() if l.up]

    def neighbors(self, bridge) -> List[int]:
        out = []
        for l in self.up_links():
            if bridge in l.bridges:
                out.append(l.b.bridge if l.a.bridge == bridge else l.a.bridge)
        return sorted(out)

    def set_link_state(self, link: Link, state: LinkState) -> bool:
        """Update a link's state and notify listeners; returns True if it changed."""
        if link.key not in self.links:
            raise UnknownLink(f"no link {link}")
        if link.state is state:
            return False
        link.state = state
        for notify in list(self.listeners):
            notify(link)
        return True


def topology_dump(phys: PhysicalTopology) -> List[str]:
    lines = [
        f"link {l.a} {l.b} metric={l.metric} state={l.state.value}"
        for l in phys.links.values()
    ]
    return sorted(lines)


# -- MSTI allocation -----------------------------------------------------------

@dataclass
class MstiTable:
    vid_to_msti: Dict[int, int] = field(default_factory=dict)
    msti_owner: Dict[int, Owner] = field(default_factory=lambda: {SPBM_MSTI: Owner.SPB, EXT_MSTI: Owner.EXTERNAL_AGENT})
    in_use: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    spb_learning: bool = True

    def __post_init__(self):
        self.msti_owner[EXT_MSTI] = Owner.EXTERNAL_AGENT

    def owner_of_vid(self, vid) -> Owner:
        try:
            return self.msti_owner[self.vid_to_msti[vid]]
        except KeyError:
            raise UnknownVid(f"VID {vid} is not allocated") from None

    def vids_of(self, owner: Owner) -> List[int]:
        return sorted(v for v, m in self.vid_to_msti.items() if self.msti_owner[m] is owner)

    def allocate(self, vid, msti):
        if not valid_service_vid(vid):
            raise ValueError(f"VID {vid} outside 1..4094")
        if msti not in self.msti_owner:
            raise UnknownMsti(f"MSTI {msti} has no owner")
        current = self.vid_to_msti.get(vid)
        if current is not None and current != msti and self.in_use.get(vid, 0) > 0:
            raise VlanInUse(f"VID {vid} carries live services")
        self.vid_to_msti[vid] = msti

    def acquire(self, vid):
        self.owner_of_vid(vid)
        self.in_use[vid] += 1

    def release(self, vid):
        if self.in_use.get(vid, 0) > 0:
            self.in_use[vid] -= 1


def allocate_vlan(table: MstiTable, bridges: Mapping[int, BridgeState], vid, msti):
    """Allocate ``vid`` to ``msti`` and hand its FID to the MSTI's owner everywhere."""
    table.allocate(vid, msti)
    owner = table.msti_owner[msti]
    for bridge in bridges.values():
        fid = bridge.fid_for(vid)
        if fid is None or fid.owner is not owner:
            bridge.assign_vid(vid, owner, learning=table.spb_learning)
            bridge.unknown_policy.pop(vid, None)
            bridge.flood_tree.pop(vid, None)
            if fid is not None:
                for cfg in bridge.ports.values():
                    cfg.vlan_membership.discard(vid)
    return table


def set_vlan_membership(table: MstiTable, bridge: BridgeState, vid, ports: Iterable, actor: Actor):
    """Replace the member set of ``vid`` on one bridge."""
    owner = table.owner_of_vid(vid)
    check_actor(owner, actor, f"VLAN {vid} membership on bridge {bridge.id}", bridge)
    ports = {PortId(*p) for p in ports}
    for p in ports:
        bridge.port(p)
    for pid, cfg in bridge.ports.items():
        if pid in ports:
            cfg.vlan_membership.add(vid)
        else:
            cfg.vlan_membership.discard(vid)


def membership_of(bridge: BridgeState, vid) -> Set[PortId]:
    return {p for p, c in bridge.ports.items() if vid in c.vlan_membership}


# -- active trees ----------------------------------------------------------------

@dataclass(frozen=True)
class ActiveTree:
    scope: int  # MSTI or B-VID
    edges: FrozenSet[Tuple[int, int]]  # bridge pairs
    root: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset(tuple(sorted(e)) for e in self.edges))


@dataclass(frozen=True)
class Valid:
    pass


@dataclass(frozen=True)
class CycleFound:
    edges: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Disconnected:
    bridges: Tuple[int, ...]


@dataclass(frozen=True)
class InvalidEdges:
    edges: Tuple[Tuple[int, int], ...]


def _forest_path(adj, a, b):
    """Bridge path a..b in a forest (BFS), or None."""
    prev = {a: None}
    q = deque([a])
    while q:
        u = q.popleft()
        if u == b:
            break
        for v in sorted(adj[u]):
            if v not in prev:
                prev[v] = u
                q.append(v)
    if b not in prev:
        return None
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def validate_active_tree(tree: ActiveTree, phys: PhysicalTopology, required: Iterable[int] = ()):
    """Check a tree is loop-free, on Up links, and reaches every ``required`` bridge."""
    bad = []
    for a, b in sorted(tree.edges):
        try:
            if not phys.link(a, b).up:
                bad.append((a, b))
        except UnknownLink:
            bad.append((a, b))
    if bad:
        return InvalidEdges(tuple(bad))
    adj = defaultdict(set)
    for a, b in sorted(tree.edges):
        path = _forest_path(adj, a, b) if a in adj and b in adj else None
        if path is not None:
            cycle = list(zip(path, path[1:])) + [(b, a)]
            return CycleFound(tuple(tuple(sorted(e)) for e in cycle))
        adj[a].add(b)
        adj[b].add(a)
    required = sorted(set(required))
    if not required:
        return Valid()
    start = tree.root if tree.root is not None else required[0]
    seen = {start}
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    missing = tuple(b for b in required if b not in seen)
    if missing:
        return Disconnected(missing)
    return Valid()


def member_graph_edges(phys: PhysicalTopology, bridges: Mapping[int, BridgeState], vid):
    """Bridge pairs whose link has both ends in ``vid``'s member set."""
    edges = set()
    for link in phys.links.values():
        ba, bb = bridges[link.a.bridge], bridges[link.b.bridge]
        if ba.ports[link.a].is_member(vid) and bb.ports[link.b].is_member(vid):
            edges.add(tuple(sorted(link.bridges)))
    return edges
