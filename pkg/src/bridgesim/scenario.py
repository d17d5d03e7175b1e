"""
Scenario files: JSON documents describing a network, its services, a
timeline of actions and the assertions to check at the end.

Top-level keys (``?`` marks optional ones)::

    name, seed?, until?
    spb?        {convergence_delay}
    bridges     [{id, name?, bmac?}]
    links       [{a: [bridge, port], b: [bridge, port], metric?, delay?}]
    hosts       [{name, bridge, port, mac}]
    msti?       {spbm: [vid...], ext: [vid...]}
    pools?      {isid: [lo, hi], spb_bvid: [vid...], ext_bvid: [vid...]}
    services?   [{name, type, at?, attachments, isid?, bvid?, path?, tree?,
                  shortest_path_ok?, oam?: {interval}, protection?: {path?, revertive?, wtr?},
                  flow_paths?: [{bvid, path}]}]
    flow_rules? [{bridge, port, priority, match: {...}, action: {...}}]
    hash_ranges? [{bridge, port, vids}]
    timeline?   [{at, action: inject|link_down|link_up|move|sync|teardown, ...}]
    assertions? [{type: delivery|path|count|no_delivery|isolation|defects|protection_state|
                        fuzz_clean|fate_sharing, ...}]
    fuzz?       {operations}
    sweep?      {fail_at, observe}

An attachment is either ``{host, svid, role?}`` or ``{bridge, port, svid, role?}``.
Validation runs without simulating and is shared by ``validate`` and ``run``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional, Tuple

from .controller import (
    Attachment,
    ExplicitPath,
    ExplicitTree,
    Pools,
    ProtectionSpec,
    ServiceRequest,
    ServiceType,
)
from .dataplane import PortId
from .errors import BridgeSimError, DuplicatePriority, ScenarioError
from .flowmap import FlowKey, FlowRule, MapToBvid, MapToFlowHash, MapToIsid, check_rules, make_payload
from .frames import ISID_SPACE, MacAddress, valid_service_vid
from .protection import DEFAULT_WTR
from .simnet.engine import EventKind
from .simnet.network import Network
from .simnet.trace import Trace
from .spb import DEFAULT_CONVERGENCE_DELAY, Role
from .topology import (
    DEFAULT_LINK_DELAY,
    EXT_MSTI,
    SPBM_MSTI,
    ActiveTree,
    CycleFound,
    LinkState,
    PhysicalTopology,
    Valid,
    validate_active_tree,
)

BUILTINS = ("vn1_vn2", "vm_migration", "protection_switch", "hybrid_fuzz", "fate_sharing_sweep")
DEFAULT_UNTIL = 2.0


# -- typed field access ------------------------------------------------------------

def _need(obj, key, path, kind=None, default=...):
    if not isinstance(obj, dict):
        raise ScenarioError(path, "expected an object")
    if key not in obj:
        if default is ...:
            raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
        return default
    value = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is not None:
        kinds = kind if isinstance(kind, tuple) else (kind,)
        if isinstance(value, bool) and bool not in kinds:
            raise ScenarioError(where, f"expected {kinds[0].__name__}, got a boolean")
        if not isinstance(value, kinds):
            raise ScenarioError(where, f"expected {kinds[0].__name__}, got {type(value).__name__}")
    return value


def _list(obj, key, path, default=...):
    value = _need(obj, key, path, list, default=default)
    return [] if value is None else value


def _num(obj, key, path, default=...):
    return _need(obj, key, path, (int, float), default)


def _mac(value, where):
    try:
        return MacAddress(value)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(where, str(exc)) from None


@dataclass
class ServiceSpec:
    at: float
    request: ServiceRequest
    flow_paths: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    seed: int
    until: float
    data: Dict[str, Any]
    convergence_delay: float
    services: List[ServiceSpec]
    port_rules: Dict[PortId, Tuple[FlowRule, ...]]
    hash_ranges: Dict[PortId, Tuple[int, ...]]
    pools: Pools
    hosts: Dict[str, Tuple[int, int, MacAddress]]

    @property
    def timeline(self):
        return self.data.get("timeline", [])

    @property
    def assertions(self):
        return self.data.get("assertions", [])


# -- loading -------------------------------------------------------------------------

def load_text(text: str, source="<scenario>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return validate(data)


def builtin_path(name):
    return resources.files("bridgesim.scenarios").joinpath(f"{name}.json")


def load(path_or_name) -> Scenario:
    """Load a scenario file, or a built-in scenario by name."""
    name = str(path_or_name)
    if name in BUILTINS:
        return load_text(builtin_path(name).read_text(encoding="utf-8"), name)
    try:
        with open(name, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(name, f"cannot read file: {exc.strerror}") from None
    return load_text(text, name)


def _attachment(item, where, hosts, ports):
    svid = _need(item, "svid", where, int)
    if not valid_service_vid(svid):
        raise ScenarioError(f"{where}.svid", f"VID {svid} outside 1..4094")
    role = _need(item, "role", where, str, "Full")
    try:
        role = Role(role)
    except ValueError:
        raise ScenarioError(f"{where}.role", f"unknown role {role!r}") from None
    if "host" in item:
        host = _need(item, "host", where, str)
        if host not in hosts:
            raise ScenarioError(f"{where}.host", f"undeclared host {host!r}")
        bridge, port, _ = hosts[host]
    else:
        bridge = _need(item, "bridge", where, int)
        port = _need(item, "port", where, int)
    if (bridge, port) not in ports:
        raise ScenarioError(where, f"port {bridge}.{port} is not a host port")
    return Attachment(bridge, PortId(bridge, port), svid, role)


def _port_ref(item, where, hosts, ports):
    """A host name or a {bridge, port} object naming a customer port."""
    if isinstance(item, str):
        if item not in hosts:
            raise ScenarioError(where, f"undeclared host {item!r}")
        return PortId(*hosts[item][:2])
    bridge = _need(item, "bridge", where, int)
    port = _need(item, "port", where, int)
    if (bridge, port) not in ports:
        raise ScenarioError(where, f"port {bridge}.{port} is not a host port")
    return PortId(bridge, port)


def _bridge_list(value, where, bridges):
    if not isinstance(value, list) or not all(isinstance(b, int) and not isinstance(b, bool) for b in value):
        raise ScenarioError(where, "expected a list of bridge ids")
    for b in value:
        if b not in bridges:
            raise ScenarioError(where, f"undeclared bridge {b}")
    return tuple(value)


def _check_path_static(path, where, phys):
    if len(path) < 2 or len(set(path)) != len(path):
        raise ScenarioError(where, "a path needs two or more distinct bridges")
    for a, b in zip(path, path[1:]):
        try:
            phys.link(a, b)
        except KeyError:
            raise ScenarioError(where, f"bridges {a} and {b} are not linked") from None


def _flow_match(obj, where):
    if not isinstance(obj, dict) or not obj:
        raise ScenarioError(where, "match needs at least one field")
    allowed = {"dst", "src", "outer_vid", "inner_vid", "payload_type", "selector"}
    for key in obj:
        if key not in allowed:
            raise ScenarioError(f"{where}.{key}", "unknown match field")
    kw = {}
    for key, value in obj.items():
        if key in ("dst", "src"):
            kw[key] = _mac(value, f"{where}.{key}")
        else:
            kw[key] = _need(obj, key, where, int)
    return FlowKey(**kw)


def _flow_action(obj, where):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ScenarioError(where, "action must have exactly one of map_to_isid, map_to_bvid, flow_hash")
    (kind, value), = obj.items()
    if kind == "map_to_isid":
        return MapToIsid(_need(value, "isid", f"{where}.map_to_isid", int),
                         _need(value, "bvid", f"{where}.map_to_isid", int))
    if kind == "map_to_bvid":
        if not isinstance(value, int):
            raise ScenarioError(f"{where}.map_to_bvid", "expected a VID")
        return MapToBvid(value)
    if kind == "flow_hash":
        return MapToFlowHash()
    raise ScenarioError(where, f"unknown action {kind!r}")


def validate(data) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "a scenario is a JSON object")
    known = {"name", "seed", "until", "spb", "bridges", "links", "hosts", "msti", "pools", "services",
             "flow_rules", "hash_ranges", "timeline", "assertions", "fuzz", "sweep", "description"}
    for key in data:
        if key not in known:
            raise ScenarioError(key, "unknown top-level field")
    name = _need(data, "name", "", str)
    seed = _need(data, "seed", "", int, 0)
    until = _num(data, "until", "", DEFAULT_UNTIL)
    if until < 0:
        raise ScenarioError("until", "must be non-negative")
    spb = _need(data, "spb", "", dict, {})
    delay = _num(spb, "convergence_delay", "spb", DEFAULT_CONVERGENCE_DELAY)
    if delay < 0:
        raise ScenarioError("spb.convergence_delay", "must be non-negative")

    phys = PhysicalTopology()
    bridges = set()
    for i, item in enumerate(_list(data, "bridges", "")):
        where = f"bridges[{i}]"
        bid = _need(item, "id", where, int)
        if bid in bridges:
            raise ScenarioError(f"{where}.id", f"duplicate bridge id {bid}")
        if not 0 < bid < 1 << 16:
            raise ScenarioError(f"{where}.id", "bridge id must be in 1..65535")
        bridges.add(bid)
        _need(item, "name", where, str, None)
        phys.add_bridge(bid, _mac(item["bmac"], f"{where}.bmac") if "bmac" in item else 0)
    if not bridges:
        raise ScenarioError("bridges", "at least one bridge is required")

    used_ports = set()
    for i, item in enumerate(_list(data, "links", "", [])):
        where = f"links[{i}]"
        ends = []
        for side in ("a", "b"):
            end = _need(item, side, where, list)
            if len(end) != 2 or not all(isinstance(x, int) for x in end):
                raise ScenarioError(f"{where}.{side}", "expected [bridge, port]")
            if end[0] not in bridges:
                raise ScenarioError(f"{where}.{side}", f"undeclared bridge {end[0]}")
            if tuple(end) in used_ports:
                raise ScenarioError(f"{where}.{side}", f"port {end[0]}.{end[1]} already used")
            used_ports.add(tuple(end))
            ends.append(tuple(end))
        metric = _need(item, "metric", where, int, 1)
        if metric < 1:
            raise ScenarioError(f"{where}.metric", "must be >= 1")
        ldelay = _num(item, "delay", where, DEFAULT_LINK_DELAY)
        if ldelay < 0:
            raise ScenarioError(f"{where}.delay", "must be non-negative")
        try:
            phys.add_link(ends[0], ends[1], metric, ldelay)
        except ValueError as exc:
            raise ScenarioError(where, str(exc)) from None

    hosts = {}
    host_ports = set()
    for i, item in enumerate(_list(data, "hosts", "", [])):
        where = f"hosts[{i}]"
        hname = _need(item, "name", where, str)
        bridge = _need(item, "bridge", where, int)
        port = _need(item, "port", where, int)
        if bridge not in bridges:
            raise ScenarioError(f"{where}.bridge", f"undeclared bridge {bridge}")
        if hname in hosts:
            raise ScenarioError(f"{where}.name", f"duplicate host {hname!r}")
        if (bridge, port) in used_ports:
            raise ScenarioError(f"{where}.port", f"port {bridge}.{port} already used")
        used_ports.add((bridge, port))
        host_ports.add((bridge, port))
        hosts[hname] = (bridge, port, _mac(_need(item, "mac", where, str), f"{where}.mac"))

    msti = _need(data, "msti", "", dict, {})
    alloc = {}
    for key, inst in (("spbm", SPBM_MSTI), ("ext", EXT_MSTI)):
        for j, vid in enumerate(_list(msti, key, "msti", [])):
            where = f"msti.{key}[{j}]"
            if not isinstance(vid, int) or not valid_service_vid(vid):
                raise ScenarioError(where, "expected a VID in 1..4094")
            if vid in alloc:
                raise ScenarioError(where, f"VID {vid} allocated twice")
            alloc[vid] = inst

    pools_obj = _need(data, "pools", "", dict, {})
    isid_range = _list(pools_obj, "isid", "pools", [1, ISID_SPACE - 2])
    if len(isid_range) != 2 or not all(isinstance(x, int) for x in isid_range) \
            or not 1 <= isid_range[0] <= isid_range[1] < ISID_SPACE - 1:
        raise ScenarioError("pools.isid", "expected [lo, hi] within the I-SID space")
    pools = Pools(range(isid_range[0], isid_range[1] + 1),
                  tuple(_list(pools_obj, "spb_bvid", "pools", [])),
                  tuple(_list(pools_obj, "ext_bvid", "pools", [])))
    for key, inst in (("spb_bvid", SPBM_MSTI), ("ext_bvid", EXT_MSTI)):
        for j, vid in enumerate(getattr(pools, key)):
            if not isinstance(vid, int) or not valid_service_vid(vid):
                raise ScenarioError(f"pools.{key}[{j}]", "expected a VID in 1..4094")
            if alloc.get(vid, inst) != inst:
                raise ScenarioError(f"pools.{key}[{j}]", f"VID {vid} is allocated to another MSTI")

    services = []
    names = set()
    for i, item in enumerate(_list(data, "services", "", [])):
        where = f"services[{i}]"
        sname = _need(item, "name", where, str)
        if sname in names:
            raise ScenarioError(f"{where}.name", f"duplicate service {sname!r}")
        names.add(sname)
        try:
            stype = ServiceType(_need(item, "type", where, str))
        except ValueError:
            raise ScenarioError(f"{where}.type", "expected P2P, MP2MP or RootedMP") from None
        at = _num(item, "at", where, 0.0)
        if at < 0:
            raise ScenarioError(f"{where}.at", "must be non-negative")
        atts = [_attachment(a, f"{where}.attachments[{j}]", hosts, host_ports)
                for j, a in enumerate(_list(item, "attachments", where))]
        explicit = None
        if "path" in item:
            path = _bridge_list(item["path"], f"{where}.path", bridges)
            _check_path_static(path, f"{where}.path", phys)
            explicit = ExplicitPath(path)
        if "tree" in item:
            if explicit is not None:
                raise ScenarioError(f"{where}.tree", "give either path or tree, not both")
            edges = []
            for j, e in enumerate(_list(item, "tree", where)):
                edges.append(_bridge_list(e, f"{where}.tree[{j}]", bridges))
                if len(edges[-1]) != 2:
                    raise ScenarioError(f"{where}.tree[{j}]", "an edge joins two bridges")
            result = validate_active_tree(ActiveTree(0, edges), phys)
            if isinstance(result, CycleFound):
                raise ScenarioError(f"{where}.tree", f"CycleRefused: edges {list(result.edges)} form a loop")
            if not isinstance(result, Valid):
                raise ScenarioError(f"{where}.tree", f"tree uses edges that are not links: {result}")
            explicit = ExplicitTree(edges)
        oam = _need(item, "oam", where, dict, None)
        interval = None
        if oam is not None:
            interval = _num(oam, "interval", f"{where}.oam")
            if interval <= 0:
                raise ScenarioError(f"{where}.oam.interval", "must be positive")
        prot = _need(item, "protection", where, dict, None)
        pspec = None
        if prot is not None:
            ppath = None
            if "path" in prot:
                ppath = _bridge_list(prot["path"], f"{where}.protection.path", bridges)
                _check_path_static(ppath, f"{where}.protection.path", phys)
            pspec = ProtectionSpec(ppath, _need(prot, "revertive", f"{where}.protection", bool, True),
                                   _num(prot, "wtr", f"{where}.protection", DEFAULT_WTR))
        isid = _need(item, "isid", where, int, None)
        if isid is not None and not 1 <= isid < ISID_SPACE:
            raise ScenarioError(f"{where}.isid", "outside the I-SID space")
        bvid = _need(item, "bvid", where, int, None)
        if bvid is not None and not valid_service_vid(bvid):
            raise ScenarioError(f"{where}.bvid", "expected a VID in 1..4094")
        try:
            req = ServiceRequest(sname, stype, atts, _need(item, "shortest_path_ok", where, bool, True),
                                 explicit, interval, pspec, isid, bvid)
        except ValueError as exc:
            raise ScenarioError(where, str(exc)) from None
        if bvid is not None and bvid in alloc:
            want = EXT_MSTI if req.wants_sdn else SPBM_MSTI
            if alloc[bvid] != want:
                raise ScenarioError(f"{where}.bvid", f"B-VID {bvid} is on the wrong MSTI for this service")
        flow_paths = []
        for j, fp in enumerate(_list(item, "flow_paths", where, [])):
            fw = f"{where}.flow_paths[{j}]"
            if not req.wants_sdn or stype is not ServiceType.P2P:
                raise ScenarioError(fw, "flow paths need a point-to-point controller service")
            path = _bridge_list(_need(fp, "path", fw, list), f"{fw}.path", bridges)
            _check_path_static(path, f"{fw}.path", phys)
            flow_paths.append((_need(fp, "bvid", fw, int), path))
        services.append(ServiceSpec(at, req, flow_paths))

    port_rules: Dict[PortId, List[FlowRule]] = {}
    for i, item in enumerate(_list(data, "flow_rules", "", [])):
        where = f"flow_rules[{i}]"
        pid = PortId(_need(item, "bridge", where, int), _need(item, "port", where, int))
        if tuple(pid) not in host_ports:
            raise ScenarioError(where, f"port {pid} is not a host port")
        rule = FlowRule(_need(item, "priority", where, int),
                        _flow_match(_need(item, "match", where, dict), f"{where}.match"),
                        _flow_action(_need(item, "action", where, dict), f"{where}.action"))
        try:
            check_rules(port_rules.get(pid, []) + [rule])
        except DuplicatePriority as exc:
            raise ScenarioError(f"{where}.priority", f"port {pid}: {exc}") from None
        port_rules.setdefault(pid, []).append(rule)
    checked = {pid: check_rules(rules) for pid, rules in port_rules.items()}

    hash_ranges = {}
    for i, item in enumerate(_list(data, "hash_ranges", "", [])):
        where = f"hash_ranges[{i}]"
        pid = PortId(_need(item, "bridge", where, int), _need(item, "port", where, int))
        vids = tuple(_list(item, "vids", where))
        if not vids:
            raise ScenarioError(f"{where}.vids", "hash range is empty")
        for vid in vids:
            if alloc.get(vid) != EXT_MSTI:
                raise ScenarioError(f"{where}.vids", f"hash VID {vid} must be allocated to the external MSTI")
        hash_ranges[pid] = vids
    for pid, rules in checked.items():
        if any(isinstance(r.action, MapToFlowHash) for r in rules) and pid not in hash_ranges:
            raise ScenarioError("flow_rules", f"port {pid} uses flow_hash without a hash range")

    for i, item in enumerate(_list(data, "timeline", "", [])):
        _check_action(item, f"timeline[{i}]", hosts, host_ports, names, bridges, phys)
    for i, item in enumerate(_list(data, "assertions", "", [])):
        _check_assertion(item, f"assertions[{i}]", hosts, names)
    fuzz = _need(data, "fuzz", "", dict, None)
    if fuzz is not None and _need(fuzz, "operations", "fuzz", int) < 1:
        raise ScenarioError("fuzz.operations", "must be positive")
    sweep = _need(data, "sweep", "", dict, None)
    if sweep is not None:
        if _num(sweep, "fail_at", "sweep") < 0 or _num(sweep, "observe", "sweep") <= 0:
            raise ScenarioError("sweep", "fail_at must be >= 0 and observe > 0")

    return Scenario(name, seed, until, data, delay, services, checked, hash_ranges, pools, hosts)


ACTIONS = ("inject", "link_down", "link_up", "move", "sync", "teardown")
ASSERTIONS = ("delivery", "path", "count", "no_delivery", "isolation", "defects", "protection_state",
              "fuzz_clean", "fate_sharing")


def _check_action(item, where, hosts, host_ports, services, bridges, phys):
    at = _num(item, "at", where)
    if at < 0:
        raise ScenarioError(f"{where}.at", "timeline times must be non-negative")
    action = _need(item, "action", where, str)
    if action not in ACTIONS:
        raise ScenarioError(f"{where}.action", f"unknown action {action!r}")
    if action == "inject":
        host = _need(item, "host", where, str)
        if host not in hosts:
            raise ScenarioError(f"{where}.host", f"undeclared host {host!r}")
        dst = _need(item, "dst", where, str, "ff:ff:ff:ff:ff:ff")
        if dst not in hosts:
            _mac(dst, f"{where}.dst")
        for key in ("svid", "cvid"):
            vid = _need(item, key, where, int, None)
            if vid is not None and not valid_service_vid(vid):
                raise ScenarioError(f"{where}.{key}", "expected a VID in 1..4094")
        if _need(item, "count", where, int, 1) < 1:
            raise ScenarioError(f"{where}.count", "must be positive")
        if _num(item, "interval", where, 0.001) < 0:
            raise ScenarioError(f"{where}.interval", "must be non-negative")
        pcp = _need(item, "pcp", where, int, 0)
        if not 0 <= pcp < 8:
            raise ScenarioError(f"{where}.pcp", "must be 0..7")
        _need(item, "label", where, str, None)
        _need(item, "size", where, int, 64)
        _need(item, "selector", where, int, 0)
        _need(item, "payload_type", where, int, 0x0800)
    elif action in ("link_down", "link_up"):
        link = _bridge_list(_need(item, "link", where, list), f"{where}.link", bridges)
        if len(link) != 2:
            raise ScenarioError(f"{where}.link", "expected [bridge, bridge]")
        try:
            phys.link(*link)
        except KeyError:
            raise ScenarioError(f"{where}.link", f"no link between {link[0]} and {link[1]}") from None
    elif action in ("move", "teardown"):
        svc = _need(item, "service", where, str)
        if svc not in services:
            raise ScenarioError(f"{where}.service", f"undeclared service {svc!r}")
        if action == "move":
            _port_ref(_need(item, "from", where), f"{where}.from", hosts, host_ports)
            _port_ref(_need(item, "to", where), f"{where}.to", hosts, host_ports)
            if "path" in item:
                _check_path_static(_bridge_list(item["path"], f"{where}.path", bridges), f"{where}.path", phys)


def _check_assertion(item, where, hosts, services):
    kind = _need(item, "type", where, str)
    if kind not in ASSERTIONS:
        raise ScenarioError(f"{where}.type", f"unknown assertion {kind!r}")
    for key in ("host",):
        if key in item and item[key] not in hosts:
            raise ScenarioError(f"{where}.{key}", f"undeclared host {item[key]!r}")
    for key in ("expect_hosts", "hosts"):
        for h in item.get(key, []):
            if h not in hosts:
                raise ScenarioError(f"{where}.{key}", f"undeclared host {h!r}")
    if kind in ("delivery", "path", "count", "no_delivery"):
        _need(item, "label", where, str)
    if kind == "delivery":
        _list(item, "expect_hosts", where)
    if kind == "path":
        _need(item, "host", where, str)
        _list(item, "expect", where)
    if kind == "count":
        _need(item, "expect", where, int)
    if kind == "protection_state":
        if _need(item, "service", where, str) not in services:
            raise ScenarioError(f"{where}.service", "undeclared service")
        _need(item, "expect", where, str)


# -- building and running -----------------------------------------------------------------

@dataclass
class AssertionResult:
    index: int
    kind: str
    ok: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} [{self.index}] {self.kind} {self.detail}".rstrip()


@dataclass
class RunResult:
    scenario: Scenario
    net: Network
    labels: Dict[int, str]
    results: List[AssertionResult] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self):
        return not self.errors and all(r.ok for r in self.results)

    def report(self) -> List[str]:
        lines = [f"scenario {self.scenario.name}"]
        lines += [f"ERROR {e}" for e in self.errors]
        lines += [r.line() for r in self.results]
        lines.append("OK" if self.ok else "FAILED")
        return lines


def build(scn: Scenario, trace: Optional[Trace] = None, timeline=True, services=True) -> Tuple[Network, Dict[int, str], List[str]]:
    """Instantiate the network and schedule services and timeline actions."""
    net = Network(scn.convergence_delay, trace, scn.pools)
    data = scn.data
    for item in data["bridges"]:
        net.add_bridge(item["id"], item.get("bmac"), item.get("name"))
    for item in data.get("links", []):
        net.add_link(tuple(item["a"]), tuple(item["b"]), item.get("metric", 1), item.get("delay", DEFAULT_LINK_DELAY))
    for hname, (bridge, port, mac) in scn.hosts.items():
        net.add_host(hname, bridge, port, mac)
    msti = data.get("msti", {})
    for vid in msti.get("spbm", []):
        net.allocate_vlan(vid, SPBM_MSTI)
    for vid in msti.get("ext", []):
        net.allocate_vlan(vid, EXT_MSTI)
    for pid, rules in scn.port_rules.items():
        net.bridges[pid.bridge].ports[pid].flow_rules = rules
    for pid, vids in scn.hash_ranges.items():
        net.bridges[pid.bridge].ports[pid].hash_range = vids
    net.bootstrap()
    labels: Dict[int, str] = {}
    errors: List[str] = []

    def guarded(what, fn):
        def run():
            try:
                fn()
            except BridgeSimError as exc:
                errors.append(f"t={net.sim.now:.9f} {what}: {type(exc).__name__}: {exc}")
        return run

    if services:
        for spec in scn.services:
            def setup(spec=spec):
                binding = net.controller.setup_service(spec.request)
                for bvid, path in spec.flow_paths:
                    net.controller.add_flow_path(binding, path, bvid)
                net.trace.event(f"CTRL {net.controller.decisions[-1]} t={net.sim.now:.9f}")
            net.at(spec.at, guarded(f"setup {spec.request.name}", setup), EventKind.CONTROL_OP)
    if timeline:
        for i, item in enumerate(scn.timeline):
            schedule_action(net, scn, item, labels, guarded, i)
    return net, labels, errors


def schedule_action(net: Network, scn: Scenario, item, labels, guarded, index=0):
    at = item["at"]
    action = item["action"]
    if action == "inject":
        host = item["host"]
        dst = item.get("dst", "ff:ff:ff:ff:ff:ff")
        dst = scn.hosts[dst][2] if dst in scn.hosts else MacAddress(dst)
        label = item.get("label", f"inject{index}")
        payload = make_payload(item.get("payload_type", 0x0800), item.get("selector", 0), item.get("size", 64))
        frame = net.make_frame(host, dst, item.get("svid"), item.get("cvid"), item.get("pcp", 0), payload)
        interval = item.get("interval", 0.001)
        for k in range(item.get("count", 1)):
            def send(k=k):
                labels[net.inject(host, frame)] = label
            net.at(at + k * interval, send)
    elif action in ("link_down", "link_up"):
        state = LinkState.DOWN if action == "link_down" else LinkState.UP
        net.set_link(*item["link"], state, at=at)
    elif action == "sync":
        net.at(at, guarded("sync", net.controller.sync_topology), EventKind.CONTROL_OP)
    elif action == "teardown":
        net.at(at, guarded(f"teardown {item['service']}",
                           lambda: net.controller.teardown_service(item["service"])), EventKind.CONTROL_OP)
    elif action == "move":
        def move():
            frm = _port_ref(item["from"], "", scn.hosts, {h[:2] for h in scn.hosts.values()})
            to = _port_ref(item["to"], "", scn.hosts, {h[:2] for h in scn.hosts.values()})
            net.controller.move_attachment(item["service"], frm, to, item.get("path"))
            net.trace.event(f"CTRL {net.controller.decisions[-1]} t={net.sim.now:.9f}")
        net.at(at, guarded(f"move {item['service']}", move), EventKind.CONTROL_OP)


def run(scn: Scenario, until=None, trace: Optional[Trace] = None, seed=None) -> RunResult:
    """Run a scenario to completion and evaluate its assertions."""
    if seed is not None:
        scn.seed = seed
    until = scn.until if until is None else until
    if scn.data.get("fuzz") is not None:
        from .experiments import run_fuzz_scenario
        return run_fuzz_scenario(scn, until, trace)
    if scn.data.get("sweep") is not None:
        from .experiments import run_sweep_scenario
        return run_sweep_scenario(scn, trace)
    net, labels, errors = build(scn, trace)
    net.run_until(until)
    result = RunResult(scn, net, labels, errors=errors)
    result.results = evaluate(scn, net, labels)
    return result


# -- assertions ----------------------------------------------------------------------------

def _by_label(net, labels, label):
    return sorted(p for p, lab in labels.items() if lab == label)


def service_ports(scn: Scenario, net: Network):
    """Every (port, svid) a service was ever attached at, by service name."""
    out = {}
    for spec in scn.services:
        out[spec.request.name] = {(a.port, a.svid) for a in spec.request.attachments}
    for item in scn.timeline:
        if item["action"] == "move":
            ports = {h[:2] for h in scn.hosts.values()}
            to = _port_ref(item["to"], "", scn.hosts, ports)
            svids = {s for _, s in out[item["service"]]}
            out[item["service"]] |= {(to, s) for s in svids}
    return out


def isolation_violations(scn: Scenario, net: Network):
    """Deliveries whose receiving (port, S-VID) is not part of the sender's service."""
    owners = service_ports(scn, net)
    bad = []
    for d in net.deliveries:
        src_host, _, frame = net.injected[d.pkt]
        src = (net.hosts[src_host].port, frame.outer_vid)
        dst = (net.hosts[d.host].port, d.frame.outer_vid)
        services = [name for name, ports in owners.items() if src in ports]
        if not services or not any(dst in owners[name] for name in services):
            bad.append(d)
    return bad


def evaluate(scn: Scenario, net: Network, labels) -> List[AssertionResult]:
    results = []
    for i, a in enumerate(scn.assertions):
        kind = a["type"]
        ok, detail = _evaluate_one(scn, net, labels, a)
        results.append(AssertionResult(i, kind, ok, detail))
    return results


def _evaluate_one(scn, net, labels, a):
    kind = a["type"]
    if kind in ("delivery", "path", "count", "no_delivery"):
        pkts = _by_label(net, labels, a["label"])
        if not pkts:
            return False, f"label={a['label']} no frames were injected"
        per_pkt = {p: [] for p in pkts}
        for d in net.deliveries:
            if d.pkt in per_pkt:
                per_pkt[d.pkt].append(d)
    if kind == "delivery":
        want = sorted(a["expect_hosts"])
        bad = {p: sorted(d.host for d in ds) for p, ds in per_pkt.items() if sorted(d.host for d in ds) != want}
        if bad:
            p = min(bad)
            return False, (f"label={a['label']} expected={want} observed={bad[p]} (pkt {p}; "
                           f"{len(bad)}/{len(pkts)} frames differ)")
        return True, f"label={a['label']} frames={len(pkts)} hosts={want}"
    if kind == "path":
        want = list(a["expect"])
        got = [list(d.path) for ds in per_pkt.values() for d in ds if d.host == a["host"]]
        if not got:
            return False, f"label={a['label']} host={a['host']} nothing delivered"
        wrong = [g for g in got if g != want]
        if wrong:
            return False, f"label={a['label']} expected path={want} observed={wrong[0]}"
        return True, f"label={a['label']} host={a['host']} path={'>'.join(map(str, want))} frames={len(got)}"
    if kind == "count":
        hosts = [a["host"]] if "host" in a else None
        n = sum(1 for ds in per_pkt.values() for d in ds if hosts is None or d.host in hosts)
        return n == a["expect"], f"label={a['label']} expected={a['expect']} observed={n}"
    if kind == "no_delivery":
        hosts = set(a.get("hosts", [a["host"]] if "host" in a else []))
        got = sorted({d.host for ds in per_pkt.values() for d in ds if not hosts or d.host in hosts})
        return not got, f"label={a['label']} unexpected deliveries at {got}" if got else f"label={a['label']}"
    if kind == "isolation":
        bad = isolation_violations(scn, net)
        detail = f"deliveries={len(net.deliveries)} cross-service={len(bad)}"
        if bad:
            detail += f" first=pkt {bad[0].pkt} at {bad[0].host}"
        return not bad, detail
    if kind == "defects":
        raised = [e for e in net.oam.events if e.raised]
        want = a.get("expect", 0)
        return len(raised) == want, f"expected={want} observed={len(raised)}"
    if kind == "protection_state":
        binding = net.controller.bindings.get(a["service"])
        if binding is None or binding.protection is None:
            return False, f"service={a['service']} has no protection group"
        state = net.protection.groups[binding.protection].state.value
        return state == a["expect"], f"service={a['service']} expected={a['expect']} observed={state}"
    return False, f"assertion {kind} needs the matching experiment section"
