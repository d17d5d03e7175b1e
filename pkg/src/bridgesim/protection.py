"""
1:1 linear protection for point-to-point services.

Working and protection paths are pre-installed on two different B-VIDs.
Switching only swaps the edge S-VID -> B-VID association at both endpoint
bridges, so the core forwarding tables never change during a switchover.

Transition table (anything not listed leaves the state unchanged)::

    WorkingActive    + SF_Working              -> ProtectionActive  swap to protection
    ProtectionActive + Clear_Working (revert.) -> WaitToRestore     start WTR timer
    WaitToRestore    + WtrExpired              -> WorkingActive     swap to working
    WaitToRestore    + SF_Working              -> ProtectionActive  cancel WTR timer
    ProtectionActive + SF_Protection           -> ProtectionActive  alarm
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .errors import PathsNotDisjoint
from .simnet.engine import EventKind, Simulator
from .simnet.trace import fmt_time

DEFAULT_WTR = 5.0


class ProtState(Enum):
    WORKING_ACTIVE = "WorkingActive"
    PROTECTION_ACTIVE = "ProtectionActive"
    WAIT_TO_RESTORE = "WaitToRestore"


class ProtEvent(Enum):
    SF_WORKING = "SF_Working"
    SF_PROTECTION = "SF_Protection"
    CLEAR_WORKING = "Clear_Working"
    WTR_EXPIRED = "WtrExpired"


class Action(Enum):
    NONE = "none"
    SWITCH_TO_PROTECTION = "switch-protection"
    SWITCH_TO_WORKING = "switch-working"
    START_WTR = "start-wtr"
    CANCEL_WTR = "cancel-wtr"
    ALARM = "alarm"


def transition(state: ProtState, event: ProtEvent, revertive=True) -> Tuple[ProtState, Action]:
    S, E = ProtState, ProtEvent
    if state is S.WORKING_ACTIVE and event is E.SF_WORKING:
        return S.PROTECTION_ACTIVE, Action.SWITCH_TO_PROTECTION
    if state is S.PROTECTION_ACTIVE and event is E.CLEAR_WORKING and revertive:
        return S.WAIT_TO_RESTORE, Action.START_WTR
    if state is S.WAIT_TO_RESTORE and event is E.WTR_EXPIRED:
        return S.WORKING_ACTIVE, Action.SWITCH_TO_WORKING
    if state is S.WAIT_TO_RESTORE and event is E.SF_WORKING:
        return S.PROTECTION_ACTIVE, Action.CANCEL_WTR
    if state is S.PROTECTION_ACTIVE and event is E.SF_PROTECTION:
        return S.PROTECTION_ACTIVE, Action.ALARM
    return state, Action.NONE


def path_links(path: Sequence[int]):
    return {tuple(sorted(e)) for e in zip(path, path[1:])}


def check_disjoint(working: Sequence[int], protection: Sequence[int]):
    shared = path_links(working) & path_links(protection)
    if shared:
        raise PathsNotDisjoint(f"paths share links {sorted(shared)}")


@dataclass
class ProtectionGroup:
    id: int
    service: str
    working: Tuple[int, ...]
    protection: Tuple[int, ...]
    working_bvid: int
    protection_bvid: int
    working_ma: int
    protection_ma: int
    revertive: bool = True
    wtr: float = DEFAULT_WTR
    state: ProtState = ProtState.WORKING_ACTIVE
    timer: object = None
    alarms: int = 0
    history: List[Tuple[float, ProtEvent, ProtState, ProtState]] = field(default_factory=list)

    @property
    def active_bvid(self):
        return self.working_bvid if self.state is ProtState.WORKING_ACTIVE else self.protection_bvid

    @property
    def active_path(self):
        return self.working if self.state is ProtState.WORKING_ACTIVE else self.protection


class ProtectionManager:
    """Drives groups from OAM defect events; ``selector(group, bvid)`` re-maps the edges."""

    def __init__(self, sim: Simulator, selector: Callable[[ProtectionGroup, int], None],
                 log: Optional[Callable[[str], None]] = None):
        self.sim = sim
        self.selector = selector
        self.log = log or (lambda line: None)
        self.groups: Dict[int, ProtectionGroup] = {}
        self._by_ma: Dict[int, Tuple[ProtectionGroup, str]] = {}
        self._defects: Dict[int, set] = {}
        self.switch_log: List[Tuple[float, int, int]] = []  # (time, group, bvid)

    def add(self, group: ProtectionGroup):
        check_disjoint(group.working, group.protection)
        self.groups[group.id] = group
        self._by_ma[group.working_ma] = (group, "working")
        self._by_ma[group.protection_ma] = (group, "protection")
        self._defects[group.working_ma] = set()
        self._defects[group.protection_ma] = set()
        return group

    def remove(self, group_id):
        group = self.groups.pop(group_id, None)
        if group is None:
            return
        Simulator.cancel(group.timer)
        for ma in (group.working_ma, group.protection_ma):
            self._by_ma.pop(ma, None)
            self._defects.pop(ma, None)

    def on_defect(self, ev):
        """OAM listener: map per-peer defects to signal-fail / clear events."""
        hit = self._by_ma.get(ev.ma)
        if hit is None:
            return
        group, which = hit
        defects = self._defects[ev.ma]
        before = bool(defects)
        if ev.raised:
            defects.add((ev.mep, ev.peer))
        else:
            defects.discard((ev.mep, ev.peer))
        after = bool(defects)
        if before == after:
            return
        if which == "working":
            self.on_event(group, ProtEvent.SF_WORKING if after else ProtEvent.CLEAR_WORKING)
        elif after:
            self.on_event(group, ProtEvent.SF_PROTECTION)

    def on_event(self, group: ProtectionGroup, event: ProtEvent):
        old = group.state
        new, action = transition(old, event, group.revertive)
        group.state = new
        group.history.append((self.sim.now, event, old, new))
        self.log(f"PROT group={group.id} event={event.value} state={old.value}->{new.value} "
                 f"t={fmt_time(self.sim.now)}")
        if action is Action.SWITCH_TO_PROTECTION:
            self._apply(group, group.protection_bvid)
        elif action is Action.SWITCH_TO_WORKING:
            self._apply(group, group.working_bvid)
        elif action is Action.START_WTR:
            Simulator.cancel(group.timer)
            group.timer = self.sim.schedule_in(group.wtr, EventKind.TIMER,
                                               lambda: self._wtr_expired(group))
        elif action is Action.CANCEL_WTR:
            Simulator.cancel(group.timer)
            group.timer = None
        elif action is Action.ALARM:
            group.alarms += 1
        return new

    def _wtr_expired(self, group):
        group.timer = None
        if group.id in self.groups:
            self.on_event(group, ProtEvent.WTR_EXPIRED)

    def _apply(self, group, bvid):
        # one selector event re-maps both endpoints at the same instant
        def swap():
            if group.id in self.groups:
                self.switch_log.append((self.sim.now, group.id, bvid))
                self.selector(group, bvid)
        self.sim.schedule(self.sim.now, EventKind.CONTROL_OP, swap)
