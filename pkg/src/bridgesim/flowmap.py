"""
Edge flow classification.

Edge bridges match customer frames against priority-ordered rules and map
the flow onto an I-SID, a B-VID, or a hash-selected B-VID before PBB
encapsulation.  Core bridges never see any of this: they forward on the
outer backbone header only.

Payload convention for the upper-layer fields: octets 0-1 of the customer
payload are the payload type (EtherType stand-in) and octets 2-3 are the
16-bit upper-layer selector (think TCP port).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Tuple, Union

from .errors import DuplicatePriority, EmptyHashRange
from .frames import Frame, MacAddress

PAYLOAD_TYPE_OFFSET = 0
SELECTOR_OFFSET = 2

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def payload_type(frame: Frame) -> Optional[int]:
    data = frame.customer.payload
    if len(data) < PAYLOAD_TYPE_OFFSET + 2:
        return None
    return struct.unpack_from(">H", data, PAYLOAD_TYPE_OFFSET)[0]


def upper_selector(frame: Frame) -> Optional[int]:
    data = frame.customer.payload
    if len(data) < SELECTOR_OFFSET + 2:
        return None
    return struct.unpack_from(">H", data, SELECTOR_OFFSET)[0]


def make_payload(ptype=0x0800, selector=0, size=64) -> bytes:
    head = struct.pack(">HH", ptype, selector)
    return head + bytes(max(0, size - len(head)))


@dataclass(frozen=True)
class FlowKey:
    """Match fields; ``None`` means wildcard."""

    dst: Optional[MacAddress] = None
    src: Optional[MacAddress] = None
    outer_vid: Optional[int] = None
    inner_vid: Optional[int] = None
    payload_type: Optional[int] = None
    selector: Optional[int] = None

    def __post_init__(self):
        if all(getattr(self, f.name) is None for f in fields(self)):
            raise ValueError("a flow key must specify at least one field")
        for name in ("dst", "src"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, MacAddress(value))

    @classmethod
    def of(cls, frame: Frame) -> "FlowKey":
        """The fully specified key of a customer frame."""
        f = frame.customer
        return cls(
            dst=f.dst,
            src=f.src,
            outer_vid=f.tags[0].vid if f.tags else None,
            inner_vid=f.tags[1].vid if len(f.tags) > 1 else None,
            payload_type=payload_type(f),
            selector=upper_selector(f),
        )

    def matches(self, frame: Frame) -> bool:
        actual = FlowKey.of(frame)
        for f in fields(self):
            want = getattr(self, f.name)
            if want is not None and getattr(actual, f.name) != want:
                return False
        return True


@dataclass(frozen=True)
class MapToIsid:
    isid: int
    bvid: int


@dataclass(frozen=True)
class MapToBvid:
    bvid: int


@dataclass(frozen=True)
class MapToFlowHash:
    pass


FlowAction = Union[MapToIsid, MapToBvid, MapToFlowHash]


@dataclass(frozen=True)
class FlowRule:
    priority: int
    key: FlowKey
    action: FlowAction


def check_rules(rules: Sequence[FlowRule]) -> Tuple[FlowRule, ...]:
    """Validate priority uniqueness and return rules highest priority first."""
    seen = set()
    for rule in rules:
        if rule.priority in seen:
            raise DuplicatePriority(f"duplicate flow rule priority {rule.priority}")
        seen.add(rule.priority)
    return tuple(sorted(rules, key=lambda r: -r.priority))


def classify(rules: Sequence[FlowRule], frame: Frame) -> Optional[FlowRule]:
    """Highest-priority rule matching ``frame``; ``None`` means no match."""
    best = None
    for rule in rules:
        if rule.key.matches(frame) and (best is None or rule.priority > best.priority):
            best = rule
    return best


def _key_bytes(frame: Frame) -> bytes:
    k = FlowKey.of(frame)
    opt = lambda v: 0xFFFF_FFFF if v is None else v  # noqa: E731
    return struct.pack(
        ">6s6sIIII",
        k.dst.packed,
        k.src.packed,
        opt(k.outer_vid),
        opt(k.inner_vid),
        opt(k.payload_type),
        opt(k.selector),
    )


def flow_hash(frame: Frame, hash_range: Sequence[int]) -> int:
    """Map a flow to one VID of ``hash_range``.

    Polynomial fold of the serialized flow key, finished with a 64-bit
    Fibonacci multiplicative hash; the high 32 bits select the VID.
    """
    vids = list(hash_range)
    if not vids:
        raise EmptyHashRange("hash VID range is empty")
    h = 0
    for b in _key_bytes(frame):
        h = (h * 131 + b) & _MASK64
    h = (h * _GOLDEN) & _MASK64
    return vids[(h >> 32) % len(vids)]
