"""
Ethernet frame model: VLAN tag stacks, PBB (MAC-in-MAC) encapsulation and
the simulator's canonical byte codec.

Canonical encoding, format version 1 (all multi-byte fields big-endian)::

    [version:1]                                  top level only
    [dst:6][src:6][tag count:1]
    [tag kind:1][tci:2] * tag count              outermost tag first
    [encap flag:1]                               0 or 1
    if encap:  [itag:4] [inner frame body]       inner body has no version byte
    [payload len:2][payload]

Tag kind codes are ASCII: ``C`` (0x43), ``S`` (0x53), ``B`` (0x42).
TCI packs pcp(3) dei(1) vid(12).  The I-tag packs pcp(3) dei(1) reserved(4)
isid(24).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional, Tuple

from .errors import (
    DuplicateTagKind,
    FrameError,
    MalformedEncoding,
    NestedEncapsulation,
    NoTagPresent,
    NotEncapsulated,
    OrderViolation,
)

FORMAT_VERSION = 1

VID_BITS = 12
ISID_BITS = 24
VID_MIN, VID_MAX = 1, 4094
ISID_SPACE = 1 << ISID_BITS


class MacAddress(int):
    """48-bit MAC address stored as an int; prints as ``xx:xx:xx:xx:xx:xx``."""

    def __new__(cls, value=0):
        if isinstance(value, MacAddress):
            return value
        if isinstance(value, str):
            parts = value.replace("-", ":").split(":")
            if len(parts) != 6:
                raise ValueError(f"bad MAC address {value!r}")
            value = int("".join(f"{int(p, 16):02x}" for p in parts), 16)
        elif isinstance(value, (bytes, bytearray)):
            if len(value) != 6:
                raise ValueError("MAC address needs 6 bytes")
            value = int.from_bytes(value, "big")
        if not 0 <= value < (1 << 48):
            raise ValueError(f"MAC address out of range: {value}")
        return super().__new__(cls, value)

    @property
    def is_group(self):
        return bool((self >> 40) & 0x01)

    @property
    def is_broadcast(self):
        return self == BROADCAST

    @property
    def packed(self):
        return int(self).to_bytes(6, "big")

    def __str__(self):
        return ":".join(f"{b:02x}" for b in self.packed)

    def __repr__(self):
        return f"MacAddress('{self}')"


BROADCAST = MacAddress((1 << 48) - 1)

# Simulator address plan.  First octet 0x03: group + locally administered.
SERVICE_GROUP_PREFIX = 0x030000
# Per-source SPB group addresses: 0x0B, 16-bit source bridge id, 24-bit I-SID.
SPB_SOURCE_GROUP_OCTET = 0x0B
CFM_GROUP_MAC = MacAddress("01:80:c2:00:00:30")


def group_mac(isid):
    """Service-wide group address: constant 24-bit prefix + 24-bit I-SID."""
    return MacAddress((SERVICE_GROUP_PREFIX << 24) | (isid & 0xFFFFFF))


def spb_group_mac(source, isid):
    """Group address of ``source``'s shortest path tree for ``isid``."""
    return MacAddress((SPB_SOURCE_GROUP_OCTET << 40) | ((source & 0xFFFF) << 24) | (isid & 0xFFFFFF))


def bridge_mac(bridge_id):
    """Default backbone MAC of a bridge: locally administered unicast."""
    return MacAddress((0x02 << 40) | (0xBB << 32) | (bridge_id & 0xFFFF))


class TagKind(Enum):
    C = "C"
    S = "S"
    B = "B"


# outermost-first stacking rank
_RANK = {TagKind.B: 0, TagKind.S: 1, TagKind.C: 2}
_KIND_CODE = {TagKind.C: 0x43, TagKind.S: 0x53, TagKind.B: 0x42}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def _check_bits(name, value, bits):
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise FrameError(f"{name}={value!r} does not fit in {bits} bits")


def valid_service_vid(vid):
    return isinstance(vid, int) and VID_MIN <= vid <= VID_MAX


@dataclass(frozen=True)
class VlanTag:
    kind: TagKind
    vid: int
    pcp: int = 0
    dei: int = 0

    def __post_init__(self):
        _check_bits("vid", self.vid, VID_BITS)
        _check_bits("pcp", self.pcp, 3)
        _check_bits("dei", self.dei, 1)

    @property
    def tci(self):
        return (self.pcp << 13) | (self.dei << 12) | self.vid

    def __str__(self):
        return f"{self.kind.value}:{self.vid}"


def ctag(vid, pcp=0, dei=0):
    return VlanTag(TagKind.C, vid, pcp, dei)


def stag(vid, pcp=0, dei=0):
    return VlanTag(TagKind.S, vid, pcp, dei)


def btag(vid, pcp=0, dei=0):
    return VlanTag(TagKind.B, vid, pcp, dei)


@dataclass(frozen=True)
class ITag:
    isid: int
    pcp: int = 0
    dei: int = 0

    def __post_init__(self):
        _check_bits("isid", self.isid, ISID_BITS)
        _check_bits("pcp", self.pcp, 3)
        _check_bits("dei", self.dei, 1)


@dataclass(frozen=True)
class Frame:
    """An Ethernet frame.  ``tags`` is outermost first.

    A PBB frame carries exactly one B-tag in ``tags`` and the customer frame
    in ``encapsulated``; its own ``payload`` stays empty.
    """

    dst: MacAddress
    src: MacAddress
    tags: Tuple[VlanTag, ...] = ()
    encapsulated: Optional[Tuple[ITag, "Frame"]] = None
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "dst", MacAddress(self.dst))
        object.__setattr__(self, "src", MacAddress(self.src))
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "payload", bytes(self.payload))
        _check_tag_stack(self.tags, self.encapsulated is not None)
        if self.encapsulated is not None:
            itag, inner = self.encapsulated
            if not isinstance(itag, ITag) or not isinstance(inner, Frame):
                raise FrameError("encapsulated must be an (ITag, Frame) pair")
            if inner.encapsulated is not None:
                raise NestedEncapsulation("PBB-in-PBB is not supported")
            if self.payload:
                raise FrameError("payload belongs to the innermost frame")
        if len(self.payload) > 0xFFFF:
            raise FrameError("payload longer than 65535 bytes")

    @property
    def outer_tag(self):
        return self.tags[0] if self.tags else None

    @property
    def outer_vid(self):
        return self.tags[0].vid if self.tags else None

    @property
    def is_pbb(self):
        return self.encapsulated is not None

    @property
    def inner(self):
        return self.encapsulated[1] if self.encapsulated else None

    @property
    def itag(self):
        return self.encapsulated[0] if self.encapsulated else None

    @property
    def customer(self):
        """The innermost (customer) frame."""
        return self.encapsulated[1] if self.encapsulated else self

    def describe(self):
        tags = ",".join(str(t) for t in self.tags)
        s = f"{self.src}->{self.dst}[{tags}]"
        if self.encapsulated:
            s += f"/I:{self.itag.isid}/{self.inner.describe()}"
        return s


def _check_tag_stack(tags, encapsulated):
    seen = set()
    last = -1
    for tag in tags:
        if not isinstance(tag, VlanTag):
            raise FrameError(f"not a VlanTag: {tag!r}")
        if tag.kind in seen:
            raise DuplicateTagKind(f"two {tag.kind.value}-tags at one header level")
        seen.add(tag.kind)
        rank = _RANK[tag.kind]
        if rank <= last:
            raise OrderViolation("tags must stack B, S, C from outermost inwards")
        last = rank
    has_b = TagKind.B in seen
    if encapsulated and [t.kind for t in tags] != [TagKind.B]:
        raise OrderViolation("a PBB outer header carries exactly one B-tag")
    if has_b and not encapsulated:
        raise OrderViolation("B-tag only appears on a PBB outer header")


def push_tag(frame: Frame, tag: VlanTag) -> Frame:
    """Return ``frame`` with ``tag`` as its new outermost tag."""
    if any(t.kind == tag.kind for t in frame.tags):
        raise DuplicateTagKind(f"frame already has a {tag.kind.value}-tag")
    if tag.kind is TagKind.B or frame.is_pbb:
        raise OrderViolation("B-tags are added by encapsulate_pbb only")
    if frame.tags and _RANK[tag.kind] >= _RANK[frame.tags[0].kind]:
        raise OrderViolation(f"cannot push {tag.kind.value} outside {frame.tags[0].kind.value}")
    return replace(frame, tags=(tag,) + frame.tags)


def pop_tag(frame: Frame):
    """Remove and return the outermost tag as ``(frame, tag)``."""
    if not frame.tags:
        raise NoTagPresent("untagged frame")
    if frame.is_pbb:
        raise OrderViolation("the B-tag of a PBB frame is removed by decapsulate_pbb")
    return replace(frame, tags=frame.tags[1:]), frame.tags[0]


def translate_vid(frame: Frame, table: Mapping[int, int]) -> Frame:
    """Rewrite the outermost VID through ``table``; other tags are untouched."""
    if not frame.tags:
        raise NoTagPresent("untagged frame")
    outer = frame.tags[0]
    new_vid = table.get(outer.vid, outer.vid)
    if new_vid == outer.vid:
        return frame
    return replace(frame, tags=(replace(outer, vid=new_vid),) + frame.tags[1:])


def encapsulate_pbb(frame: Frame, bdst, bsrc, btag_: VlanTag, itag: ITag) -> Frame:
    if frame.is_pbb:
        raise NestedEncapsulation("frame is already PBB-encapsulated")
    if btag_.kind is not TagKind.B:
        raise OrderViolation("backbone tag must be B-kind")
    return Frame(MacAddress(bdst), MacAddress(bsrc), (btag_,), (itag, frame))


def decapsulate_pbb(frame: Frame):
    """Return ``(inner, bdst, bsrc, btag, itag)``."""
    if not frame.is_pbb:
        raise NotEncapsulated("frame carries no I-tag")
    itag, inner = frame.encapsulated
    return inner, frame.dst, frame.src, frame.tags[0], itag


# -- virtualization identifier space ----------------------------------------

ID_WIDTHS = {TagKind.C: VID_BITS, TagKind.S: VID_BITS, TagKind.B: VID_BITS}


def virtualization_bits(frame: Frame) -> int:
    """Total width of the virtual network identifiers the frame carries."""
    bits = sum(ID_WIDTHS[t.kind] for t in frame.tags)
    if frame.is_pbb:
        bits += ISID_BITS + virtualization_bits(frame.inner)
    return bits


# -- codec -------------------------------------------------------------------

def _encode_body(frame: Frame, out: bytearray):
    out += frame.dst.packed
    out += frame.src.packed
    out.append(len(frame.tags))
    for tag in frame.tags:
        out.append(_KIND_CODE[tag.kind])
        out += struct.pack(">H", tag.tci)
    if frame.encapsulated is None:
        out.append(0)
    else:
        itag, inner = frame.encapsulated
        out.append(1)
        out += struct.pack(">I", (itag.pcp << 29) | (itag.dei << 28) | itag.isid)
        _encode_body(inner, out)
    out += struct.pack(">H", len(frame.payload))
    out += frame.payload


def encode(frame: Frame) -> bytes:
    out = bytearray([FORMAT_VERSION])
    _encode_body(frame, out)
    return bytes(out)


def wire_size(frame: Frame) -> int:
    """Length of the canonical encoding, used for metering."""
    n = 1 + 12 + 1 + 3 * len(frame.tags) + 1 + 2 + len(frame.payload)
    if frame.encapsulated:
        n += 4 + wire_size(frame.inner) - 1
    return n


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise MalformedEncoding(f"truncated at byte {self.pos} (need {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _decode_body(r: _Reader, depth: int) -> Frame:
    dst = MacAddress(r.take(6))
    src = MacAddress(r.take(6))
    ntags = r.take(1)[0]
    tags = []
    for _ in range(ntags):
        code = r.take(1)[0]
        if code not in _CODE_KIND:
            raise MalformedEncoding(f"unknown tag marker 0x{code:02x}")
        (tci,) = struct.unpack(">H", r.take(2))
        tags.append(VlanTag(_CODE_KIND[code], tci & 0xFFF, tci >> 13, (tci >> 12) & 1))
    flag = r.take(1)[0]
    encapsulated = None
    if flag == 1:
        if depth > 0:
            raise MalformedEncoding("nested encapsulation")
        (word,) = struct.unpack(">I", r.take(4))
        if word & 0x0F000000:
            raise MalformedEncoding("reserved I-tag bits set")
        itag = ITag(word & 0xFFFFFF, word >> 29, (word >> 28) & 1)
        encapsulated = (itag, _decode_body(r, depth + 1))
    elif flag != 0:
        raise MalformedEncoding(f"bad encapsulation flag {flag}")
    (plen,) = struct.unpack(">H", r.take(2))
    payload = r.take(plen)
    return Frame(dst, src, tuple(tags), encapsulated, payload)


def decode(data: bytes) -> Frame:
    r = _Reader(bytes(data))
    version = r.take(1)[0]
    if version != FORMAT_VERSION:
        raise MalformedEncoding(f"unsupported format version {version}")
    try:
        frame = _decode_body(r, 0)
    except MalformedEncoding:
        raise
    except FrameError as exc:
        raise MalformedEncoding(f"invariant violation: {exc}") from exc
    if r.pos != len(r.data):
        raise MalformedEncoding(f"{len(r.data) - r.pos} trailing bytes")
    return frame
