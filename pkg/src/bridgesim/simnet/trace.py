"""
Line-oriented trace records.

Field order is fixed.  Frame records::

    FRAME t=<time> pkt=<id> kind=<ingress|relay|egress|deliver|drop> node=<bridge|host>
          port=<b.i|-> digest=<16 hex> [reason=<DropReason>] [path=<b>b>...>]

Other records start with ``OAM``, ``PROT`` or ``CTRL``.  Times are printed
with nine decimals.  The digest is BLAKE2b-64 over the encoded frame.
"""

from __future__ import annotations

import hashlib
from typing import List, Optional

from ..frames import Frame, encode


def fmt_time(t: float) -> str:
    return f"{t:.9f}"


def digest(frame: Frame) -> str:
    return hashlib.blake2b(encode(frame), digest_size=8).hexdigest()


def fmt_path(path) -> str:
    return ">".join(str(b) for b in path)


class Trace:
    """Collects trace lines in memory; ``frames=False`` keeps only events."""

    def __init__(self, frames=True, oam_frames=False):
        self.frames = frames
        self.oam_frames = oam_frames
        self.lines: List[str] = []

    def frame(self, t, pkt, kind, node, port, frame: Frame, reason=None, path=None):
        if not self.frames:
            return
        parts = [f"FRAME t={fmt_time(t)} pkt={pkt} kind={kind} node={node}",
                 f"port={port if port is not None else '-'} digest={digest(frame)}"]
        if reason is not None:
            parts.append(f"reason={reason}")
        if path is not None:
            parts.append(f"path={fmt_path(path)}")
        self.lines.append(" ".join(parts))

    def event(self, line: str):
        self.lines.append(line)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def write(self, path: Optional[str]):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())
