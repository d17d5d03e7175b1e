"""
bridgesim: a deterministic discrete-event simulator of a bridged Ethernet
network whose forwarding tables are shared between a distributed
shortest-path-bridging control plane and a central SDN controller, with
VLAN-to-MSTI allocation deciding which plane owns each table.
"""

from .frames import FORMAT_VERSION, Frame, ITag, MacAddress, VlanTag, decode, encode
from .scenario import load, run

__version__ = "0.1.0"

__all__ = ["FORMAT_VERSION", "Frame", "ITag", "MacAddress", "VlanTag", "decode", "encode", "load", "run"]
