"""Discrete-event simulation harness."""

from .engine import EventKind, SimEvent, Simulator
from .trace import Trace

__all__ = ["EventKind", "SimEvent", "Simulator", "Trace", "Network", "Host", "Delivery", "DropRecord"]


def __getattr__(name):
    # network pulls in the control planes, which themselves use the engine
    if name in ("Network", "Host", "Delivery", "DropRecord"):
        from . import network
        return getattr(network, name)
    raise AttributeError(name)
