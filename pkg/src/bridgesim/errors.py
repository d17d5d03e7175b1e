"""Exception hierarchy shared across the simulator."""


class BridgeSimError(Exception):
    pass


# frames
class FrameError(BridgeSimError, ValueError):
    pass


class OrderViolation(FrameError):
    pass


class DuplicateTagKind(FrameError):
    pass


class NoTagPresent(FrameError):
    pass


class NestedEncapsulation(FrameError):
    pass


class NotEncapsulated(FrameError):
    pass


class MalformedEncoding(FrameError):
    pass


# control-plane coexistence
class OwnershipViolation(BridgeSimError):
    """A control plane tried to touch state owned by the other plane."""

    def __init__(self, actor, owner, what=""):
        self.actor = actor
        self.owner = owner
        msg = f"{actor} may not modify {owner}-owned state"
        if what:
            msg += f" ({what})"
        super().__init__(msg)


# topology
class UnknownLink(BridgeSimError, KeyError):
    pass


class UnknownBridge(BridgeSimError, KeyError):
    pass


class UnknownMsti(BridgeSimError, KeyError):
    pass


class UnknownVid(BridgeSimError, KeyError):
    pass


class VlanInUse(BridgeSimError):
    pass


# controller
class NoSpbAvailable(BridgeSimError):
    pass


class InvalidPath(BridgeSimError):
    pass


class CycleRefused(InvalidPath):
    pass


class ResourceExhausted(BridgeSimError):
    pass


class UnknownPort(BridgeSimError, KeyError):
    pass


class UnknownBinding(BridgeSimError, KeyError):
    pass


class UnknownAttachment(BridgeSimError, KeyError):
    pass


class PathRequired(BridgeSimError):
    pass


class InstallFailed(BridgeSimError):
    def __init__(self, bridge, cause):
        self.bridge = bridge
        self.cause = cause
        super().__init__(f"install failed at bridge {bridge}: {cause}")


# protection
class PathsNotDisjoint(BridgeSimError):
    pass


# flowmap
class EmptyHashRange(BridgeSimError, ValueError):
    pass


class DuplicatePriority(BridgeSimError, ValueError):
    pass


# scenario
class ScenarioError(BridgeSimError):
    """Invalid scenario input; ``field`` names the offending location."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
