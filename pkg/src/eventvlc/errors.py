"""Exception types raised across the receiver chain."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class OutOfView(ValueError):
    """A world point cannot be projected (non-positive depth)."""


class SyncFailed(RuntimeError):
    """Preamble correlation peak was not distinct enough to trust."""


class TrackingLost(RuntimeError):
    """Consecutive presence maps share no overlapping support."""


class ClusterAbsent(RuntimeError):
    """No grid cell exceeded the presence threshold for a cluster."""


class DecodeFailure(RuntimeError):
    """The integrated information vector carries no energy."""
