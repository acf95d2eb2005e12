"""Exception types shared across the engine.

Every error raised by sparsekern derives from :class:`SparsekernError`, so
callers (and the CLI) can distinguish domain failures from genuine bugs.
"""


class SparsekernError(Exception):
    """Base class for all sparsekern domain errors."""


class DuplicateCoord(SparsekernError):
    """A coordinate appears more than once in a sparse tensor."""

    def __init__(self, coord):
        self.coord = tuple(int(c) for c in coord)
        super().__init__(f"duplicate coordinate {self.coord}")


class InfeasibleScene(SparsekernError):
    """Requested more unique voxels than the extent holds."""


class EmptyScene(SparsekernError):
    """No voxels survived construction (e.g. all points outside range)."""


class FormatError(SparsekernError):
    """Malformed SPVX/SPWT stream. `offset` is the failing byte position."""

    def __init__(self, message, offset):
        self.offset = int(offset)
        super().__init__(f"{message} (byte offset {self.offset})")


class InvalidKernelSize(SparsekernError):
    """Kernel size is even, non-positive, or otherwise unusable."""


class InvalidStride(SparsekernError):
    """Convolution stride must be a positive integer."""


class PartitionMismatch(SparsekernError):
    """Kernel map, group map and layer disagree about the partition."""


class ShapeError(SparsekernError):
    """Feature/weight/gradient arrays have inconsistent shapes."""


class ChannelChainError(SparsekernError):
    """Consecutive net blocks disagree about channel counts."""


class TargetNotFound(SparsekernError):
    """Requested output coordinate/channel is not present."""


class LabelError(SparsekernError):
    """A training label is outside the valid class range."""
