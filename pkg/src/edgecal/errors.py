"""Exception hierarchy for edgecal.

Every error raised on a contract violation derives from :class:`EdgecalError`
so callers (and the CLI) can map failures to exit codes without matching on
message strings.
"""


class EdgecalError(Exception):
    """Base class for all edgecal errors."""


class ConfigError(EdgecalError):
    """Invalid run configuration (bad paths, unparseable values, missing keys)."""


class ParseError(EdgecalError):
    """A data file is syntactically invalid (carries file/line context in the message)."""


class UnsupportedFormat(EdgecalError):
    """A data file is recognized but uses an unsupported variant (e.g. compressed PCD)."""


class MissingKey(ConfigError):
    """A required key is absent from an intrinsics or config file."""


class EmptyCloud(EdgecalError):
    """Point cloud contains no usable points."""


class EmptyImage(EdgecalError):
    """Image has zero width or height."""


class BehindCamera(EdgecalError):
    """Point is at or behind the near plane and cannot be projected."""


class OutOfFrame(EdgecalError):
    """Projection lands outside the image bounds."""


class NoEdgesFound(EdgecalError):
    """Edge extraction produced no 3-D edges."""


class NoVisibleEdges(EdgecalError):
    """No ground-truth edge is visible from the camera pose."""


class NearParallel(EdgecalError):
    """Two planes are too close to parallel to intersect reliably."""


class InsufficientPixels(EdgecalError):
    """Fewer pixels than required for an image-side operation."""


class DegeneratePoints(EdgecalError):
    """Point set has no usable scatter (all points coincident)."""


class TooFewCorrespondences(EdgecalError):
    """Not enough LiDAR-image correspondences to constrain the extrinsic."""


class RankDeficient(EdgecalError):
    """Normal-equation matrix is rank deficient; the scene does not constrain all axes."""


class NotConverged(EdgecalError):
    """Optimizer hit the iteration cap before the step norm fell below tolerance."""
