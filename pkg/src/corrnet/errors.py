"""Exception types shared across the toolkit."""


class CorrnetError(Exception):
    """Base class for all toolkit errors."""


class DegeneratePoint(CorrnetError):
    """Projected homogeneous coordinate vanished (point at infinity)."""


class SamplerExhausted(CorrnetError):
    """Rejection sampling could not satisfy crop constraints."""


class DegenerateKeypoint(CorrnetError):
    """Keypoint too close to the image border for patch extraction."""


class ShapeMismatch(CorrnetError):
    """Input array shape incompatible with the model."""


class NoGradientPath(CorrnetError):
    """Requested scalar does not depend on the traced input."""


class VersionMismatch(CorrnetError):
    """Checkpoint written with an incompatible schema version."""


class InvalidPairing(CorrnetError):
    """Positive-pair index is not a fixed-point-free involution."""


class NonFiniteLoss(CorrnetError):
    """Training loss became NaN or infinite."""


class InsufficientMatches(CorrnetError):
    """Fewer matches than the minimal sample size of the estimator."""


class DegenerateConfiguration(CorrnetError):
    """All minimal samples were degenerate (e.g. collinear points)."""


class EmptyDetections(CorrnetError):
    """No keypoints available where at least one is required."""


class MalformedSequence(CorrnetError):
    """Benchmark sequence directory is missing images or homography files."""
