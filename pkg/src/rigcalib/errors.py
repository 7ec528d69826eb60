"""Exception and warning types shared across the calibration toolkit."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CalibrationError):
    """A pose CSV, cloud PLY, or config file could not be parsed.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f" in {path}"
        if line is not None:
            loc += f" at line {line}"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class FrameMismatch(CalibrationError):
    """Timestamps of paired inputs (pose files, cloud manifests) differ."""


class TooFewInliers(CalibrationError):
    """Screw-motion filtering left too few pairs to constrain the solvers."""


class DegenerateMotion(CalibrationError):
    """The motion set fails to constrain some extrinsic degrees of freedom."""


class EmptyScan(CalibrationError):
    """No simulated ray hit any scene patch (degenerate scene placement)."""


class EmptyCloud(CalibrationError):
    """An operation requiring points received an empty cloud."""


class DegenerateGeometry(CalibrationError):
    """Sampled points are collinear; no plane can be fit."""


class NoGroundOverlap(CalibrationError):
    """Every frame lacks ground inliers on one side or the other."""


class InsufficientCorrespondences(CalibrationError):
    """ICP accepted fewer point pairs than needed for a 6-DOF update."""


class NormalEstimationFailure(CalibrationError):
    """A target neighborhood is rank-deficient; its normal is undefined."""


class NoUsableFrames(CalibrationError):
    """No frame passed the overlap gate and converged in registration."""


class GimbalDegenerate(UserWarning):
    """Yaw/pitch-roll factorization is non-unique (pitch at +-pi/2).

    Emitted as a warning; the decomposition proceeds on the zero-yaw branch.
    """
