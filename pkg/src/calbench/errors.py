"""Exception hierarchy shared by every module.

All domain failures derive from :class:`CalbenchError` so the CLI can map them
to exit code 1 without swallowing programming errors.
"""


class CalbenchError(Exception):
    """Base class for domain errors."""


class NonConvergent(CalbenchError):
    """Undistortion iteration did not converge."""


class BehindCamera(CalbenchError):
    """A point or intersection lies at non-positive depth."""


class Parallel(CalbenchError):
    """Ray is (numerically) parallel to the board plane."""


class NotOrthonormal(CalbenchError, ValueError):
    """Matrix is not a proper rotation."""


class InvalidSpec(CalbenchError, ValueError):
    """Invalid pattern, trajectory, environment or run configuration."""


class Exhausted(CalbenchError):
    """Marker dictionary constraints could not be satisfied."""


class DegenerateUp(CalbenchError):
    """Up hint is parallel to the viewing direction."""


class AllOutOfView(CalbenchError):
    """No control point is visible in a rendered frame."""


class TooFewPoints(CalbenchError):
    """Fewer than four correspondences survive in a view."""


class Missing(CalbenchError):
    """Blob detection failed to match one or more seeds."""

    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"no blob matched seed ids {self.ids[:10]}{'...' if len(self.ids) > 10 else ''}")


class NotASaddle(CalbenchError):
    """Intensity patch has no saddle point near the seed."""


class Degenerate(CalbenchError):
    """Degenerate point configuration (collinear points, rank-deficient H)."""


class IllConditioned(CalbenchError):
    """Closed-form intrinsic estimation is ill-posed for the given views."""


class NumericalFailure(CalbenchError):
    """Non-finite residual or Jacobian during optimisation."""


class RACDegenerate(CalbenchError):
    """Radial alignment constraint system is singular for this view."""


class NoSharedFrames(CalbenchError):
    """Two calibration results share no frame."""


class FrameMismatch(CalbenchError):
    """Result and observations refer to different frames or points."""


class LengthMismatch(CalbenchError, ValueError):
    """Point lists differ in length."""


class ShapeMismatch(CalbenchError, ValueError):
    """Joint sets differ in shape."""


class ParallelRays(CalbenchError):
    """Two viewing rays are too close to parallel for triangulation."""


class SchemaMismatch(CalbenchError):
    """Dataset schema version is not supported."""


class MissingFile(CalbenchError):
    """A file referenced by the dataset layout does not exist."""


class CorruptJson(CalbenchError):
    """A dataset JSON file could not be parsed."""


class DatasetExists(CalbenchError):
    """Target directory already holds a dataset and overwrite was not requested."""
