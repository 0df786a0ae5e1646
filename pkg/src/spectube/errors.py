"""Exception hierarchy.

Every failure mode raised by the library derives from :class:`SpectubeError`
so callers can catch one base class. Exceptions carry enough context
(indices, locations) to diagnose the offending geometry.
"""


class SpectubeError(Exception):
    """Base class for all spectube errors."""


# ---- mesh / io -------------------------------------------------------------

class ParseError(SpectubeError):
    """Malformed OBJ/PLY input."""


class NonManifoldError(SpectubeError):
    """An edge is shared by more than two faces."""


class DegenerateFaceError(SpectubeError):
    """A face has (near-)zero area, below the 1e-12 mm^2 tolerance."""


class VertexNotOnLoopError(SpectubeError):
    """Requested base vertex does not lie on the requested boundary loop."""


# ---- spectral --------------------------------------------------------------

class EigenSolveFailure(SpectubeError):
    """Iterative eigensolver did not converge within its iteration cap."""


class DisconnectedMeshError(SpectubeError):
    """Mesh has more than one connected component."""


class InsufficientModesError(SpectubeError):
    """Fewer eigenpairs available than requested for spectral evolution."""


class SingularSystemError(SpectubeError):
    """Linear system for the harmonic field is singular."""


# ---- level sets ------------------------------------------------------------

class EmptyLevelSetError(SpectubeError):
    """Iso-value outside the field range on this component."""


class StagnationError(SpectubeError):
    """Gradient tracing stalled before reaching the far boundary."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class EmptyCenterlineError(SpectubeError):
    """Centerline has no points."""


# ---- folds -----------------------------------------------------------------

class TooFewSamplesError(SpectubeError):
    """Curvature profile needs at least 3 curve samples."""


class DegenerateGeometryError(SpectubeError):
    """Plane fit on collinear samples (two near-zero covariance eigenvalues)."""


class NoExtremaError(SpectubeError):
    """Projected curve length is constant in theta: no folds in the bundle."""


# ---- registration ----------------------------------------------------------

class OrientationMismatchError(SpectubeError):
    """Scalar-field minimum not on the designated base boundary after flip."""


class FoldOverError(SpectubeError):
    """Registration map lost injectivity (non-positive Jacobian)."""


# ---- flattening ------------------------------------------------------------

class NoGapError(SpectubeError):
    """A bundle's folds leave no fold-free corridor for the cut."""

    def __init__(self, message, bundle_index=None):
        super().__init__(message)
        self.bundle_index = bundle_index


class DisconnectedCorridorError(SpectubeError):
    """No path between cut waypoints on the fold-free subgraph."""


class FlipError(SpectubeError):
    """Flattening produced flipped faces."""

    def __init__(self, message, flipped_count=0):
        super().__init__(message)
        self.flipped_count = flipped_count


# ---- evaluation ------------------------------------------------------------

class EmptyGroundTruthError(SpectubeError):
    """Ground-truth face set is empty."""


class TooFewLandmarksError(SpectubeError):
    """Need at least 2 landmark pairs for the distance-error protocol."""


# ---- synthesis / config ----------------------------------------------------

class SpecValidationError(SpectubeError):
    """Tube spec or pipeline config outside documented ranges."""


class SelfIntersectionError(SpectubeError):
    """Requested deformation would self-intersect the tube."""
