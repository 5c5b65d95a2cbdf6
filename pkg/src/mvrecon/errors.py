"""Exception hierarchy for the reconstruction pipeline."""


class MvreconError(Exception):
    """Base class for all library errors."""


# --- SfM model I/O ---

class MissingFile(MvreconError):
    pass


class MalformedRecord(MvreconError):
    """A camera/image/point record could not be parsed (carries line or byte offset)."""


class BrokenReference(MvreconError):
    """An id referenced by one record does not exist in the model."""


class UnsupportedCameraModel(MvreconError):
    pass


class IoFailure(MvreconError):
    pass


# --- geometry ---

class UnknownImage(MvreconError):
    pass


# --- conditioning ---

class EmptySparseDepth(MvreconError):
    pass


class DegenerateRange(MvreconError):
    pass


class TooFewPoints(MvreconError):
    pass


# --- depth providers ---

class MissingPrediction(MvreconError):
    pass


class NoGroundTruth(MvreconError):
    pass


class ShapeMismatch(MvreconError):
    pass


class DomainMismatch(MvreconError):
    pass


# --- alignment ---

class TooFewSamples(MvreconError):
    pass


class DegenerateSamples(MvreconError):
    pass


class NoPositiveScaleModel(MvreconError):
    pass


# --- fusion ---

class EmptyVolume(MvreconError):
    pass


class TooFewViews(MvreconError):
    pass


# --- evaluation ---

class EmptyPointSet(MvreconError):
    pass


class NoOverlap(MvreconError):
    pass


class EmptyMesh(MvreconError):
    pass


# --- synthetic scenes ---

class InvalidSpec(MvreconError):
    pass
