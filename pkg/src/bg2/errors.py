"""Exception and warning types shared across the toolkit."""


class Bg2Error(Exception):
    """Base class for all toolkit errors."""


# --- geometry ---

class BehindCamera(Bg2Error):
    """Point is at or behind the camera plane (depth <= epsilon)."""


class DegenerateTorso(Bg2Error):
    """Torso joints coincide; no orthonormal frame can be built."""


# --- cloth simulation ---

class MixedExcluded(Bg2Error):
    """Mixed (alternating standing/lying) sequences are rejected outright."""


class NumericalBlowup(Bg2Error):
    """Cloth state became non-finite or absurdly large; parameters unstable."""


class ClothTooSmallWarning(UserWarning):
    """Initial blanket plane does not cover the body footprint."""


# --- texture ---

class BadRange(Bg2Error):
    """Sampling range with lo > hi."""


# --- rendering / compositing ---

class DimensionMismatch(Bg2Error):
    """Image or buffer dimensions do not agree."""


class CorruptLayer(Bg2Error):
    """A rendered layer file could not be decoded."""


# --- metrics ---

class EmptyJoints(Bg2Error):
    """No joints supplied where at least one is required."""


class JointSetMismatch(Bg2Error):
    """Prediction and ground truth carry different joint name sets."""


class DegenerateNormalizer(Bg2Error):
    """Head and thorax coincide; the error normalizer is undefined."""


class MissingSourceJoint(Bg2Error):
    """Skeleton map references a joint absent from the source record."""


class FrameMismatch(Bg2Error):
    """Prediction and ground truth frame id sets differ."""

    def __init__(self, missing=(), extra=()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"frame ids mismatch: missing from predictions {self.missing}, "
            f"extra in predictions {self.extra}"
        )


class ModelCountMismatch(Bg2Error):
    """A report test set does not have exactly two model rows."""


# --- pipeline ---

class ManifestError(Bg2Error):
    """Job manifest is malformed or violates an invariant."""


class MissingBake(Bg2Error):
    """Render stage invoked before the bake artifacts exist."""


class MissingSourceFrame(Bg2Error):
    """A source video frame needed for compositing is not on disk."""


class InconsistentManifest(Bg2Error):
    """Output tree bookkeeping does not add up."""
