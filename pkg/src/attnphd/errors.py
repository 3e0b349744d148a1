"""Exception hierarchy. Every error the package raises on bad input derives
from :class:`ArtifactError` so the CLI can map it to exit status 2."""


class ArtifactError(ValueError):
    pass


class DegenerateBox(ArtifactError):
    pass


class InvalidN(ArtifactError):
    pass


class DimensionMismatch(ArtifactError):
    pass


class NonFinite(ArtifactError):
    pass


class DegenerateRegion(ArtifactError):
    pass


class NonNormalized(ArtifactError):
    pass


class MissingImage(ArtifactError):
    pass


class SingularInnovation(ArtifactError):
    pass


class ZeroMass(ArtifactError):
    pass


class EmptyGroundTruth(ArtifactError):
    pass


class UnsupportedFormat(ArtifactError):
    pass


class ConfigError(ArtifactError):
    pass


class FrameOrderError(ArtifactError):
    pass


class MalformedRow(ArtifactError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
