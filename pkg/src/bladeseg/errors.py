"""Exception hierarchy shared across the pipeline."""


class BladeSegError(Exception):
    pass


class InvalidSpec(BladeSegError, ValueError):
    """A scene/turbine/defect/camera spec violates an invariant.

    ``field`` names the offending attribute.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidConfig(BladeSegError, ValueError):
    pass


class ShapeMismatch(BladeSegError, ValueError):
    pass


class OddSpatialDims(ShapeMismatch):
    pass


class MalformedHeader(BladeSegError, ValueError):
    pass


class TruncatedPayload(BladeSegError, ValueError):
    pass


class ModelFileError(BladeSegError, ValueError):
    pass


class BadMagic(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    pass


class TruncatedFile(ModelFileError):
    pass


class EmptyDataset(BladeSegError, ValueError):
    pass


class InvalidK(BladeSegError, ValueError):
    pass
