"""Exception types shared across the package."""


class MeshError(ValueError):
    """Invalid mesh arguments or topology."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GeometryError(ValueError):
    """The overlapping-mesh configuration cannot be handled."""


class UnsupportedGeometryError(GeometryError):
    pass


class OverlapError(GeometryError):
    """Two submesh footprints intersect."""


class HaloError(GeometryError):
    """Halo thinner than cut front: a cut background cell touches the submesh core."""


class InvalidStepError(GeometryError):
    """A design update produced an inverted or degenerate cell."""


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class LineSearchError(RuntimeError):
    def __init__(self, message, evaluations=0):
        super().__init__(message)
        self.evaluations = evaluations


class ConfigError(ValueError):
    pass
