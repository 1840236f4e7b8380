"""Exception hierarchy shared by every module.

Each class maps to one machine-readable error class name that the CLI prints
on failure (``error: <ClassName>: <message>``).
"""


class MdcError(Exception):
    """Base class for all domain errors."""


class BoundsError(MdcError, IndexError):
    pass


class ShapeError(MdcError, ValueError):
    pass


class IncompatibleError(MdcError, ValueError):
    """Inputs that must agree on skeleton or sample rate do not."""


class ParseError(MdcError, ValueError):
    pass


class SchemaError(MdcError, ValueError):
    pass


class ConfigError(MdcError, ValueError):
    pass


class DivergenceError(MdcError, FloatingPointError):
    pass


class IngestionError(MdcError):
    pass


class DegenerateFrameError(MdcError, ValueError):
    def __init__(self, frame: int, message: str = ""):
        self.frame = frame
        super().__init__(message or f"degenerate sensor frame at index {frame}")


class AliasingError(MdcError, ValueError):
    def __init__(self, frame: int, angle: float):
        self.frame = frame
        self.angle = angle
        super().__init__(
            f"rotation of {angle:.4f} rad between frames {frame} and {frame + 1} "
            "is >= pi; increase the sample rate"
        )
