"""Error types raised across the frame2video pipeline.

Every error carries the process exit code the CLI should use for it.
"""
from typing import Iterable, Optional, Sequence


class Frame2VideoError(Exception):
    """Base class for all pipeline failures"""
    exit_code = 1


class ConfigurationError(Frame2VideoError, ValueError):
    """Invalid run configuration or unusable inputs for a stage"""
    exit_code = 2


class InvalidInputError(Frame2VideoError, ValueError):
    """Numeric input violates a precondition (e.g. non-finite flow)"""


class ParameterError(Frame2VideoError, ValueError):
    """Operation parameter outside its valid domain"""


class NumericError(Frame2VideoError, ValueError):
    """Non-finite values where finite ones are required"""


class ArityError(Frame2VideoError, ValueError):
    """Too few frames for the requested operation"""


class UndefinedMetricError(Frame2VideoError, ValueError):
    """Metric cannot be computed for the given labels"""


class PaletteMissError(Frame2VideoError, ValueError):
    def __init__(self, missing_ids: Iterable[int]):
        self.missing_ids = sorted(int(i) for i in missing_ids)
        super().__init__(f"class ids not in palette: {self.missing_ids}")


class ShapeError(Frame2VideoError, ValueError):
    def __init__(self, what: str, expected: Sequence, actual: Sequence):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")


class FlowFormatError(Frame2VideoError, ValueError):
    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"{message}{where} (byte offset {offset})")


class DatasetLoadError(Frame2VideoError):
    def __init__(self, message: str, clip_id: Optional[str] = None, path: Optional[str] = None):
        self.clip_id = clip_id
        self.path = path
        context = []
        if clip_id is not None:
            context.append(f"clip '{clip_id}'")
        if path is not None:
            context.append(f"file '{path}'")
        suffix = f" [{', '.join(context)}]" if context else ""
        super().__init__(f"{message}{suffix}")


class OverwriteError(Frame2VideoError):
    """Output directory already holds data and overwriting was not requested"""


class ScriptError(Frame2VideoError, ValueError):
    """Synthetic scene script is inconsistent"""
