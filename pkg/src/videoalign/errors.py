"""Exception types shared across the package."""


class VideoAlignError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(VideoAlignError, ValueError):
    def __init__(self, what: str, expected, got):
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.got}")


class EmptySelectionError(VideoAlignError, ValueError):
    """Raised when an operation needs at least one valid pixel/point and has none."""


class DivergenceError(VideoAlignError, FloatingPointError):
    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        self.value = value
        super().__init__(f"energy became non-finite ({value}) at iteration {iteration}")


class DegenerateInputError(VideoAlignError, ValueError):
    """Raised for inputs that admit no unique solution (e.g. zero-spread trajectories)."""


class FormatError(VideoAlignError, ValueError):
    """Raised when a file does not follow the expected on-disk layout."""
