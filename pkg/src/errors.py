"""
Exception types for nbv-grasp-sim
"""

from typing import Optional


class SceneGenerationError(RuntimeError):
    """Raised when a packed scene cannot be placed for a seed."""

    def __init__(self, seed: int, message: str):
        super().__init__(f"Scene generation failed for seed {seed}: {message}")
        self.seed = seed


class NoVisibleObjectError(ValueError):
    """Raised when no object is visible from the initial view."""


class UnreachableViewsError(RuntimeError):
    """Raised when every view candidate is outside the reachable shell."""


class ScenarioParseError(ValueError):
    """Raised for malformed scene or scenario files, with the offending position."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        location = path if line is None else f"{path}:{line}:{column}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line
        self.column = column
