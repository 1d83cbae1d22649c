"""
Error hierarchy shared by the library and the command line.

Every error carries a short machine-readable ``code`` and a ``details`` dict, so the
CLI can render ``ERROR[<code>]: <message>`` and pick an exit status without parsing
messages.
"""
from typing import Any, Dict, Optional


class PathweightError(Exception):
    """Base class for all pathweight failures"""

    code = "error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class RejectedInputError(PathweightError, ValueError):
    """Arguments violate an operation's preconditions"""

    code = "input"


class ConfigError(PathweightError):
    code = "config"


class NumericalError(PathweightError):
    code = "numerical"


class SimulationBlowUp(NumericalError):
    """A path produced a NaN or infinite state"""

    def __init__(self, path_index: int, step: int, time: float):
        super().__init__(
            f"non-finite state on path {path_index} at step {step} (t={time:.6g})",
            {"path_index": path_index, "step": step, "time": time},
        )
        self.path_index = path_index
        self.step = step


class IncompleteBatchError(NumericalError):
    """A stopped batch has paths that never left the domain before the time cap"""


class PdeError(NumericalError):
    """Grid or boundary inadequate for the requested solve"""


class MissingAccumulatorError(NumericalError):
    """A batch lacks the auxiliary integrals an estimator needs"""
