"""Exception hierarchy for the weaves runtime.

Every error carries a short ``code`` that the monitor reports verbatim as
``ERR <code>``.
"""
from dataclasses import dataclass
from typing import List, Optional


class WeaveError(Exception):
    code = "internal"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    @property
    def message(self) -> str:
        return str(self)


class DuplicateName(WeaveError):
    code = "duplicate-name"


class SchemaMismatch(WeaveError):
    code = "schema-mismatch"


class UnknownReference(WeaveError):
    code = "unknown-reference"


class ModuleNotInWeave(WeaveError):
    code = "module-not-in-weave"


class MultiValuedSymbol(WeaveError):
    code = "multi-valued-symbol"


class LateDeclaration(WeaveError):
    code = "late-declaration"


class TupleOverlap(WeaveError):
    code = "tuple-overlap"


class RuntimeMisuse(WeaveError):
    code = "runtime-misuse"


class FabricError(WeaveError):
    code = "fabric"


class BrokenBarrier(FabricError):
    code = "broken-barrier"


class CalibrationError(WeaveError):
    code = "calibration"


class DecompositionError(WeaveError):
    code = "invalid-decomposition"


class MonitorError(WeaveError):
    code = "parse"


class NonConvergence(WeaveError):
    code = "non-convergence"

    def __init__(self, message: str, history: Optional[List[float]] = None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def render(self, filename: str = "<tapestry>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.message}"


class PlanError(WeaveError):
    """Tapestry file or plan failed to parse/validate."""

    code = "parse"

    def __init__(self, diagnostics: List[Diagnostic], filename: str = "<tapestry>", code: Optional[str] = None):
        self.diagnostics = list(diagnostics)
        self.filename = filename
        super().__init__("; ".join(d.render(filename) for d in self.diagnostics), code)

    def render(self) -> str:
        return "\n".join(d.render(self.filename) for d in self.diagnostics)
