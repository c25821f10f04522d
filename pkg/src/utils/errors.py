from typing import Any, Dict, List, Optional


class DomainError(ValueError):
    """Argument outside its mathematical domain."""


class DegenerateInputError(ValueError):
    """Input distribution makes the bound-count chain reducible."""

    def __init__(self, message: str = "degenerate input: chain absorbs into all-unbound"):
        super().__init__(message)


class IllPosedError(ValueError):
    pass


class NumericalRankError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
