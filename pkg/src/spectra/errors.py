"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpectraError(Exception):
    exit_code = 3


class ParseError(SpectraError):
    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(SpectraError, ValueError):
    exit_code = 3


class IsolatedNodeError(DomainError):
    def __init__(self, node, label=None):
        self.node = node
        name = node if label is None else f"{node} ({label})"
        super().__init__(
            f"node {name} has zero absolute degree; normalized operators are "
            "undefined (use --drop-isolated)"
        )


class ConvergenceError(SpectraError):
    exit_code = 4

    def __init__(self, message, best_residual=float("nan")):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3e})")


class DivergenceError(SpectraError):
    exit_code = 5
