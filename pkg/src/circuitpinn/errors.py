"""Exception types shared across the package."""


class CircuitPinnError(Exception):
    """Base class for every error raised by this package."""


class NetlistError(CircuitPinnError, ValueError):
    """Problem with netlist text; ``line`` is 1-based, 0 when not tied to a line."""

    def __init__(self, reason: str, line: int = 0) -> None:
        self.reason = reason
        self.line = line
        super().__init__(f"line {line}: {reason}" if line else reason)


class NetlistSyntaxError(NetlistError):
    """A statement that does not match the grammar."""


class ValidationError(NetlistError):
    """A well-formed netlist that violates a circuit invariant."""


class StructureError(CircuitPinnError):
    """The circuit cannot form a well-posed DAE (e.g. a floating capacitive node)."""


class DomainError(CircuitPinnError, ArithmeticError):
    """A primitive was evaluated outside its domain (e.g. log of a non-positive value)."""


class NonFiniteError(CircuitPinnError, FloatingPointError):
    """NaN or Inf detected; ``node`` is the tape index and ``epoch`` the training step, if known."""

    def __init__(self, message: str, node: int | None = None, epoch: int | None = None,
                 best_params=None) -> None:
        super().__init__(message)
        self.node = node
        self.epoch = epoch
        self.best_params = best_params


class ConfigError(CircuitPinnError, ValueError):
    """Invalid solver or training configuration."""


class ConvergenceError(CircuitPinnError):
    """Newton iteration failed to reach tolerance."""

    def __init__(self, message: str, iterations: int = 0, norm: float = float("nan"),
                 step: int | None = None, trace: list[float] | None = None) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.norm = norm
        self.step = step
        self.trace = trace or []
