"""
Exceptions raised by fedsim.

The management command maps these onto process exit codes, so every failure
a user can cause lands in one of the classes below.
"""


class ConfigurationError(ValueError):
    """An experiment, hyperparameter, or shape is invalid."""


class NonFiniteError(ConfigurationError):
    """A matrix or vector holds NaN or Inf values."""


class SchemaError(ValueError):
    """Input data does not match the expected columns or label vocabulary."""


class EmptyDatasetError(SchemaError):
    """No rows survived loading or filtering."""


class InternalError(RuntimeError):
    """A state invariant of the round engine was broken."""


class DivergenceError(ArithmeticError):
    """Local training produced a non-finite loss.

    The round engine fills in `round` and `client_id` as the error travels up.
    """

    def __init__(self, message, *, step=None, round=None, client_id=None):
        self.message = message
        self.step = step
        self.round = round
        self.client_id = client_id
        super().__init__(message)

    def with_context(self, **context):
        for key, value in context.items():
            setattr(self, key, value)
        return self

    def __str__(self):
        context = ", ".join(
            f"{key}={getattr(self, key)}"
            for key in ("round", "client_id", "step")
            if getattr(self, key) is not None
        )
        return f"{self.message} ({context})" if context else self.message
