"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad user input: malformed data, inconsistent shapes, invalid options."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed (non-PD matrix, saturated fit, ...).

    ``diagnostics`` carries a JSON-serializable dict describing the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
