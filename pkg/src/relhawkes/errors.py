"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Malformed input: bad sequences, graphs, configs or file records."""


class DomainError(ValidationError):
    """A parameter lies outside the domain of the requested function."""


class SupercriticalError(ValidationError):
    """Simulation requested for a branching ratio >= 1."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value.

    ``subject_id`` and ``block`` identify where it happened when known.
    """

    def __init__(self, message, subject_id=None, block=None):
        super().__init__(message)
        self.subject_id = subject_id
        self.block = block


class NumericWarning(RuntimeWarning):
    """A last-resort numerical guard (clamp, skipped update) fired."""
