"""Common error base for the nde4 package.

Every domain error raised by nde4 modules derives from Nde4Error so callers
(and the CLI) can distinguish domain failures from programming errors.
"""


class Nde4Error(Exception):
    """Base class for all nde4 domain errors."""


class ValidationFailed(Nde4Error):
    """An input failed validation; carries the report when one exists."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
