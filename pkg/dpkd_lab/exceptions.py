"""
Exception hierarchy shared by services and controllers
"""
from typing import Optional


class LabError(Exception):
    """Base class for every error the lab raises on purpose"""


class DomainError(LabError, ValueError):
    """Input outside an operation's domain"""


class CapacityError(LabError):
    """Exhaustive enumeration would exceed the configured budget"""


class NumericError(LabError):
    """Objective produced a non-finite value"""


class ParseError(LabError):
    """Malformed input file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(LabError):
    """Well-formed record with missing or invalid fields"""

    def __init__(self, key: str, line: Optional[int] = None, message: Optional[str] = None):
        self.key = key
        self.line = line
        text = message or f"missing key '{key}'"
        if line is not None:
            text = f"line {line}: {text}"
        super().__init__(text)
