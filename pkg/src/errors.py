"""
Errors
Exception hierarchy shared by every module, plus the CLI exit codes
"""

from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4


class SineError(Exception):
    """Base class for all errors raised by this package"""

    exit_code = EXIT_RUNTIME


class UsageError(SineError):
    """Bad command-line usage"""

    exit_code = EXIT_USAGE


class ConfigError(SineError, ValueError):
    """A configuration value violates its invariant"""

    exit_code = EXIT_CONFIG

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SchemaError(SineError, ValueError):
    """Input file does not have the expected layout"""


class ParseError(SineError, ValueError):
    """A row of an input file could not be parsed"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NumericError(SineError, ArithmeticError):
    """NaN/Inf produced or consumed, or a division guard tripped"""


class ContractError(SineError):
    """A caller broke an operation's precondition"""


class VocabularyError(SineError, KeyError):
    """Item id not present in the dataset vocabulary"""


class SamplingError(SineError):
    """A sampler has nothing left to draw from"""


class UndefinedMetricError(SineError, ValueError):
    """Metric is undefined for the given input (e.g. a single class)"""


class DegeneracyError(SineError, ValueError):
    """Input is degenerate for the requested statistic"""


class TrainingDivergedError(SineError):
    """Training produced a non-finite loss"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
