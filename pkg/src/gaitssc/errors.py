"""Exception hierarchy shared by every stage of the pipeline."""


class GaitSSCError(Exception):
    """Base class for all package errors."""


class ParseError(GaitSSCError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaError(GaitSSCError, ValueError):
    """Inputs disagree on layout: unknown labels, dimension or schema mismatch."""


class DomainError(GaitSSCError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateChannelError(DomainError):
    """A channel has (near) zero variance and cannot be normalised."""

    def __init__(self, message, channel=None, subject_id=None, cycle_index=None):
        self.channel = channel
        self.subject_id = subject_id
        self.cycle_index = cycle_index
        super().__init__(message)


class SolverError(GaitSSCError, ArithmeticError):
    """Numerical failure inside the ADMM solver."""


class DivergenceError(SolverError):
    """An ADMM iterate became non-finite."""


class SpecError(GaitSSCError, ValueError):
    """A synthetic-data specification is invalid."""


class ConfigError(GaitSSCError, ValueError):
    """A run configuration is invalid."""
