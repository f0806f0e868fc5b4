"""Exception types shared across the toolkit.

ValidationError covers contract violations on in-memory inputs and on the
*content* of input files; FormatError is its file-parsing specialization.
Filesystem problems surface as the usual OSError family.  The CLI maps
ValidationError to exit code 1 and OSError to exit code 2.
"""


class ValidationError(ValueError):
    """A precondition or invariant on input values was violated."""


class FormatError(ValidationError):
    """An input file is structurally malformed (bad header, bad field, ...)."""


class JobCancelled(Exception):
    """Raised inside a long-running computation when a cancel was requested."""
