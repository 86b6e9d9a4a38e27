"""Exception types shared across the package.

All of them subclass ValueError so callers who do not care about the
distinction can catch a single builtin type.
"""


class RbmTomoError(ValueError):
    """Base class for all errors raised by this package."""


class StructuralError(RbmTomoError):
    """Inconsistent dimensions or malformed containers."""


class CapacityError(RbmTomoError):
    """Request exceeds the exact-enumeration limit."""


class DomainError(RbmTomoError):
    """Arguments are outside an operation's domain (bad values, not shapes)."""
