"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
IntegrityError -> 3, LifecycleError -> 4.
"""


class ChunkVaultError(Exception):
    """Base class for all package errors."""


class ValidationError(ChunkVaultError):
    """Malformed input, bad configuration, or violated precondition."""


class IntegrityError(ChunkVaultError):
    """Content failed a hash/authentication check, or stored bytes diverged."""


class AuthenticationError(IntegrityError):
    """AEAD tag verification failed (wrong key or tampered manifest)."""


class LifecycleError(ChunkVaultError):
    """Operation not allowed in the target root's current state."""


class NotFoundError(ChunkVaultError):
    """Requested object does not exist."""


class InsufficientStripesError(ChunkVaultError):
    """Fewer than k stripes available for reconstruction."""
