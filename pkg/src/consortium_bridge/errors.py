class ConfigurationError(ValueError):
    """Invalid simulation or scenario configuration."""


class ArgumentError(ValueError):
    """Inconsistent arguments passed to a protocol operation."""


class DecodeError(ValueError):
    """A serialized group element or envelope could not be decoded."""


class DecryptionError(Exception):
    """Authenticated decryption failed (wrong key or tampered ciphertext)."""


class TransactionRejected(ValueError):
    """A transaction failed validation and will never be committed."""


class ContractError(Exception):
    """Raised inside a contract procedure; the transaction leaves state unchanged."""


class VersionError(LookupError):
    """A state version that does not exist (yet) was requested."""
