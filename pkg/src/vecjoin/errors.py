"""Exception types raised across the package."""


class VecJoinError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VecJoinError, ValueError):
    """Invalid parameters, mismatched dimensions or inconsistent inputs."""


class FormatError(VecJoinError):
    """A binary file is malformed: bad header, truncated payload, bad field."""


class VersionError(FormatError):
    """Magic bytes or format version do not match what the reader expects."""
