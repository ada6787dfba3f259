"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class VelsurfError(Exception):
    """Base class for all errors raised by this package."""


class DataError(VelsurfError):
    """Malformed, inconsistent, or physically impossible input data."""


class NumericalError(VelsurfError):
    """A numerical procedure failed (no onset found, solver misuse, ...)."""


class ModelFormatError(DataError):
    """A model or dataset file does not conform to its on-disk format."""


class ModelVersionError(ModelFormatError):
    """The file carries an unknown format version tag."""


class ModelChecksumError(ModelFormatError):
    """The file content does not match its trailing checksum."""
