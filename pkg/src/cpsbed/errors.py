"""Exception types shared across the testbed."""


class DecodeError(ValueError):
    """A codec rejected its input.

    ``code`` is a short stable identifier (``"bad-checksum"``, ``"too-short"``...)
    used in fuzz histograms and tests; the message carries detail.
    """

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class ConfigError(ValueError):
    """A scenario or topology file could not be loaded."""


class TransportError(OSError):
    """The network transport failed (as opposed to the peer staying silent)."""
