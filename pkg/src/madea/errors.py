"""Exception taxonomy shared across the package.

Every error raised on purpose derives from MadeaError so callers (and the
fuzz tests) can distinguish "rejected input" from an actual crash.
"""


class MadeaError(Exception):
    """Base class for all errors raised by this package."""


# --- capture files -----------------------------------------------------------

class PcapError(MadeaError):
    pass


class BadMagic(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class FrameTooShort(PcapError):
    """Frame shorter than an Ethernet header; nothing can be decoded."""


# --- DNS ---------------------------------------------------------------------

class DnsError(MadeaError):
    pass


class MalformedDns(DnsError):
    pass


class NotAResponse(DnsError):
    """QR bit is 0: a query, not a response. Signals skip, not failure."""


# --- trace synthesis ---------------------------------------------------------

class InvalidSpec(MadeaError):
    pass


# --- profiles ----------------------------------------------------------------

class ParseError(MadeaError):
    """Malformed row in a persisted CSV; carries the 1-based row number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


class BothMonitored(MadeaError):
    """Source and destination MAC are both monitored devices."""


class MacMismatch(MadeaError):
    pass


# --- attestation wire protocol -----------------------------------------------

class WireError(MadeaError):
    """Framing or schema problem in an attestation message."""


class FrameTooLarge(WireError):
    pass


class ShortFrame(WireError):
    pass


class ExtraData(WireError):
    pass


class BadJson(WireError):
    pass


class UnknownType(WireError):
    pass


class ReportMismatch(WireError):
    """Report names a different device than the request it answers."""


# --- attestation verification ------------------------------------------------

class AttestationError(MadeaError):
    pass


class BadSignature(AttestationError):
    pass


class StaleChallenge(AttestationError):
    """Challenge unknown, already consumed, or for another request."""


class Timeout(AttestationError):
    """No report arrived before the deadline."""


# --- reporting ---------------------------------------------------------------

class NoLabels(MadeaError):
    """Ground-truth labels are required for this rate but were not given."""
