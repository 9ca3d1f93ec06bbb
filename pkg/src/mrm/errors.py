"""Exception types shared across the package."""


class MRMError(Exception):
    """Base class for all library errors."""


class MachineFormatError(MRMError):
    """A machine program file failed to parse or validate."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class MalformedRow(MRMError):
    """A row does not carry exactly one head where one is required."""


class HeadOutOfBounds(MRMError):
    """A transition would move the head left of column 1."""


class SpaceExceeded(MRMError):
    """The machine needs more than S tape cells."""


class TimeExceeded(MRMError):
    """The machine did not halt within T - 1 steps."""


class InputTooLong(MRMError):
    """The input does not fit in the first block's left margin."""


class OutputTooLarge(MRMError):
    """The halting configuration is not confined to the first block."""


class MultipleHeads(MRMError):
    """More than one head appears in a block window."""


class NoHead(MRMError):
    """A blank row was asked for its active block."""


class OutOfRange(MRMError):
    """A node address or (row, block) coordinate is outside the grid."""


class DivergesOutsideWindow(MRMError):
    """Consecutive rows differ outside the declared update window."""


class IncompleteBundle(MRMError):
    """A path bundle is missing a value needed for the consistency check."""


class MalformedBlock(MRMError):
    """Block bytes have the wrong length or undecodable content."""


class ProtocolViolation(MRMError):
    """An agent produced a malformed or missing arbitration response."""

    def __init__(self, agent, message):
        super().__init__(f"agent {agent}: {message}")
        self.agent = agent


class EmptyInterval(MRMError):
    """No admissible base surplus b exists for the given parameters."""


class InvalidChoice(MRMError):
    """An explicitly chosen b lies outside the admissible interval."""
