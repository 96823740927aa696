"""Exception hierarchy shared by every module."""


class SimError(Exception):
    """Base class for all errors raised by zswapsim."""


class DataError(SimError):
    """Bad input data (trace files, JSON documents, reports). CLI exit code 2."""


class TraceFormatError(DataError):
    pass


class TraceCorruptionError(DataError):
    def __init__(self, ordinal, offset, message="checksum mismatch"):
        super().__init__(f"record {ordinal} at byte {offset}: {message}")
        self.ordinal = ordinal
        self.offset = offset


class TraceTruncatedError(DataError):
    def __init__(self, ordinal, offset):
        super().__init__(f"record {ordinal} truncated at byte {offset}")
        self.ordinal = ordinal
        self.offset = offset


class TraceWriteError(SimError, OSError):
    def __init__(self, offset, cause):
        super().__init__(f"write failed at byte {offset}: {cause}")
        self.offset = offset


class SpecificationError(DataError):
    """A generator spec or scheme config that cannot be satisfied."""


class CodecError(DataError):
    def __init__(self, chunk_index, message="malformed chunk"):
        super().__init__(f"chunk {chunk_index}: {message}")
        self.chunk_index = chunk_index


class CapacityError(SimError):
    """Not enough room in the zpool or on the swap device."""

    def __init__(self, shortfall, message=None):
        super().__init__(message or f"insufficient space, short by {shortfall} bytes")
        self.shortfall = shortfall


class LookupFailure(SimError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "lookup failed"


class ProtocolError(SimError):
    """Events or calls arriving in an order the state machine does not accept."""


class FaultError(DataError):
    """A demand fault on a page the engine has never seen."""


class InsufficientDataError(DataError):
    pass


class ComparisonError(DataError):
    pass
