class ProtocolError(Exception):
    pass


class ProtocolOrderViolation(ProtocolError):
    """An operation was invoked in a phase that does not allow it."""


class MalformedMessage(ProtocolError):
    pass


class TerminalBusy(ProtocolError):
    pass


class DuplicateVehicle(ProtocolError):
    def __init__(self, pseudonym: bytes):
        super().__init__(f"duplicate pseudonym {pseudonym.hex()}")
        self.pseudonym = pseudonym


class UnknownVehicle(ProtocolError):
    pass


class InvalidReport(ProtocolError):
    pass


class ScenarioError(Exception):
    """Bad scenario or registry input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
