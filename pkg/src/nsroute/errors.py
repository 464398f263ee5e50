"""Exception hierarchy shared by every nsroute module."""


class NsRouteError(Exception):
    """Base class for all errors raised by nsroute."""


class ParseError(NsRouteError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(NsRouteError):
    pass


class UnknownNetwork(NsRouteError, KeyError):
    def __str__(self):
        return f"unknown network {self.args[0]!r}"


class UnknownServer(NsRouteError, KeyError):
    def __str__(self):
        return f"unknown server {self.args[0]!r}"


class MalformedIp(NsRouteError, ValueError):
    pass


class NoCapacity(NsRouteError):
    """No admissible network/server could take the job.

    ``exhausted`` is true when no active host of the application remains
    outside the job's exclusion set, so retrying later cannot help.
    """

    def __init__(self, message, job_id=None, exhausted=False):
        super().__init__(message)
        self.job_id = job_id
        self.exhausted = exhausted


class NoFreeServer(NsRouteError):
    pass


class EmptyTable(NsRouteError):
    pass


class NotBusy(NsRouteError):
    pass


class ProtocolError(NsRouteError):
    pass


class FrameError(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class ExecutorFailure(NsRouteError):
    pass


class ConfigError(NsRouteError):
    pass
