"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A parameter combination is outside the model's validity range."""


class CalibrationError(ValueError):
    """Link calibration is impossible from the given measurements."""


class NoMultiphotonEventsError(RuntimeError):
    """No two-detector coincidences observed; the reduction factor is unbounded."""


class ProtocolViolation(RuntimeError):
    """The peer sent something the session state machine does not allow."""


class ReconciliationFailure(RuntimeError):
    """Corrected keys still differ after the verification exchange."""


class ChannelClosed(RuntimeError):
    """The classical channel disconnected mid-session."""


class ChannelTimeout(RuntimeError):
    """The peer stayed silent past the per-message timeout."""


class SessionAbort(RuntimeError):
    """A session ended on a protocol abort (local or remote).

    ``reason`` is one of the abort reason codes in :mod:`bb84sps.wire`;
    ``detail`` carries the measured value that triggered the abort when
    there is one (e.g. the estimated error rate).
    """

    def __init__(self, reason: int, message: str, detail: float | None = None):
        super().__init__(message)
        self.reason = reason
        self.detail = detail
