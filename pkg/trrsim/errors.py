"""Exception hierarchy shared by every trrsim module."""


class TrrSimError(Exception):
    """Base class for all simulator errors."""


class InvalidConfigError(TrrSimError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"invalid config field '{field}': {message}")


class ConfigParseError(TrrSimError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"cannot parse {path}: {message}")


class OutOfRangeError(TrrSimError):
    def __init__(self, what: str, value: int, bound: int):
        self.what = what
        self.value = value
        self.bound = bound
        super().__init__(f"{what} {value} out of range [0, {bound})")


class TimingViolationError(TrrSimError):
    """A command was issued before its timing constraint allowed it.

    For tREFI the reported time is the missed REF deadline.
    """

    def __init__(self, constraint: str, earliest_ns: int, now_ns: int):
        self.constraint = constraint
        self.earliest_ns = earliest_ns
        self.now_ns = now_ns
        super().__init__(
            f"{constraint} violated at t={now_ns}ns (earliest legal time {earliest_ns}ns)"
        )


class ProtocolViolationError(TrrSimError):
    pass


class ProbeOverlapError(TrrSimError):
    pass


class BudgetExceededError(TrrSimError):
    def __init__(self, needed: int, available: int, what: str = "ACT slots"):
        self.needed = needed
        self.available = available
        super().__init__(f"{what}: need {needed}, only {available} available")


class InconclusiveError(TrrSimError):
    def __init__(self, test: str, detail: str = ""):
        self.test = test
        self.detail = detail
        super().__init__(f"{test} inconclusive" + (f": {detail}" if detail else ""))


class InsufficientGroupsError(InconclusiveError):
    def __init__(self, needed: int, found: int, t_ms: float):
        self.needed = needed
        self.found = found
        self.t_ms = t_ms
        super().__init__(
            "row scout", f"found {found} of {needed} groups before t_max ({t_ms:g} ms)"
        )


class NoTrrDetectedError(InconclusiveError):
    def __init__(self, detail: str = "no TRR-attributed survival observed"):
        super().__init__("trr detection", detail)


class NotApplicableError(InconclusiveError):
    def __init__(self, test: str, kind: str):
        super().__init__(test, f"not applicable to {kind} tracking")


class NotASamplerError(InconclusiveError):
    def __init__(self):
        super().__init__("sampling guarantee", "mechanism is not sampling-based")


class NotWindowBasedError(InconclusiveError):
    def __init__(self):
        super().__init__("window size", "mechanism is not window-based")
