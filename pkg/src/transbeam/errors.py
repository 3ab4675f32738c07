"""Exception types shared across the package."""


class TransbeamError(Exception):
    pass


class DimensionError(TransbeamError, ValueError):
    pass


class SingularityError(TransbeamError, ArithmeticError):
    pass


class ContractError(TransbeamError, ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateOutputError(TransbeamError, ArithmeticError):
    pass


class NumericalError(TransbeamError, ArithmeticError):
    """An iterative solver lost its footing; ``state`` holds diagnostics."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state or {}


class ParseError(TransbeamError, ValueError):
    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class ConfigError(TransbeamError, ValueError):
    def __init__(self, msg, field=None):
        self.reason = msg
        if field is not None:
            msg = f"{field}: {msg}"
        super().__init__(msg)
        self.field = field


class VersionError(TransbeamError, ValueError):
    pass


class NumericalAbort(TransbeamError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, msg, diagnostics=None, checkpoint=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}
        self.checkpoint = checkpoint


class EmptyBatchError(ParseError):
    pass
