"""Exception types raised across the package."""


class WeakforgeError(Exception):
    pass


class ContractViolation(WeakforgeError, ValueError):
    """A documented precondition was not met by the caller."""


class IncompatibleSnapshotError(WeakforgeError):
    pass


class NumericOverflowError(WeakforgeError, FloatingPointError):
    def __init__(self, block: str, detail: str = ""):
        self.block = block
        msg = f"non-finite value in parameter block {block!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class CorruptCheckpointError(WeakforgeError):
    pass


class DatasetParseError(WeakforgeError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ValidationError(WeakforgeError, ValueError):
    pass


class ExampleTooLongError(WeakforgeError):
    pass


class EmptyTrainingSetError(WeakforgeError):
    pass


class EmptyPreferenceSetError(WeakforgeError):
    pass
