"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but numerically unusable (zero rows, empty sets, ...)."""


class FormatError(ValueError):
    """A binary or text artifact does not match its expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged at epoch {epoch}")
        self.epoch = epoch
