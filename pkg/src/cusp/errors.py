"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violated a documented precondition (shape, range, ...)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or has an unsupported format tag."""
