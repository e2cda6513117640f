class InvariantViolation(ValueError):
    """A domain record or store would break one of its invariants."""


class DuplicateDirective(ValueError):
    pass


class BackendFailure(RuntimeError):
    """An agent backend failed in a way the epoch cannot absorb.

    ``partial`` holds the run result up to the last completed epoch.
    """

    def __init__(self, message, node=None, epoch=None, partial=None):
        super().__init__(message)
        self.node = node
        self.epoch = epoch
        self.partial = partial

    def __str__(self):
        where = []
        if self.epoch is not None:
            where.append(f'epoch={self.epoch}')
        if self.node is not None:
            where.append(f'node={self.node}')
        message = super().__str__()
        return f'{message} ({", ".join(where)})' if where else message


class RunDirectoryComplete(RuntimeError):
    """The run directory already holds a completed run."""
