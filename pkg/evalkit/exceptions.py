class EmptyBenchmark(ValueError):
    """Recall is undefined over zero benchmark examples."""


class SubsetViolation(ValueError):
    """The correctly predicted set is not a subset of all predictions."""
