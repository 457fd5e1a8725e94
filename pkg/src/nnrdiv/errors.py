class EstimatorError(ValueError):
    """Raised when an estimator precondition is violated or the estimate diverges."""
