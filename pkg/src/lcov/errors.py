class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DivergenceError(RuntimeError):
    """Raised when an iterative procedure produces a non-finite objective.

    ``checkpoint`` holds the path of the diagnostic dump, if one was written.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
