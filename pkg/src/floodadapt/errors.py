"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when an input file is malformed or internally inconsistent.

    The message carries file path and, where applicable, the 1-based line
    number of the offending row. The CLI maps this to exit code 2.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}: " if line is None else f"{path}:{line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line
