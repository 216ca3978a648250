class RankVocabError(Exception):
    """Base class for errors raised by this package."""


class InputError(RankVocabError, ValueError):
    """Bad input data or a violated call contract (CLI exit code 2)."""


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ShapeError(InputError):
    pass


class NonFiniteError(AssertionError):
    """A tensor op produced NaN or Inf (CLI exit code 4)."""
