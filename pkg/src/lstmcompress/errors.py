"""Exception types raised across the package."""


class LstmCompressError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidMatrix(LstmCompressError, ValueError):
    """Input is not a finite, non-empty 2-D real matrix."""


class InvalidShape(LstmCompressError, ValueError):
    """Requested or supplied dimensions are unusable."""


class InvalidRank(LstmCompressError, ValueError):
    """Rank outside 1..min(m, n) for the matrix at hand."""


class InvalidBudget(LstmCompressError, ValueError):
    """Keep-count outside 1..m*n."""


class ShapeError(LstmCompressError, ValueError):
    """Arrays fed to the model do not line up."""


class VocabError(LstmCompressError, ValueError):
    """Token ids or vocabulary construction arguments are invalid."""


class EmptyCorpus(LstmCompressError, ValueError):
    """No tokens at all in the input text."""


class CorpusTooShort(LstmCompressError, ValueError):
    """Too few tokens for the requested batch layout."""


class AlreadyCompressed(LstmCompressError, ValueError):
    """A targeted weight slot is not dense."""


class DegenerateCompression(LstmCompressError, ValueError):
    """Compression did not reduce the parameter count."""


class FormatError(LstmCompressError, ValueError):
    """Checkpoint on disk is malformed, truncated, or wrong version."""


class DivergedError(LstmCompressError, RuntimeError):
    """Training loss became non-finite.

    Carries the epoch and step where it happened so the caller can
    restart with a smaller learning rate.
    """

    def __init__(self, message: str, epoch: int | None = None,
                 step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
