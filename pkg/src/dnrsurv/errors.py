"""Exception and warning types shared across the package."""


class DnrError(Exception):
    """Base class for all package errors."""


class InvalidInput(DnrError, ValueError):
    pass


class DegenerateTissue(DnrError):
    """Not enough stained foreground to estimate a stain matrix."""


class DegenerateData(DnrError):
    pass


class MissingNeighbors(DnrError):
    pass


class DivergedTraining(DnrError):
    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class NonConverged(DnrError):
    pass


class UndefinedMetric(DnrError):
    pass


class StalledUpdate(UserWarning):
    """Memory-bank momentum update produced a zero vector; row kept."""


class SkippedCovariate(UserWarning):
    pass


# exit code 2 in the CLI; everything else derived from DnrError maps to 1
NUMERIC_ERRORS = (DegenerateTissue, DegenerateData, DivergedTraining, NonConverged, UndefinedMetric)
