"""Exception hierarchy shared by every plantfit module."""


class PlantFitError(Exception):
    """Base class for all library errors."""


class EmptyCloud(PlantFitError):
    pass


class DegenerateCloud(PlantFitError):
    pass


class ParseError(PlantFitError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class UnknownLabel(PlantFitError):
    pass


class EmptyClass(PlantFitError):
    pass


class InvalidSpec(PlantFitError):
    pass


class ScannerInsideObject(PlantFitError):
    pass


class TooFewPoints(PlantFitError):
    pass


class DegenerateGeometry(PlantFitError):
    pass


class NotNormalized(PlantFitError):
    pass


class ZeroPoints(PlantFitError):
    pass


class ShapeMismatch(PlantFitError):
    pass


class EmptyTrainSet(PlantFitError):
    pass


class EmptyRecords(PlantFitError):
    pass


class EmptyDatabase(PlantFitError):
    pass


class NoRelevantItems(PlantFitError):
    pass


class EmptyInput(PlantFitError):
    pass


class CheckpointError(PlantFitError):
    pass
