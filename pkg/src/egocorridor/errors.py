"""Exception types shared across the workbench."""


class EgoCorridorError(Exception):
    """Base class for all workbench errors."""


class ShapeMismatch(EgoCorridorError, ValueError):
    pass


class EvenKernel(EgoCorridorError, ValueError):
    pass


class IndivisibleShape(EgoCorridorError, ValueError):
    pass


class AsymmetricSpec(EgoCorridorError, ValueError):
    pass


class ShapeFlowError(EgoCorridorError, ValueError):
    pass


class ParamBudgetViolation(EgoCorridorError, ValueError):
    pass


class CorruptCheckpoint(EgoCorridorError):
    pass


class VersionMismatch(EgoCorridorError):
    pass


class EmptyDataset(EgoCorridorError, ValueError):
    pass


class EmptySequence(EgoCorridorError, ValueError):
    pass


class InvalidSceneSpec(EgoCorridorError, ValueError):
    pass


class Behind(EgoCorridorError, ValueError):
    """Ground point projects behind the image plane."""


class HorizonRay(EgoCorridorError, ValueError):
    """Back-projected ray never meets the ground plane."""


class NoPair(EgoCorridorError):
    """No line pair satisfies the lane constraints."""


class DegenerateGeometry(EgoCorridorError, ValueError):
    pass


class IoFailure(EgoCorridorError, OSError):
    pass
