"""Exception hierarchy shared by every module."""


class MotionGuideError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MotionGuideError, ValueError):
    """Input array has the wrong shape, is non-finite, or is out of range."""


class DegeneratePoseError(InvalidInputError):
    """A pose has no usable heading (hip axis has no horizontal extent)."""


class EmptyControlError(InvalidInputError):
    """A loss or metric was asked to work on a mask with no bits set."""


class NoConstraintError(InvalidInputError):
    """A frame-level operation was called on a frame without a constraint."""


class SpecError(InvalidInputError):
    """Invalid curve parameters for the trajectory planner."""


class CompositionError(SpecError):
    """Consecutive trajectory segments do not meet."""

    def __init__(self, index, gap):
        super().__init__(f"segment {index} starts {gap:.3e} m away from the end of segment {index - 1}")
        self.index = index
        self.gap = gap


class MappingError(InvalidInputError):
    """Joint map table does not fit the raw pose file."""


class TrainingDivergedError(MotionGuideError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, step, loss, history):
        recent = ", ".join(f"{v:.4g}" for v in history[-5:])
        super().__init__(f"loss diverged at step {step} (loss={loss}); last losses: [{recent}]")
        self.step = step
        self.loss = loss
        self.history = list(history)
