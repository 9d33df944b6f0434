"""Exception types raised across the pipeline."""


class AutoRemoverError(Exception):
    """Base class for all pipeline errors."""


class MissingFrame(AutoRemoverError):
    pass


class ShapeMismatch(AutoRemoverError, ValueError):
    pass


class BadCamera(AutoRemoverError, ValueError):
    pass


class BadArgument(AutoRemoverError, ValueError):
    pass


class BadParams(AutoRemoverError, ValueError):
    pass


class BadLabels(AutoRemoverError, ValueError):
    pass


class BadSequence(AutoRemoverError, ValueError):
    pass


class NoBackground(AutoRemoverError):
    """Raised when contextual attention has no valid background patch."""


class EmptyLossSupport(AutoRemoverError):
    """Raised when a masked loss has no valid pixel to average over."""


class EmptyRegion(AutoRemoverError):
    """Raised when a hole-restricted metric is evaluated on an empty hole."""


class NoData(AutoRemoverError):
    pass


class NonFiniteLoss(AutoRemoverError, FloatingPointError):
    def __init__(self, iteration, component, value):
        super().__init__(f"non-finite {component} = {value} at iteration {iteration}")
        self.iteration = iteration
        self.component = component
        self.value = value
