"""Exception types raised across the package."""


class DimensionError(ValueError):
    pass


class UsageError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class ResourceError(MemoryError):
    pass


class RangeError(IndexError):
    pass


class UnsamplableError(ValueError):
    pass


class HypothesisError(ValueError):
    """A theorem's hypothesis fails, so the bound is not claimed."""


class UndecidableError(ValueError):
    pass


class StrategyInvariantError(AssertionError):
    pass


class WindowExhaustedError(RuntimeError):
    def __init__(self, msg, needed_radius=None):
        super().__init__(msg)
        self.needed_radius = needed_radius


class ConfigError(ValueError):
    def __init__(self, msg, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {msg}")
        self.pointer = pointer
