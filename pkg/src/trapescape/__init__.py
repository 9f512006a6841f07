"""Escape from moving traps and directed random interlacements on Z^d."""

from .errors import (ConfigError, DimensionError, HypothesisError, ParameterError, RangeError, ResourceError,
                     StrategyInvariantError, UndecidableError, UnsamplableError, UsageError, WindowExhaustedError)

__version__ = "0.1.0"
