"""Top-of-spectrum Hessian tracking for small networks trained with SGD,
plus the Nudged-SGD optimizer that rescales steps along the sharpest
directions."""
from .errors import (AlignmentUndefined, ConfigError, FormatError, NumericalError, SharpPathError,
                     SingularityError, StateError)

__version__ = "0.1.0"
