# errors.py
from typing import Optional

import numpy as np


class OneBitError(Exception):
    """Base class for every error raised by the simulation modules."""


class InvalidParameter(OneBitError, ValueError):
    pass


class GeometryError(OneBitError, ValueError):
    pass


class DiagonalUnderflow(OneBitError, ValueError):
    """A covariance diagonal entry is at or below the configured floor."""


class NormalizationOverflow(OneBitError, ValueError):
    """A normalized correlation exceeds 1 beyond the clipping tolerance."""


class SingularArcsineMatrix(OneBitError, np.linalg.LinAlgError):
    pass


class SingularGram(OneBitError, np.linalg.LinAlgError):
    pass


class EmptyBatch(OneBitError, ValueError):
    pass


class DimensionMismatch(OneBitError, ValueError):
    pass


class NonFinite(OneBitError, ValueError):
    pass


class NegativeCoefficient(OneBitError, ValueError):
    pass


class DegenerateSinr(OneBitError, ValueError):
    pass


class ConfigError(OneBitError, ValueError):
    """Config file could not be read or validated.

    `field` is the dotted path of the offending key, `line` the 1-based line in
    the YAML source when the parser reported one.
    """

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(prefix + message)
