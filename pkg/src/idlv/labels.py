from enum import Enum

import numpy as np


class Liveness(str, Enum):
    REAL = "real"
    FAKE = "fake"

    @classmethod
    def coerce(cls, value):
        """Accept a Liveness, its string value, or a bool (True meaning real)."""
        if isinstance(value, cls):
            return value
        if isinstance(value, (bool, int, np.bool_, np.integer)) and value in (0, 1):
            return cls.REAL if value else cls.FAKE
        if isinstance(value, str):
            return cls(value.lower())
        raise ValueError(f"not a liveness label: {value!r}")
