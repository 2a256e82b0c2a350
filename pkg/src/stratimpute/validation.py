"""Input validation helpers shared across the package."""

import numpy as np


def check_finite(arr, name: str):
    """Raise ValueError if ``arr`` contains NaN or Inf."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_binary_mask(m, name: str = "mask"):
    """Raise ValueError unless every entry of ``m`` is 0 or 1."""
    m = np.asarray(m)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{name} must be binary (entries in {{0, 1}})")
    return m


def check_same_shape(a, b, name_a: str, name_b: str):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(
            f"shape mismatch: {name_a} has {a.shape}, {name_b} has {b.shape}"
        )
    return a, b


def check_fraction(x: float, name: str, *, inclusive_high: bool = False):
    high_ok = x <= 1 if inclusive_high else x < 1
    if not (0 <= x and high_ok):
        hi = "1]" if inclusive_high else "1)"
        raise ValueError(f"{name} must lie in [0, {hi}, got {x!r}")
    return float(x)
