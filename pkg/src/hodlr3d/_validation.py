"""Input checks used by the estimator and functional entry points."""
import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted  # noqa: F401

from .octree import VARIANTS


def check_points(points):
    """Finite float array of shape (N, 3) with N >= 1."""
    pts = check_array(np.asarray(points), dtype=np.float64, ensure_min_samples=1)
    if pts.shape[1] != 3:
        raise ValueError(f"points must have 3 columns, got {pts.shape[1]}")
    return pts


def check_vector(x, n, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_positive(value, name, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, "
                         f"got {value!r}")
    return value


def check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return variant
