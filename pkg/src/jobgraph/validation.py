"""Input-validation helpers shared by the estimator facades."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.exceptions import NotFittedError

from .training import LabeledPair


def check_fitted(estimator, attributes: Sequence[str]) -> None:
    """Raise NotFittedError unless every fitted attribute is present."""
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first "
            f"(missing {', '.join(missing)})"
        )


def check_pairs(pairs) -> list[LabeledPair]:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pairs must be a non-empty sequence of LabeledPair")
    for p in pairs:
        if not isinstance(p, LabeledPair):
            raise TypeError(f"expected LabeledPair, got {type(p).__name__}")
    return pairs


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr
