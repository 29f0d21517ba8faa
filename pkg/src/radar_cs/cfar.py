"""Cell-averaging CFAR along range profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import BlockGrid, BlockIndex, RadarFrame


class CfarError(ValueError):
    pass


@dataclass(frozen=True)
class CfarParams:
    """Training and guard counts are totals, split evenly between both sides."""

    n_train: int = 300
    n_guard: int = 50
    pfa: float = 1e-3

    def __post_init__(self):
        if self.n_train < 2:
            raise CfarError("n_train must be >= 2")
        if self.n_guard < 0:
            raise CfarError("n_guard must be >= 0")
        if not 0.0 < self.pfa < 1.0:
            raise CfarError("pfa must lie in (0, 1)")


def threshold_factor(n_effective, pfa: float):
    """CA-CFAR scaling for square-law detected exponential noise.

    ``alpha = n * (pfa ** (-1 / n) - 1)``; vectorised over ``n_effective``.
    """
    n = np.asarray(n_effective, dtype=np.float64)
    if np.any(n < 1):
        raise CfarError("n_effective must be >= 1")
    alpha = n * np.expm1(-np.log(pfa) / n)
    return float(alpha) if alpha.ndim == 0 else alpha


def ca_cfar(rows: np.ndarray, params: CfarParams = CfarParams()) -> np.ndarray:
    """Detection mask for every row of ``rows`` (each row is one range profile).

    Windows are truncated at the row ends and the scaling is recomputed from
    the training cells actually available.  Cells without any training cell
    are never detected.
    """
    x = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    length = x.shape[1]
    if length <= params.n_guard + 2:
        raise CfarError(f"row length {length} too short for {params.n_guard} guard cells")
    half_train = params.n_train // 2
    half_guard = params.n_guard // 2
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    i = np.arange(length)
    # left window [i - g - t, i - g), right window (i + g, i + g + t]
    l_hi = np.clip(i - half_guard, 0, length)
    l_lo = np.clip(i - half_guard - half_train, 0, length)
    r_lo = np.clip(i + half_guard + 1, 0, length)
    r_hi = np.clip(i + half_guard + half_train + 1, 0, length)
    count = (l_hi - l_lo) + (r_hi - r_lo)
    total = csum[:, l_hi] - csum[:, l_lo] + csum[:, r_hi] - csum[:, r_lo]
    valid = count > 0
    safe = np.where(valid, count, 1)
    alpha = threshold_factor(safe, params.pfa)
    noise = total / safe
    return (x > alpha * noise) & valid


def ca_cfar_row(row: np.ndarray, params: CfarParams = CfarParams()) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise CfarError("expected a 1-D range profile")
    return ca_cfar(row[None, :], params)[0]


def cfar_important_blocks(frame: RadarFrame, grid: BlockGrid,
                          params: CfarParams = CfarParams()) -> frozenset[BlockIndex]:
    """Blocks holding at least one detected cell."""
    mask = ca_cfar(frame.data, params)
    hits = grid.to_blocks(mask).reshape(grid.n_blocks, -1).any(axis=1)
    return frozenset(BlockIndex(*divmod(int(k), grid.n_range_blocks))
                     for k in np.flatnonzero(hits))


class CACFAR(BaseEstimator):
    """Estimator wrapper: ``predict`` returns the detection mask of 2-D input."""

    def __init__(self, n_train=300, n_guard=50, pfa=1e-3):
        self.n_train = n_train
        self.n_guard = n_guard
        self.pfa = pfa

    def fit(self, X, y=None):
        self.params_ = CfarParams(self.n_train, self.n_guard, self.pfa)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise CfarError(f"expected {self.n_features_in_} range cells, got {X.shape[1]}")
        return ca_cfar(X, self.params_)

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)
