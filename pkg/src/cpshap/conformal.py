"""Split conformal prediction with three conformity scores.

``smr`` uses absolute residuals around a mean model (constant-width
intervals), ``lacp`` scales residuals by a positive dispersion model
(locally adaptive widths), and ``cqr`` measures how far the target falls
outside a pair of quantile models (scores may be negative).  In every
case the calibration quantile is the k-th smallest score with
``k = ceil((n_cal + 1) * (1 - alpha))``, which yields finite-sample
marginal coverage between ``1 - alpha`` and ``1 - alpha + 1/(n_cal + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import (
    EmptyDataError,
    InsufficientCalibrationError,
    ParameterError,
    SplitError,
)
from .regressors import FittedModel
from .validation import check_fraction, check_matrix, check_same_rows, check_vector

__all__ = [
    "METHODS",
    "SplitData",
    "split",
    "conformity_scores",
    "conformal_quantile",
    "Interval",
    "ConformalPredictor",
    "calibrate",
    "interval_bounds",
    "predict_interval",
    "CoverageReport",
    "coverage_audit",
]

METHODS = ("smr", "lacp", "cqr")

_MODEL_KEYS = {"smr": ("mean",), "lacp": ("mean", "dispersion"), "cqr": ("lower", "upper")}


@dataclass(frozen=True)
class SplitData:
    """Disjoint row-index partitions covering a dataset."""

    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray
    seed: int
    ratios: tuple[float, float]

    @property
    def n_rows(self) -> int:
        return self.train.size + self.calibration.size + self.test.size


def split(n_rows: int, ratios: tuple[float, float], seed: int = 0) -> SplitData:
    """Randomly partition ``n_rows`` into train/calibration/test indices.

    ``ratios`` gives the train and calibration fractions; whatever is left
    becomes the test partition (possibly empty).  Empty train or
    calibration partitions raise :class:`SplitError`.
    """
    n = int(n_rows)
    if n < 1:
        raise EmptyDataError(f"cannot split {n} rows")
    f_train = check_fraction(ratios[0], "train fraction")
    f_cal = check_fraction(ratios[1], "calibration fraction")
    if f_train + f_cal > 1.0 + 1e-12:
        raise ParameterError(f"split fractions sum to {f_train + f_cal:.3f} > 1")
    n_train = int(math.floor(n * f_train + 0.5))
    n_cal = min(int(math.floor(n * f_cal + 0.5)), n - n_train)
    if n_train < 1 or n_cal < 1:
        raise SplitError(
            f"split of {n} rows at ratios {ratios} leaves an empty partition "
            f"(train={n_train}, calibration={n_cal})"
        )
    perm = np.random.default_rng(np.random.SeedSequence([int(seed)])).permutation(n)
    return SplitData(
        train=np.sort(perm[:n_train]),
        calibration=np.sort(perm[n_train:n_train + n_cal]),
        test=np.sort(perm[n_train + n_cal:]),
        seed=int(seed),
        ratios=(f_train, f_cal),
    )


def _check_models(method: str, models: Mapping[str, FittedModel]) -> dict[str, FittedModel]:
    if method not in METHODS:
        raise ParameterError(f"method must be one of {METHODS}, got {method!r}")
    keys = _MODEL_KEYS[method]
    missing = [k for k in keys if k not in models]
    if missing:
        raise ParameterError(f"method {method!r} needs model(s) {missing}")
    return {k: models[k] for k in keys}


def conformity_scores(method: str, models: Mapping[str, FittedModel], features, target) -> np.ndarray:
    """Per-row conformity scores of target values against fitted models."""
    models = _check_models(method, models)
    X = check_matrix(features, "features", min_rows=1)
    y = check_vector(target, "target")
    check_same_rows(X, y, "features", "target")
    if method == "smr":
        return np.abs(y - models["mean"].predict_batch(X))
    if method == "lacp":
        sigma = models["dispersion"].predict_batch(X)
        return np.abs(y - models["mean"].predict_batch(X)) / sigma
    lo = models["lower"].predict_batch(X)
    up = models["upper"].predict_batch(X)
    return np.maximum(lo - y, y - up)


def conformal_quantile(scores, alpha: float) -> float:
    """Finite-sample calibration quantile of conformity scores.

    Returns the k-th smallest score with ``k = ceil((n+1) * (1-alpha))``;
    when k exceeds n the calibration set cannot support the requested
    level and :class:`InsufficientCalibrationError` is raised.
    """
    alpha = check_fraction(alpha, "alpha")
    s = np.sort(check_vector(scores, "scores"))
    n = s.shape[0]
    k = max(1, math.ceil((n + 1) * (1.0 - alpha) - 1e-9))
    if k > n:
        raise InsufficientCalibrationError(
            f"need ceil((n+1)*(1-alpha)) = {k} calibration scores but have {n}; "
            f"grow the calibration set or raise alpha"
        )
    return float(s[k - 1])


@dataclass(frozen=True)
class Interval:
    """A prediction interval; ``crossed`` marks a clamped quantile crossing."""

    lower: float
    upper: float
    crossed: bool = False

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class ConformalPredictor:
    """A calibrated split-conformal predictor for one model coalition."""

    method: str
    models: Mapping[str, FittedModel]
    cal_scores: np.ndarray
    q_hat: float
    alpha: float
    n_cal: int
    coalition: int | None = None

    @property
    def coverage_band(self) -> tuple[float, float]:
        return (1.0 - self.alpha, 1.0 - self.alpha + 1.0 / (self.n_cal + 1))


def calibrate(
    method: str,
    models: Mapping[str, FittedModel],
    features,
    target,
    alpha: float,
    coalition: int | None = None,
) -> ConformalPredictor:
    """Score a calibration set and fix the interval quantile."""
    models = _check_models(method, models)
    scores = conformity_scores(method, models, features, target)
    q_hat = conformal_quantile(scores, alpha)
    return ConformalPredictor(
        method=method,
        models=models,
        cal_scores=np.sort(scores),
        q_hat=q_hat,
        alpha=float(alpha),
        n_cal=int(scores.shape[0]),
        coalition=coalition,
    )


def interval_bounds(predictor: ConformalPredictor, features) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized interval bounds ``(lower, upper, crossed)`` for many rows.

    CQR bounds that cross after applying the calibration margin are
    clamped to a point interval at their midpoint, with the crossing
    flagged.
    """
    X = check_matrix(features, "features", min_rows=0)
    q = predictor.q_hat
    if predictor.method == "smr":
        f = predictor.models["mean"].predict_batch(X)
        lo, up = f - q, f + q
    elif predictor.method == "lacp":
        f = predictor.models["mean"].predict_batch(X)
        sigma = predictor.models["dispersion"].predict_batch(X)
        lo, up = f - q * sigma, f + q * sigma
    else:
        lo = predictor.models["lower"].predict_batch(X) - q
        up = predictor.models["upper"].predict_batch(X) + q
    crossed = lo > up
    if np.any(crossed):
        mid = 0.5 * (lo[crossed] + up[crossed])
        lo = lo.copy()
        up = up.copy()
        lo[crossed] = mid
        up[crossed] = mid
    return lo, up, crossed


def predict_interval(predictor: ConformalPredictor, x) -> Interval:
    """Interval for a single feature vector."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    lo, up, crossed = interval_bounds(predictor, arr.reshape(1, -1))
    return Interval(lower=float(lo[0]), upper=float(up[0]), crossed=bool(crossed[0]))


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    mean_width: float
    band: tuple[float, float]
    n: int

    @property
    def inside_band(self) -> bool:
        return self.band[0] <= self.coverage <= self.band[1]


def coverage_audit(intervals: Sequence, truths, alpha: float, n_cal: int) -> CoverageReport:
    """Empirical coverage and mean width against the theoretical band."""
    y = check_vector(truths, "truths")
    if isinstance(intervals, np.ndarray) and intervals.ndim == 2:
        lo, up = intervals[:, 0], intervals[:, 1]
    else:
        lo = np.asarray([iv.lower for iv in intervals], dtype=np.float64)
        up = np.asarray([iv.upper for iv in intervals], dtype=np.float64)
    if lo.shape[0] != y.shape[0]:
        raise EmptyDataError("intervals and truths must have equal length")
    alpha = check_fraction(alpha, "alpha")
    covered = (lo <= y) & (y <= up)
    return CoverageReport(
        coverage=float(covered.mean()),
        mean_width=float(np.mean(up - lo)),
        band=(1.0 - alpha, 1.0 - alpha + 1.0 / (int(n_cal) + 1)),
        n=int(y.shape[0]),
    )
