"""Feature attributions for conformal prediction intervals.

For a test point ``x``, each coalition ``A`` of features gets its own
conformal predictor trained and calibrated on the columns in ``A`` alone;
reading off a property of the resulting interval (width, lower bound, or
upper bound) defines a cooperative game over the features, which Shapley
or proportional-Shapley allocations then split into per-feature values.

Training is the expensive step, so coalitions are cached and shared
across test points, value functions, and allocation kinds.  Sampled
estimators reuse one uniform permutation stream for every test point and
obtain proportional-Shapley estimates by importance reweighting with the
point's own sampling distribution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import kendalltau
from sklearn.base import BaseEstimator

from ._threads import resolve_threads, run_tasks
from .allocation import (
    AllocationVector,
    proportional_shapley_from_dense,
    ps_permutation_pmf,
    ps_permutation_sample,
    shapley_from_dense,
)
from .conformal import METHODS, ConformalPredictor, SplitData, calibrate, interval_bounds, split
from .conformal import Interval
from .exceptions import (
    DegenerateBaselineError,
    DegenerateWeightsError,
    DimensionError,
    ParameterError,
)
from .games import (
    EXHAUSTIVE_PLAYER_CAP,
    MAX_PLAYERS,
    CoalitionGame,
    check_player_count,
    members_of,
    permutation_chain,
)
from .regressors import (
    QUANTILE_FAMILIES,
    RegressorSpec,
    train,
    train_dispersion,
    train_quantile,
)
from .validation import check_choice, check_fraction, check_matrix, check_positive_int, check_same_rows, check_vector

__all__ = [
    "VALUE_FNS",
    "ALLOCATION_KINDS",
    "AttributionConfig",
    "CoalitionModelCache",
    "coalition_value",
    "PointAttribution",
    "AttributionResult",
    "attribute_exact",
    "attribute_mc",
    "normalize",
    "RankReport",
    "rank_matrix_from_values",
    "modal_ranks",
    "rank_frequency",
    "AgreementReport",
    "agreement_from_matrices",
    "compare_allocations",
    "ConformalAttributor",
    "derive_seeds",
]

VALUE_FNS = ("width", "lower", "upper")
ALLOCATION_KINDS = ("shapley", "proportional_shapley")
ESTIMATORS = ("exact", "mc", "is")

# Relative tolerance used to call a full-minus-empty span degenerate.
BASELINE_EPS_SCALE = 1e-12


def _default_quantile_spec(mean_spec: RegressorSpec) -> RegressorSpec:
    if mean_spec.family in QUANTILE_FAMILIES:
        return mean_spec
    return RegressorSpec.linear()


@dataclass(frozen=True)
class AttributionConfig:
    """Everything that determines an attribution run except the data.

    ``estimator`` selects exact enumeration ("exact"), direct sampling
    from each allocation's own ordering distribution ("mc"), or a shared
    uniform permutation stream with importance reweighting ("is").  The
    two sampled estimators coincide for plain Shapley values; they differ
    only in how proportional-Shapley estimates are obtained.
    """

    method: str = "smr"
    value_fns: tuple[str, ...] = ("width",)
    allocations: tuple[str, ...] = ("shapley",)
    estimator: str = "exact"
    m: int = 500
    alpha: float = 0.1
    mean_spec: RegressorSpec = field(default_factory=RegressorSpec.linear)
    dispersion_spec: RegressorSpec | None = None
    quantile_spec: RegressorSpec | None = None
    cqr_levels: tuple[float, float] | None = None
    dispersion_transform: str = "absolute"
    split_ratios: tuple[float, float] = (0.8, 0.2)
    split_seed: int = 0
    train_seed: int = 0
    sampling_seed: int = 0
    egalitarian_fallback: bool = False
    n_threads: int | None = None

    def __post_init__(self):
        check_choice(self.method, "method", METHODS)
        vfs = tuple(self.value_fns)
        if not vfs or len(set(vfs)) != len(vfs):
            raise ParameterError(f"value_fns must be distinct and non-empty, got {vfs!r}")
        for vf in vfs:
            check_choice(vf, "value_fn", VALUE_FNS)
        object.__setattr__(self, "value_fns", vfs)
        kinds = tuple(self.allocations)
        if not kinds or len(set(kinds)) != len(kinds):
            raise ParameterError(f"allocations must be distinct and non-empty, got {kinds!r}")
        for kind in kinds:
            check_choice(kind, "allocation", ALLOCATION_KINDS)
        object.__setattr__(self, "allocations", kinds)
        check_choice(self.estimator, "estimator", ESTIMATORS)
        check_positive_int(self.m, "m")
        check_fraction(self.alpha, "alpha")
        if self.dispersion_spec is None:
            object.__setattr__(self, "dispersion_spec", self.mean_spec)
        if self.quantile_spec is None:
            object.__setattr__(self, "quantile_spec", _default_quantile_spec(self.mean_spec))
        if self.method == "cqr" and self.quantile_spec.family not in QUANTILE_FAMILIES:
            raise ParameterError(
                f"cqr needs a quantile-capable family, got {self.quantile_spec.family!r}"
            )
        levels = self.cqr_levels
        if levels is not None:
            lo, hi = float(levels[0]), float(levels[1])
            if not (0.0 < lo < hi < 1.0):
                raise ParameterError(f"cqr levels must satisfy 0 < low < high < 1, got {levels!r}")
            object.__setattr__(self, "cqr_levels", (lo, hi))
        check_choice(self.dispersion_transform, "dispersion_transform", ("absolute", "squared"))

    def resolved_cqr_levels(self) -> tuple[float, float]:
        if self.cqr_levels is not None:
            return self.cqr_levels
        return (self.alpha / 2.0, 1.0 - self.alpha / 2.0)

    @property
    def ps_direct(self) -> bool:
        """Whether sampled proportional Shapley draws its own orderings."""
        return self.estimator == "mc"


def _coalition_seed(train_seed: int, mask: int, role: int) -> int:
    # Cheap deterministic mixing; the regressors themselves are
    # deterministic, so this only feeds training fingerprints.
    return (int(train_seed) * 1_000_003 + int(mask) * 8 + int(role)) & 0x7FFFFFFF


class CoalitionModelCache:
    """Trains and memoizes one conformal predictor per feature coalition.

    Safe for concurrent use: a coalition requested by several workers is
    trained exactly once while the rest block, and the memo table is keyed
    only by the coalition mask, so results never depend on scheduling.
    """

    def __init__(self, config: AttributionConfig, X, y, split_data: SplitData):
        import threading

        self.config = config
        X = check_matrix(X, "X")
        y = check_vector(y, "y")
        check_same_rows(X, y)
        self.d = check_player_count(X.shape[1])
        self.X_train = X[split_data.train]
        self.y_train = y[split_data.train]
        self.X_cal = X[split_data.calibration]
        self.y_cal = y[split_data.calibration]
        self.split = split_data
        from .regressors import _data_digest  # shared hashing helper

        self._digest = _data_digest(
            np.vstack([self.X_train, self.X_cal]),
            np.concatenate([self.y_train, self.y_cal]),
        )
        self._predictors: dict[int, ConformalPredictor] = {}
        self._errors: dict[int, BaseException] = {}
        self._inflight: dict[int, object] = {}
        self._lock = threading.Lock()
        self._models_trained = 0

    @property
    def trained_count(self) -> int:
        """Distinct coalitions whose predictor has been trained."""
        with self._lock:
            return len(self._predictors)

    @property
    def models_trained(self) -> int:
        """Total individual regressor fits across all coalitions."""
        with self._lock:
            return self._models_trained

    @property
    def data_digest(self) -> str:
        return self._digest

    def _build(self, mask: int) -> tuple[ConformalPredictor, int]:
        cfg = self.config
        cols = list(members_of(mask))
        Xtr = self.X_train[:, cols]
        Xcal = self.X_cal[:, cols]
        models: dict = {}
        n_models = 0
        if cfg.method in ("smr", "lacp"):
            mean = train(
                cfg.mean_spec, Xtr, self.y_train,
                seed=_coalition_seed(cfg.train_seed, mask, 0),
                coalition=mask, data_digest=self._digest,
            )
            models["mean"] = mean
            n_models += 1
            if cfg.method == "lacp":
                models["dispersion"] = train_dispersion(
                    mean, Xtr, self.y_train, cfg.dispersion_spec,
                    seed=_coalition_seed(cfg.train_seed, mask, 1),
                    transform=cfg.dispersion_transform,
                    coalition=mask, data_digest=self._digest,
                )
                n_models += 1
        else:
            lo_level, hi_level = cfg.resolved_cqr_levels()
            models["lower"] = train_quantile(
                cfg.quantile_spec, Xtr, self.y_train, lo_level,
                seed=_coalition_seed(cfg.train_seed, mask, 2),
                coalition=mask, data_digest=self._digest,
            )
            models["upper"] = train_quantile(
                cfg.quantile_spec, Xtr, self.y_train, hi_level,
                seed=_coalition_seed(cfg.train_seed, mask, 3),
                coalition=mask, data_digest=self._digest,
            )
            n_models += 2
        predictor = calibrate(
            cfg.method, models, Xcal, self.y_cal, cfg.alpha, coalition=mask
        )
        return predictor, n_models

    def predictor(self, coalition: int) -> ConformalPredictor:
        import threading

        mask = int(coalition)
        if mask < 0 or mask >= (1 << self.d):
            raise DimensionError(f"coalition {mask:#x} is not a subset of {self.d} features")
        with self._lock:
            if mask in self._predictors:
                return self._predictors[mask]
            if mask in self._errors:
                raise self._errors[mask]
            event = self._inflight.get(mask)
            if event is None:
                event = threading.Event()
                self._inflight[mask] = event
                owner = True
            else:
                owner = False
        if not owner:
            event.wait()
            with self._lock:
                if mask in self._errors:
                    raise self._errors[mask]
                return self._predictors[mask]
        try:
            predictor, n_models = self._build(mask)
        except BaseException as exc:
            with self._lock:
                self._errors[mask] = exc
                del self._inflight[mask]
            event.set()
            raise
        with self._lock:
            self._predictors[mask] = predictor
            self._models_trained += n_models
            del self._inflight[mask]
        event.set()
        return predictor

    def bounds(self, coalition: int, X_query) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        cols = list(members_of(int(coalition)))
        Xq = check_matrix(X_query, "X_query", min_rows=0)[:, cols]
        return interval_bounds(self.predictor(coalition), Xq)

    def game(self, x, value_fn: str) -> CoalitionGame:
        """The coalition game induced by one test point and value function."""
        check_choice(value_fn, "value_fn", VALUE_FNS)
        arr = np.asarray(x, dtype=np.float64).reshape(1, -1)

        def evaluate(mask: int) -> float:
            lo, up, _ = self.bounds(mask, arr)
            return _value_from_bounds(lo, up, value_fn)[0]

        return CoalitionGame(self.d, evaluate)


def _value_from_bounds(lo: np.ndarray, up: np.ndarray, value_fn: str) -> np.ndarray:
    if value_fn == "width":
        return up - lo
    if value_fn == "lower":
        return lo
    return up


def coalition_value(cache: CoalitionModelCache, coalition: int, x, value_fn: str) -> float:
    """Value of one coalition at one test point under one value function."""
    check_choice(value_fn, "value_fn", VALUE_FNS)
    arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
    lo, up, _ = cache.bounds(coalition, arr)
    return float(_value_from_bounds(lo, up, value_fn)[0])


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class PointAttribution:
    point_id: int
    interval: Interval
    v_full: Mapping[str, float]
    allocations: Mapping[tuple[str, str], AllocationVector]


@dataclass(frozen=True)
class Diagnostics:
    trained_count: int
    models_trained: int
    wall_time_s: float
    m: int
    estimator: str


@dataclass(frozen=True)
class AttributionResult:
    """Per-test-point allocations for every configured value function/kind."""

    method: str
    estimator: str
    alpha: float
    value_fns: tuple[str, ...]
    allocation_kinds: tuple[str, ...]
    feature_names: tuple[str, ...]
    v_empty: Mapping[str, float]
    points: tuple[PointAttribution, ...]
    diagnostics: Diagnostics
    normalized: bool = False

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def matrix(self, value_fn: str | None = None, kind: str | None = None) -> np.ndarray:
        """Stacked allocation values, shape ``(n_points, n_features)``."""
        vf = value_fn or self.value_fns[0]
        kd = kind or self.allocation_kinds[0]
        return np.stack([p.allocations[(vf, kd)].values for p in self.points])

    def spans(self, value_fn: str | None = None) -> np.ndarray:
        vf = value_fn or self.value_fns[0]
        return np.asarray([p.v_full[vf] - self.v_empty[vf] for p in self.points])


def _feature_names(names, d: int) -> tuple[str, ...]:
    if names is None:
        return tuple(f"x{j + 1}" for j in range(d))
    names = tuple(str(n) for n in names)
    if len(names) != d:
        raise DimensionError(f"expected {d} feature names, got {len(names)}")
    return names


def _prepare(config, X, y, X_test, feature_names, split_data, exhaustive: bool):
    X = check_matrix(X, "X")
    y = check_vector(y, "y")
    check_same_rows(X, y)
    d = X.shape[1]
    cap = EXHAUSTIVE_PLAYER_CAP if exhaustive else MAX_PLAYERS
    if d > cap:
        raise DimensionError(
            f"{'exact attribution' if exhaustive else 'attribution'} supports at most {cap} features, got {d}"
        )
    Xt = check_matrix(X_test, "X_test")
    if Xt.shape[1] != d:
        raise DimensionError(f"X_test has {Xt.shape[1]} features, training data has {d}")
    if split_data is None:
        split_data = split(X.shape[0], config.split_ratios, config.split_seed)
    names = _feature_names(feature_names, d)
    cache = CoalitionModelCache(config, X, y, split_data)
    return cache, Xt, names


def _point_results(
    config, cache, Xt, names, value_arrays, alloc_matrices, stderr_matrices,
    estimator_labels, wall_time, sampled_m,
) -> AttributionResult:
    """Assemble an AttributionResult from dense per-mask value arrays."""
    full = (1 << cache.d) - 1
    lo, up, crossed = cache.bounds(full, Xt)
    n_t = Xt.shape[0]
    v_empty = {
        vf: float(_value_from_bounds(*_first_row_bounds(cache, Xt), vf)[0])
        for vf in config.value_fns
    }
    points = []
    for t in range(n_t):
        v_full = {vf: float(value_arrays[vf][full][t] if isinstance(value_arrays[vf], dict)
                            else value_arrays[vf][-1, t]) for vf in config.value_fns}
        allocs = {}
        for vf in config.value_fns:
            for kind in config.allocations:
                std = stderr_matrices.get((vf, kind))
                allocs[(vf, kind)] = AllocationVector(
                    values=alloc_matrices[(vf, kind)][:, t].copy(),
                    kind=kind,
                    estimator=estimator_labels[kind],
                    m=sampled_m if estimator_labels[kind] != "exact" else 0,
                    std_err=None if std is None else std[:, t].copy(),
                    seed=config.sampling_seed if estimator_labels[kind] != "exact" else None,
                )
        points.append(
            PointAttribution(
                point_id=t,
                interval=Interval(float(lo[t]), float(up[t]), bool(crossed[t])),
                v_full=v_full,
                allocations=allocs,
            )
        )
    diagnostics = Diagnostics(
        trained_count=cache.trained_count,
        models_trained=cache.models_trained,
        wall_time_s=wall_time,
        m=sampled_m,
        estimator=config.estimator,
    )
    return AttributionResult(
        method=config.method,
        estimator=config.estimator,
        alpha=config.alpha,
        value_fns=config.value_fns,
        allocation_kinds=config.allocations,
        feature_names=names,
        v_empty=v_empty,
        points=tuple(points),
        diagnostics=diagnostics,
    )


def _first_row_bounds(cache, Xt):
    lo, up, _ = cache.bounds(0, Xt[:1])
    return lo, up


def attribute_exact(
    config: AttributionConfig,
    X,
    y,
    X_test,
    feature_names=None,
    split_data: SplitData | None = None,
) -> AttributionResult:
    """Exact allocations by enumerating every feature coalition.

    Trains ``2**d`` conformal predictors (d <= 20), evaluates each on all
    test points at once, and runs the dividend transforms for all points
    in a single vectorized pass.
    """
    started = time.perf_counter()
    cache, Xt, names = _prepare(config, X, y, X_test, feature_names, split_data, exhaustive=True)
    d, n_t = cache.d, Xt.shape[0]
    n_masks = 1 << d

    masks = list(range(n_masks))
    run_tasks(lambda i: cache.predictor(masks[i]) and None, n_masks, config.n_threads)

    value_arrays: dict[str, np.ndarray] = {vf: np.empty((n_masks, n_t)) for vf in config.value_fns}
    for mask in masks:
        lo, up, _ = cache.bounds(mask, Xt)
        for vf in config.value_fns:
            value_arrays[vf][mask] = _value_from_bounds(lo, up, vf)

    alloc_matrices: dict[tuple[str, str], np.ndarray] = {}
    for vf in config.value_fns:
        V = value_arrays[vf]
        if "shapley" in config.allocations:
            alloc_matrices[(vf, "shapley")] = shapley_from_dense(V, d)
        if "proportional_shapley" in config.allocations:
            alloc_matrices[(vf, "proportional_shapley")] = proportional_shapley_from_dense(
                V, d, egalitarian_fallback=config.egalitarian_fallback
            )
    labels = {kind: "exact" for kind in config.allocations}
    wall = time.perf_counter() - started
    return _point_results(
        config, cache, Xt, names, value_arrays, alloc_matrices, {}, labels, wall, 0
    )


def _uniform_perm_stream(seed: int, k: int, d: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))
    return rng.permutation(d).astype(np.int64)


def _ps_ratio_columns(weights: np.ndarray, perm: np.ndarray, log_d_fact: float) -> np.ndarray:
    """Per-point ratio pmf(perm) * d! for column-wise weight vectors.

    ``weights`` has shape ``(d, n_t)`` with strictly positive entries.
    """
    W = weights[perm, :]
    CS = np.cumsum(W, axis=0)
    log_ratio = np.log(W).sum(axis=0) - np.log(CS).sum(axis=0) + log_d_fact
    return np.exp(log_ratio)


def attribute_mc(
    config: AttributionConfig,
    X,
    y,
    X_test,
    feature_names=None,
    split_data: SplitData | None = None,
) -> AttributionResult:
    """Sampled allocations from ``m`` random feature orderings.

    One uniform permutation stream is shared by every test point, so at
    most ``m * (d - 1) + d + 2`` distinct coalitions are ever trained.
    Shapley estimates average marginal contributions directly;
    proportional-Shapley estimates reweight the same stream by each test
    point's own ordering distribution (estimator "is"), or — under
    estimator "mc" — sample per-point orderings from that distribution
    directly, at the cost of extra coalitions.
    """
    started = time.perf_counter()
    cache, Xt, names = _prepare(config, X, y, X_test, feature_names, split_data, exhaustive=False)
    d, n_t, m = cache.d, Xt.shape[0], config.m
    full = (1 << d) - 1
    want_shap = "shapley" in config.allocations
    want_pshap = "proportional_shapley" in config.allocations

    perms = [_uniform_perm_stream(config.sampling_seed, k, d) for k in range(m)]
    chains = [permutation_chain(p) for p in perms]
    needed: set[int] = {0, full}
    for chain in chains:
        needed.update(chain)
    if want_pshap:
        needed.update(1 << j for j in range(d))
    ordered_masks = sorted(needed)

    run_tasks(lambda i: cache.predictor(ordered_masks[i]) and None, len(ordered_masks), config.n_threads)

    values: dict[str, dict[int, np.ndarray]] = {vf: {} for vf in config.value_fns}
    for mask in ordered_masks:
        lo, up, _ = cache.bounds(mask, Xt)
        for vf in config.value_fns:
            values[vf][mask] = _value_from_bounds(lo, up, vf)

    alloc_matrices: dict[tuple[str, str], np.ndarray] = {}
    stderr_matrices: dict[tuple[str, str], np.ndarray] = {}
    labels: dict[str, str] = {}
    log_d_fact = math.lgamma(d + 1)

    for vf in config.value_fns:
        vals = values[vf]
        mc_rows = np.empty((m, d, n_t))
        for k, (perm, chain) in enumerate(zip(perms, chains)):
            stacked = np.stack([vals[mask] for mask in chain])
            mc_rows[k][perm] = np.diff(stacked, axis=0)
        if want_shap:
            mean = mc_rows.mean(axis=0)
            alloc_matrices[(vf, "shapley")] = mean
            stderr_matrices[(vf, "shapley")] = _rows_stderr(mc_rows)
            labels["shapley"] = "monte_carlo"
        if want_pshap and not config.ps_direct:
            weights = np.abs(
                np.stack([vals[1 << j] for j in range(d)])
            )  # (d, n_t)
            dead = ~(weights > 0.0).any(axis=0)
            if np.any(dead):
                raise DegenerateWeightsError(
                    f"test point {int(np.nonzero(dead)[0][0])} has all-zero individual "
                    f"values under value function {vf!r}; proportional sampling is undefined"
                )
            if np.any(weights == 0.0):
                ratios = np.empty((m, n_t))
                fact = math.factorial(d)
                for k, perm in enumerate(perms):
                    for t in range(n_t):
                        ratios[k, t] = ps_permutation_pmf(weights[:, t], perm) * fact
            else:
                ratios = np.stack(
                    [_ps_ratio_columns(weights, perm, log_d_fact) for perm in perms]
                )
            weighted = mc_rows * ratios[:, None, :]
            alloc_matrices[(vf, "proportional_shapley")] = weighted.mean(axis=0)
            stderr_matrices[(vf, "proportional_shapley")] = _rows_stderr(weighted)
            labels["proportional_shapley"] = "importance_sampling"

    if want_pshap and config.ps_direct:
        _direct_ps_estimates(
            config, cache, Xt, values, alloc_matrices, stderr_matrices
        )
        labels["proportional_shapley"] = "monte_carlo"

    wall = time.perf_counter() - started
    return _point_results(
        config, cache, Xt, names, values, alloc_matrices, stderr_matrices, labels, wall, m
    )


def _rows_stderr(rows: np.ndarray) -> np.ndarray:
    m = rows.shape[0]
    if m < 2:
        return np.zeros(rows.shape[1:])
    return rows.std(axis=0, ddof=1) / math.sqrt(m)


def _direct_ps_estimates(config, cache, Xt, values, alloc_matrices, stderr_matrices) -> None:
    """Per-point proportional sampling (opt-in; trains extra coalitions)."""
    d, n_t, m = cache.d, Xt.shape[0], config.m
    for vf in config.value_fns:
        vals = values[vf]
        est = np.empty((d, n_t))
        err = np.empty((d, n_t))
        for t in range(n_t):
            w = np.abs(np.asarray([vals[1 << j][t] for j in range(d)]))
            if not np.any(w > 0.0):
                raise DegenerateWeightsError(
                    f"test point {t} has all-zero individual values under {vf!r}"
                )
            rows = np.empty((m, d))
            for k in range(m):
                rng = np.random.default_rng(
                    np.random.SeedSequence([int(config.sampling_seed), t, k])
                )
                perm = ps_permutation_sample(w, rng)
                chain = permutation_chain(perm)
                for mask in chain:
                    if mask not in vals:
                        lo, up, _ = cache.bounds(mask, Xt)
                        for vf2 in config.value_fns:
                            values[vf2][mask] = _value_from_bounds(lo, up, vf2)
                stacked = np.asarray([vals[mask][t] for mask in chain])
                rows[k][perm] = np.diff(stacked)
            est[:, t] = rows.mean(axis=0)
            err[:, t] = _rows_stderr(rows)
        alloc_matrices[(vf, "proportional_shapley")] = est
        stderr_matrices[(vf, "proportional_shapley")] = err


def normalize(result: AttributionResult) -> AttributionResult:
    """Rescale every allocation by its full-minus-empty span (sums to 1).

    A span within 1e-12 (relative to the larger of the endpoints) of zero
    has no meaningful shares and raises :class:`DegenerateBaselineError`
    naming the offending test point.
    """
    if result.normalized:
        raise ParameterError("result is already normalized")
    new_points = []
    for p in result.points:
        new_allocs = {}
        for (vf, kind), alloc in p.allocations.items():
            v_full = p.v_full[vf]
            v_empty = result.v_empty[vf]
            span = v_full - v_empty
            eps = BASELINE_EPS_SCALE * max(1.0, abs(v_full), abs(v_empty))
            if abs(span) <= eps:
                raise DegenerateBaselineError(
                    f"test point {p.point_id}: interval {vf} span {span:.3e} is too "
                    f"close to zero to normalize",
                    point_id=p.point_id,
                )
            new_allocs[(vf, kind)] = replace(
                alloc,
                values=alloc.values / span,
                std_err=None if alloc.std_err is None else alloc.std_err / abs(span),
            )
        new_points.append(replace(p, allocations=new_allocs))
    return replace(result, points=tuple(new_points), normalized=True)


# ---------------------------------------------------------------------------
# Rank summaries


@dataclass(frozen=True)
class RankReport:
    """Row-stochastic rank frequencies plus the modal feature per rank."""

    matrix: np.ndarray  # (d, d): rows features, columns ranks (0 = largest)
    top: tuple[tuple[int, int, float], ...]  # (rank, feature index, frequency)
    feature_names: tuple[str, ...]
    value_fn: str
    kind: str


def _rank_orders(matrix_pts: np.ndarray) -> np.ndarray:
    # Descending by |value|; ties break toward the lower feature index.
    return np.argsort(-np.abs(matrix_pts), axis=1, kind="stable")


def rank_matrix_from_values(values: np.ndarray) -> np.ndarray:
    """Features-by-ranks frequency matrix from an (n_points, d) value array.

    Entry (i, r) is the fraction of points where feature ``i`` has the
    (r+1)-th largest absolute value; every column sums to one.
    """
    pts = check_matrix(values, "values")
    n_t, d = pts.shape
    orders = _rank_orders(pts)
    M = np.zeros((d, d))
    for r in range(d):
        counts = np.bincount(orders[:, r], minlength=d)
        M[:, r] = counts / n_t
    return M


def modal_ranks(M: np.ndarray, top_k: int = 5) -> tuple[tuple[int, int, float], ...]:
    """Most frequent feature per rank: (rank, feature index, frequency)."""
    d = M.shape[0]
    top = []
    for r in range(min(top_k, d)):
        feat = int(np.argmax(M[:, r]))
        top.append((r + 1, feat, float(M[feat, r])))
    return tuple(top)


def rank_frequency(result: AttributionResult, value_fn: str | None = None,
                   kind: str | None = None, top_k: int = 5) -> RankReport:
    """How often each feature lands at each |allocation| rank."""
    vf = value_fn or result.value_fns[0]
    kd = kind or result.allocation_kinds[0]
    M = rank_matrix_from_values(result.matrix(vf, kd))
    return RankReport(matrix=M, top=modal_ranks(M, top_k),
                      feature_names=result.feature_names, value_fn=vf, kind=kd)


@dataclass(frozen=True)
class AgreementReport:
    """Per-point rank agreement between two allocations."""

    taus: np.ndarray
    mean_tau: float
    top1_agreement: float
    value_fn: str


def agreement_from_matrices(A: np.ndarray, B: np.ndarray, value_fn: str = "") -> AgreementReport:
    """Per-point Kendall tau and top-1 agreement of |value| rankings.

    Two all-constant rows agree perfectly by convention (there is nothing
    to rank); an undefined tau otherwise counts as zero.
    """
    A = np.abs(check_matrix(A, "A"))
    B = np.abs(check_matrix(B, "B"))
    if A.shape != B.shape:
        raise DimensionError(f"allocation matrices differ in shape: {A.shape} vs {B.shape}")
    n_t = A.shape[0]
    taus = np.empty(n_t)
    top1 = 0
    for t in range(n_t):
        a, b = A[t], B[t]
        if np.ptp(a) == 0.0 and np.ptp(b) == 0.0:
            taus[t] = 1.0
        else:
            stat = kendalltau(a, b).statistic
            taus[t] = 0.0 if not np.isfinite(stat) else float(stat)
        top1 += int(np.argmax(a) == np.argmax(b))
    return AgreementReport(
        taus=taus,
        mean_tau=float(taus.mean()),
        top1_agreement=top1 / n_t,
        value_fn=value_fn,
    )


def compare_allocations(
    result_a: AttributionResult,
    result_b: AttributionResult,
    value_fn: str | None = None,
    kind_a: str | None = None,
    kind_b: str | None = None,
) -> AgreementReport:
    """Kendall-tau and top-1 agreement of |allocation| rankings, per point.

    By convention the first result contributes its Shapley allocation and
    the second its proportional-Shapley allocation when kinds are not
    given explicitly (falling back to whatever single kind is present).
    """
    vf = value_fn or result_a.value_fns[0]
    ka = kind_a or ("shapley" if "shapley" in result_a.allocation_kinds
                    else result_a.allocation_kinds[0])
    kb = kind_b or ("proportional_shapley" if "proportional_shapley" in result_b.allocation_kinds
                    else result_b.allocation_kinds[0])
    return agreement_from_matrices(result_a.matrix(vf, ka), result_b.matrix(vf, kb), vf)


# ---------------------------------------------------------------------------
# sklearn-style front end


class ConformalAttributor(BaseEstimator):
    """Estimator wrapper around :func:`attribute_exact` / :func:`attribute_mc`.

    Parameters mirror :class:`AttributionConfig`; ``fit`` stores the data
    and fixes the train/calibration split, ``attribute`` produces a full
    :class:`AttributionResult`, and ``transform`` returns the allocation
    matrix for the first configured value function and allocation kind.

    Examples
    --------
    >>> att = ConformalAttributor(method="smr", estimator="exact", alpha=0.2)
    >>> result = att.fit(X, y).attribute(X_new)   # doctest: +SKIP
    """

    def __init__(
        self,
        method: str = "smr",
        value_fns: tuple[str, ...] = ("width",),
        allocations: tuple[str, ...] = ("shapley",),
        estimator: str = "exact",
        m: int = 500,
        alpha: float = 0.1,
        mean_spec: RegressorSpec | None = None,
        dispersion_spec: RegressorSpec | None = None,
        quantile_spec: RegressorSpec | None = None,
        cqr_levels: tuple[float, float] | None = None,
        dispersion_transform: str = "absolute",
        split_ratios: tuple[float, float] = (0.8, 0.2),
        egalitarian_fallback: bool = False,
        random_state: int = 0,
        n_threads: int | None = None,
    ):
        self.method = method
        self.value_fns = value_fns
        self.allocations = allocations
        self.estimator = estimator
        self.m = m
        self.alpha = alpha
        self.mean_spec = mean_spec
        self.dispersion_spec = dispersion_spec
        self.quantile_spec = quantile_spec
        self.cqr_levels = cqr_levels
        self.dispersion_transform = dispersion_transform
        self.split_ratios = split_ratios
        self.egalitarian_fallback = egalitarian_fallback
        self.random_state = random_state
        self.n_threads = n_threads

    def _config(self) -> AttributionConfig:
        seeds = derive_seeds(self.random_state)
        return AttributionConfig(
            method=self.method,
            value_fns=tuple(self.value_fns),
            allocations=tuple(self.allocations),
            estimator=self.estimator,
            m=self.m,
            alpha=self.alpha,
            mean_spec=self.mean_spec or RegressorSpec.linear(),
            dispersion_spec=self.dispersion_spec,
            quantile_spec=self.quantile_spec,
            cqr_levels=self.cqr_levels,
            dispersion_transform=self.dispersion_transform,
            split_ratios=tuple(self.split_ratios),
            split_seed=seeds["split"],
            train_seed=seeds["train"],
            sampling_seed=seeds["sampling"],
            egalitarian_fallback=self.egalitarian_fallback,
            n_threads=self.n_threads,
        )

    def fit(self, X, y):
        config = self._config()
        X = check_matrix(X, "X")
        y = check_vector(y, "y")
        check_same_rows(X, y)
        self.n_features_in_ = X.shape[1]
        self.config_ = config
        self.X_ = X
        self.y_ = y
        self.split_ = split(X.shape[0], config.split_ratios, config.split_seed)
        return self

    def attribute(self, X) -> AttributionResult:
        if not hasattr(self, "config_"):
            raise ParameterError("estimator is not fitted; call fit(X, y) first")
        runner = attribute_exact if self.config_.estimator == "exact" else attribute_mc
        return runner(self.config_, self.X_, self.y_, X, split_data=self.split_)

    def transform(self, X) -> np.ndarray:
        return self.attribute(X).matrix()

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)


def derive_seeds(root_seed: int) -> dict[str, int]:
    """Stable split/train/sampling seeds derived from a single root seed."""
    state = np.random.SeedSequence([int(root_seed)]).generate_state(3)
    return {
        "split": int(state[0]),
        "train": int(state[1]),
        "sampling": int(state[2]),
    }
