"""Synthetic benchmarks: generators and two study harnesses.

Two data-generating processes are provided, both on independent uniform
features:

* an exponential response over 16 features whose coefficient vector sets
  the importance tiers, used to study how sampled allocations converge to
  exact ones as the permutation count grows; and
* an 11-feature process whose conditional *mean* depends on features
  6-10, whose conditional *variance* depends on features 1-5, and whose
  feature 11 is pure noise, used to compare interval-width attributions
  against moment-based ones.

The harnesses emit tidy tables meant for external plotting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ._threads import run_tasks
from .attribution import (
    AttributionConfig,
    CoalitionModelCache,
    _coalition_seed,
    attribute_exact,
    attribute_mc,
)
from .allocation import shapley_from_dense
from .conformal import SplitData, interval_bounds, split
from .dataio import Dataset, dataset_from_arrays
from .exceptions import ParameterError
from .games import members_of
from .regressors import RegressorSpec, train
from .validation import check_positive_int

__all__ = [
    "SobolLevitanSpec",
    "FriedmanVariantSpec",
    "default_sobol_beta",
    "sobol_levitan_response",
    "gen_sobol_levitan",
    "friedman_component",
    "friedman_v",
    "friedman_z",
    "gen_friedman_variant",
    "convergence_study",
    "convergence_summary",
    "run_sobol_convergence",
    "COMPARISON_TARGETS",
    "MomentComparison",
    "run_friedman_comparison",
    "V_FLOOR",
]

# Variance floor applied before sampling the 11-feature target.
V_FLOOR = 1e-6

MEAN_GROUP = (5, 6, 7, 8, 9)  # zero-based indices of x6..x10
VARIANCE_GROUP = (0, 1, 2, 3, 4)  # x1..x5
NOISE_FEATURE = 10  # x11


def default_sobol_beta() -> np.ndarray:
    """Two importance tiers: eight strong features, eight weak ones."""
    return np.asarray([0.2] * 8 + [0.05] * 8)


@dataclass(frozen=True)
class SobolLevitanSpec:
    """Exponential benchmark: 16 uniform features, tunable coefficients."""

    n: int
    beta: np.ndarray = field(default_factory=default_sobol_beta)
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n, "n")
        beta = np.asarray(self.beta, dtype=np.float64).ravel()
        if beta.size != 16:
            raise ParameterError(f"beta must have 16 entries, got {beta.size}")
        if np.any(beta == 0.0) or not np.all(np.isfinite(beta)):
            raise ParameterError("beta entries must be finite and nonzero")
        object.__setattr__(self, "beta", beta)
        if not (float(self.noise_sd) >= 0.0):
            raise ParameterError(f"noise_sd must be >= 0, got {self.noise_sd}")


def sobol_levitan_response(X, beta) -> np.ndarray:
    """Noise-free response: exp(beta . x) plus the constant prod (e^b - 1)/b."""
    X = np.asarray(X, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64).ravel()
    constant = float(np.prod((np.exp(beta) - 1.0) / beta))
    return np.exp(X @ beta) + constant


def gen_sobol_levitan(spec: SobolLevitanSpec) -> Dataset:
    """Sample the 16-feature exponential benchmark.

    Draw order is fixed (features, then noise), so a seed pins the whole
    dataset.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed)]))
    X = rng.random((spec.n, 16))
    y = sobol_levitan_response(X, spec.beta) + rng.normal(0.0, spec.noise_sd, spec.n)
    return dataset_from_arrays(
        X, y,
        meta={
            "generator": "sobol_levitan",
            "beta": spec.beta.tolist(),
            "noise_sd": float(spec.noise_sd),
            "seed": int(spec.seed),
        },
    )


@dataclass(frozen=True)
class FriedmanVariantSpec:
    """Heteroskedastic 11-feature benchmark."""

    n: int
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n, "n")


def friedman_component(X5: np.ndarray) -> np.ndarray:
    """10 sin(pi a b) + 20 (c - 1/2)^2 + 10 d + 5 e on five columns."""
    X5 = np.asarray(X5, dtype=np.float64)
    return (
        10.0 * np.sin(np.pi * X5[:, 0] * X5[:, 1])
        + 20.0 * (X5[:, 2] - 0.5) ** 2
        + 10.0 * X5[:, 3]
        + 5.0 * X5[:, 4]
    )


def friedman_v(X) -> np.ndarray:
    """Noise-free conditional variance, driven by features 1-5."""
    return friedman_component(np.asarray(X, dtype=np.float64)[:, 0:5])


def friedman_z(X) -> np.ndarray:
    """Noise-free conditional mean, driven by features 6-10."""
    return friedman_component(np.asarray(X, dtype=np.float64)[:, 5:10])


def gen_friedman_variant(spec: FriedmanVariantSpec) -> Dataset:
    """Sample the 11-feature benchmark with heteroskedastic noise.

    The latent mean ``Z`` and variance ``V`` each carry their own unit
    Gaussian noise; ``V`` is floored at ``V_FLOOR`` before the target is
    drawn as ``N(Z, V)`` (``V`` being the *variance*).  The floored ``V``
    and sampled ``Z`` are returned in ``extras`` for oracle checks.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed)]))
    X = rng.random((spec.n, 11))
    V = np.maximum(friedman_v(X) + rng.normal(size=spec.n), V_FLOOR)
    Z = friedman_z(X) + rng.normal(size=spec.n)
    y = rng.normal(Z, np.sqrt(V))
    return dataset_from_arrays(
        X, y,
        meta={"generator": "friedman_variant", "seed": int(spec.seed)},
        extras={"V": V, "Z": Z},
    )


# ---------------------------------------------------------------------------
# Convergence / runtime study


def _study_seed(root: int, m: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(root), int(m), int(rep)]).generate_state(1)[0])


def convergence_study(
    config: AttributionConfig,
    X,
    y,
    X_test,
    m_grid: Sequence[int],
    repetitions: int,
    seed: int = 0,
    split_data: SplitData | None = None,
    feature_names=None,
    rep_workers: int = 1,
) -> pd.DataFrame:
    """Exact baseline plus repeated sampled runs over a permutation grid.

    Returns one tidy row per (run, test point, feature) with the estimate,
    its standard error, the absolute error against the exact baseline, and
    the run's trained-coalition count and wall time.  Sampled runs use
    independent sampling seeds derived from ``seed``; ``rep_workers``
    stays at 1 by default so wall times are comparable.
    """
    m_grid = [int(m) for m in m_grid]
    if not m_grid or any(m < 1 for m in m_grid):
        raise ParameterError(f"m_grid must be positive integers, got {m_grid!r}")
    check_positive_int(repetitions, "repetitions")
    if split_data is None:
        split_data = split(np.asarray(X).shape[0], config.split_ratios, config.split_seed)

    exact_cfg = replace(config, estimator="exact")
    exact = attribute_exact(exact_cfg, X, y, X_test, feature_names, split_data)
    exact_vals = exact.matrix()  # (n_test, d)
    names = exact.feature_names
    n_test, d = exact_vals.shape

    def tidy_rows(result, estimator, m, rep):
        vals = result.matrix()
        rows = []
        diag = result.diagnostics
        for t in range(n_test):
            for j in range(d):
                alloc = result.points[t].allocations[(config.value_fns[0], config.allocations[0])]
                rows.append({
                    "estimator": estimator,
                    "m": m,
                    "repetition": rep,
                    "point_id": t,
                    "feature": names[j],
                    "estimate": vals[t, j],
                    "std_err": np.nan if alloc.std_err is None else alloc.std_err[j],
                    "abs_error": abs(vals[t, j] - exact_vals[t, j]),
                    "trained_count": diag.trained_count,
                    "models_trained": diag.models_trained,
                    "wall_time_s": diag.wall_time_s,
                })
        return rows

    all_rows = tidy_rows(exact, "exact", 0, 0)

    jobs = [(m, rep) for m in m_grid for rep in range(repetitions)]
    results: list[list[dict]] = [None] * len(jobs)  # type: ignore[list-item]

    def run_one(i: int) -> None:
        m, rep = jobs[i]
        cfg = replace(config, estimator="mc", m=m, sampling_seed=_study_seed(seed, m, rep))
        res = attribute_mc(cfg, X, y, X_test, feature_names, split_data)
        results[i] = tidy_rows(res, "mc", m, rep)

    run_tasks(run_one, len(jobs), rep_workers)
    for chunk in results:
        all_rows.extend(chunk)
    return pd.DataFrame(all_rows)


def convergence_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-m aggregation of a convergence study: MAD, counts, wall times."""
    mc = frame[frame["estimator"] != "exact"]
    per_run = mc.groupby(["m", "repetition"]).agg(
        mad=("abs_error", "mean"),
        trained_count=("trained_count", "first"),
        wall_time_s=("wall_time_s", "first"),
    ).reset_index()
    out = per_run.groupby("m").agg(
        mad=("mad", "mean"),
        trained_mean=("trained_count", "mean"),
        trained_max=("trained_count", "max"),
        wall_mean_s=("wall_time_s", "mean"),
    ).reset_index()
    exact = frame[frame["estimator"] == "exact"]
    if len(exact):
        out.attrs["exact_wall_s"] = float(exact["wall_time_s"].iloc[0])
        out.attrs["exact_trained"] = int(exact["trained_count"].iloc[0])
    return out


def run_sobol_convergence(
    m_grid: Sequence[int] = (50, 100, 200, 400),
    repetitions: int = 30,
    seed: int = 0,
    n_train: int = 2000,
    n_cal: int = 1000,
    n_test: int = 50,
    alpha: float = 0.1,
    beta=None,
    noise_sd: float = 1.0,
    n_threads: int | None = None,
) -> tuple[pd.DataFrame, dict]:
    """Convergence study on the exponential benchmark with linear models.

    Width of the constant-margin interval is attributed by Shapley values;
    the test partition defaults to 50 points.
    """
    roots = np.random.SeedSequence([int(seed)]).generate_state(4)
    spec = SobolLevitanSpec(
        n=n_train + n_cal + n_test,
        beta=default_sobol_beta() if beta is None else beta,
        noise_sd=noise_sd,
        seed=int(roots[0]),
    )
    data = gen_sobol_levitan(spec)
    n = data.n_rows
    split_data = split(n, (n_train / n, n_cal / n), seed=int(roots[1]))
    config = AttributionConfig(
        method="smr",
        value_fns=("width",),
        allocations=("shapley",),
        alpha=alpha,
        mean_spec=RegressorSpec.linear(),
        split_ratios=(n_train / n, n_cal / n),
        split_seed=int(roots[1]),
        train_seed=int(roots[2]),
        n_threads=n_threads,
    )
    frame = convergence_study(
        config,
        data.X, data.y, data.X[split_data.test],
        m_grid=m_grid,
        repetitions=repetitions,
        seed=int(roots[3]),
        split_data=split_data,
        feature_names=data.feature_names,
    )
    meta = {
        "benchmark": "sobol-levitan",
        "n_train": n_train, "n_cal": n_cal, "n_test": n_test,
        "alpha": alpha,
        "beta": spec.beta.tolist(),
        "noise_sd": noise_sd,
        "seed": int(seed),
        "m_grid": list(m_grid),
        "repetitions": int(repetitions),
        "dataset_fingerprint": data.fingerprint,
    }
    return frame, meta


# ---------------------------------------------------------------------------
# Moment-vs-width comparison


COMPARISON_TARGETS = ("conditional_mean", "conditional_variance", "lacp_width", "cqr_width")


@dataclass(frozen=True)
class MomentComparison:
    """Shapley attributions of four per-coalition targets on one test set."""

    allocations: Mapping[str, np.ndarray]  # target -> (n_test, d)
    per_feature: pd.DataFrame  # target, feature, mean_value, mean_abs, q05, q95
    feature_names: tuple[str, ...]
    meta: Mapping[str, object]

    def mean_abs(self, target: str) -> np.ndarray:
        return np.abs(self.allocations[target]).mean(axis=0)

    def group_share(self, target: str, features: Sequence[int]) -> float:
        """Share of total mean |allocation| carried by a feature group."""
        mean_abs = self.mean_abs(target)
        return float(mean_abs[list(features)].sum() / mean_abs.sum())


def run_friedman_comparison(
    seed: int = 0,
    n_train: int = 2000,
    n_cal: int = 1000,
    n_test: int = 500,
    alpha: float = 0.01,
    cqr_levels: tuple[float, float] = (0.1, 0.9),
    trees: int = 60,
    max_leaves: int = 10,
    learning_rate: float = 0.1,
    scale_spec: RegressorSpec | None = None,
    quantile_spec: RegressorSpec | None = None,
    variance_spec: RegressorSpec | None = None,
    n_threads: int | None = None,
) -> MomentComparison:
    """Attribute four targets on the heteroskedastic benchmark.

    Every feature coalition gets a tree-ensemble conditional-mean model, a
    conditional-variance model (cross-fitted squared residuals), an
    absolute-residual-scaled conformal interval, and a quantile-pair
    conformal interval; each target's per-coalition value (prediction or
    interval width) is decomposed into Shapley values over all test
    points.

    ``trees``/``max_leaves``/``learning_rate`` configure the
    conditional-mean ensemble.  Absolute-residual scale models default to
    a strongly regularized ensemble because their target is
    noise-dominated; the conditional-variance models default to wide
    k-nearest-neighbor averages because the squared-residual target is
    noisier still; and the quantile pair defaults to k-nearest-neighbor
    quantiles, which pick up variance-driven width structure that linear
    quantile planes cannot represent.
    """
    started = time.perf_counter()
    roots = np.random.SeedSequence([int(seed)]).generate_state(3)
    n = n_train + n_cal + n_test
    data = gen_friedman_variant(FriedmanVariantSpec(n=n, seed=int(roots[0])))
    split_data = split(n, (n_train / n, n_cal / n), seed=int(roots[1]))
    tree_spec = RegressorSpec.tree(
        trees=trees, max_leaves=max_leaves, learning_rate=learning_rate
    )
    if scale_spec is None:
        scale_spec = RegressorSpec.tree(
            trees=120, max_leaves=4, learning_rate=0.03, min_node_fraction=0.08
        )
    if quantile_spec is None:
        quantile_spec = RegressorSpec.knn(k=100)
    if variance_spec is None:
        variance_spec = RegressorSpec.knn(k=300)
    train_seed = int(roots[2])
    common = dict(
        value_fns=("width",),
        allocations=("shapley",),
        alpha=alpha,
        mean_spec=tree_spec,
        dispersion_spec=scale_spec,
        split_ratios=(n_train / n, n_cal / n),
        split_seed=int(roots[1]),
        train_seed=train_seed,
        n_threads=n_threads,
    )
    cfg_lacp = AttributionConfig(method="lacp", dispersion_transform="absolute", **common)
    cfg_cqr = AttributionConfig(
        method="cqr", cqr_levels=cqr_levels,
        quantile_spec=quantile_spec, **common,
    )
    cache_lacp = CoalitionModelCache(cfg_lacp, data.X, data.y, split_data)
    cache_cqr = CoalitionModelCache(cfg_cqr, data.X, data.y, split_data)
    d = cache_lacp.d
    n_masks = 1 << d
    X_test = data.X[split_data.test]

    def warm(i: int) -> None:
        cache_lacp.predictor(i)
        cache_cqr.predictor(i)

    run_tasks(warm, n_masks, n_threads)

    # Conditional-variance target: squared out-of-fold residuals of the
    # mean model, fixed once; each coalition retrains only the variance
    # regressor on that response.  Three details matter here.  Re-deriving
    # residuals per coalition would hand every mean feature a large
    # constant-shift contribution (its share of the explainable-variance
    # reduction), drowning the heteroskedasticity structure this target
    # is after.  In-sample residuals of a boosted mean model are
    # systematically carved along every feature it happened to split on,
    # noise features included, so the residuals are cross-fitted: the
    # training rows are shuffled into two folds and each fold is scored
    # by a mean model fit on the other.  And squared residuals are
    # heavy-tailed (a chi-square profile scaled by the local variance), so
    # the target is winsorized at its 90th percentile; the tail carries
    # almost no conditional ordering but dominates every fit's noise.
    X_tr, y_tr = cache_lacp.X_train, cache_lacp.y_train
    fold_rng = np.random.default_rng(np.random.SeedSequence([train_seed, 5]))
    order = fold_rng.permutation(X_tr.shape[0])
    half = X_tr.shape[0] // 2
    resid_sq = np.empty_like(y_tr)
    for stream, (rows_in, rows_out) in enumerate(
        ((order[:half], order[half:]), (order[half:], order[:half])), start=5
    ):
        fold_mean = train(
            tree_spec,
            X_tr[rows_in],
            y_tr[rows_in],
            seed=_coalition_seed(train_seed, n_masks - 1, stream),
        )
        resid_sq[rows_out] = (
            y_tr[rows_out] - fold_mean.predict_batch(X_tr[rows_out])
        ) ** 2
    resid_sq = np.minimum(resid_sq, np.quantile(resid_sq, 0.90))
    var_models: list = [None] * n_masks

    def fit_var(mask: int) -> None:
        cols = list(members_of(mask))
        var_models[mask] = train(
            variance_spec,
            X_tr[:, cols],
            resid_sq,
            seed=_coalition_seed(train_seed, mask, 4),
            coalition=mask,
            data_digest=cache_lacp.data_digest,
            role="variance",
        )

    run_tasks(fit_var, n_masks, n_threads)

    values = {t: np.empty((n_masks, n_test)) for t in COMPARISON_TARGETS}
    for mask in range(n_masks):
        cols = list(members_of(mask))
        Xt = X_test[:, cols]
        pred_lacp = cache_lacp.predictor(mask)
        values["conditional_mean"][mask] = pred_lacp.models["mean"].predict_batch(Xt)
        values["conditional_variance"][mask] = var_models[mask].predict_batch(Xt)
        lo, up, _ = interval_bounds(pred_lacp, Xt)
        values["lacp_width"][mask] = up - lo
        lo, up, _ = interval_bounds(cache_cqr.predictor(mask), Xt)
        values["cqr_width"][mask] = up - lo

    allocations = {
        t: shapley_from_dense(values[t], d).T for t in COMPARISON_TARGETS
    }

    rows = []
    for t in COMPARISON_TARGETS:
        A = allocations[t]
        for j, name in enumerate(data.feature_names):
            col = A[:, j]
            rows.append({
                "target": t,
                "feature": name,
                "mean_value": col.mean(),
                "mean_abs": np.abs(col).mean(),
                "q05": np.quantile(col, 0.05),
                "q95": np.quantile(col, 0.95),
            })
    meta = {
        "benchmark": "friedman",
        "n_train": n_train, "n_cal": n_cal, "n_test": n_test,
        "alpha": alpha, "cqr_levels": list(cqr_levels),
        "trees": trees, "max_leaves": max_leaves, "learning_rate": learning_rate,
        "scale_spec": scale_spec.key(), "quantile_spec": quantile_spec.key(),
        "variance_spec": variance_spec.key(),
        "seed": int(seed),
        "dataset_fingerprint": data.fingerprint,
        "trained_models": cache_lacp.models_trained + cache_cqr.models_trained + n_masks + 2,
        "wall_time_s": time.perf_counter() - started,
    }
    return MomentComparison(
        allocations=allocations,
        per_feature=pd.DataFrame(rows),
        feature_names=data.feature_names,
        meta=meta,
    )
