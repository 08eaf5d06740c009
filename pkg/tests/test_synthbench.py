"""Tests for the synthetic generators and study harnesses."""

import math

import numpy as np
import pytest

from cpshap.attribution import AttributionConfig
from cpshap.exceptions import ParameterError
from cpshap.regressors import RegressorSpec
from cpshap.synthbench import (
    COMPARISON_TARGETS,
    V_FLOOR,
    FriedmanVariantSpec,
    SobolLevitanSpec,
    convergence_study,
    convergence_summary,
    default_sobol_beta,
    friedman_component,
    friedman_v,
    friedman_z,
    gen_friedman_variant,
    gen_sobol_levitan,
    run_friedman_comparison,
    run_sobol_convergence,
    sobol_levitan_response,
)


# ---------------------------------------------------------------------------
# Exponential benchmark


def test_default_beta_two_tiers():
    beta = default_sobol_beta()
    assert beta.shape == (16,)
    np.testing.assert_array_equal(beta[:8], 0.2)
    np.testing.assert_array_equal(beta[8:], 0.05)


def test_sobol_spec_validation():
    with pytest.raises(ParameterError):
        SobolLevitanSpec(n=0)
    with pytest.raises(ParameterError):
        SobolLevitanSpec(n=10, beta=np.ones(4))
    with pytest.raises(ParameterError):
        SobolLevitanSpec(n=10, beta=np.r_[np.zeros(1), np.ones(15)])
    with pytest.raises(ParameterError):
        SobolLevitanSpec(n=10, noise_sd=-1.0)


def test_sobol_response_hand_value_at_midpoint():
    beta = default_sobol_beta()
    X = np.full((1, 16), 0.5)
    constant = ((math.exp(0.2) - 1.0) / 0.2) ** 8 * ((math.exp(0.05) - 1.0) / 0.05) ** 8
    want = math.exp(0.5 * beta.sum()) + constant
    got = sobol_levitan_response(X, beta)
    assert got[0] == pytest.approx(want, rel=1e-12)


def test_sobol_response_is_monotone_in_each_feature():
    rng = np.random.default_rng(0)
    X = rng.random((50, 16))
    base = sobol_levitan_response(X, default_sobol_beta())
    for j in (0, 8, 15):
        bumped = X.copy()
        bumped[:, j] = np.minimum(bumped[:, j] + 0.1, 1.0)
        assert np.all(sobol_levitan_response(bumped, default_sobol_beta()) >= base)


def test_gen_sobol_deterministic_and_in_range():
    a = gen_sobol_levitan(SobolLevitanSpec(n=300, seed=4))
    b = gen_sobol_levitan(SobolLevitanSpec(n=300, seed=4))
    assert a.fingerprint == b.fingerprint
    assert a.X.shape == (300, 16)
    assert np.all((a.X >= 0.0) & (a.X < 1.0))
    assert a.meta["generator"] == "sobol_levitan"
    c = gen_sobol_levitan(SobolLevitanSpec(n=300, seed=5))
    assert c.fingerprint != a.fingerprint


def test_gen_sobol_noise_level():
    spec = SobolLevitanSpec(n=4000, seed=1, noise_sd=0.5)
    data = gen_sobol_levitan(spec)
    resid = data.y - sobol_levitan_response(data.X, spec.beta)
    assert abs(resid.std() - 0.5) < 0.05
    assert abs(resid.mean()) < 0.05


# ---------------------------------------------------------------------------
# Heteroskedastic benchmark


def test_friedman_component_hand_value():
    row = np.full((1, 5), 0.5)
    want = 10.0 * math.sin(math.pi * 0.25) + 0.0 + 5.0 + 2.5
    assert friedman_component(row)[0] == pytest.approx(want, rel=1e-12)


def test_friedman_groups_use_disjoint_columns():
    rng = np.random.default_rng(0)
    X = rng.random((40, 11))
    np.testing.assert_array_equal(friedman_v(X), friedman_component(X[:, 0:5]))
    np.testing.assert_array_equal(friedman_z(X), friedman_component(X[:, 5:10]))
    X2 = X.copy()
    X2[:, 10] = 0.0  # the noise feature touches neither moment
    np.testing.assert_array_equal(friedman_v(X2), friedman_v(X))
    np.testing.assert_array_equal(friedman_z(X2), friedman_z(X))


def test_gen_friedman_shapes_floor_and_determinism():
    data = gen_friedman_variant(FriedmanVariantSpec(n=500, seed=7))
    assert data.X.shape == (500, 11)
    assert np.all(data.extras["V"] >= V_FLOOR)
    twin = gen_friedman_variant(FriedmanVariantSpec(n=500, seed=7))
    assert twin.fingerprint == data.fingerprint
    np.testing.assert_array_equal(twin.extras["Z"], data.extras["Z"])


def test_gen_friedman_latent_moments_match_target():
    data = gen_friedman_variant(FriedmanVariantSpec(n=20000, seed=3))
    gap = data.y - data.extras["Z"]
    assert abs(gap.mean()) < 0.1
    assert abs(gap.var() / data.extras["V"].mean() - 1.0) < 0.05


def test_gen_friedman_variance_slope_near_one():
    data = gen_friedman_variant(FriedmanVariantSpec(n=4000, seed=2))
    signal = friedman_v(data.X)
    slope = np.polyfit(signal, data.extras["V"], 1)[0]
    assert abs(slope - 1.0) < 0.1


def test_gen_friedman_noise_feature_uncorrelated():
    data = gen_friedman_variant(FriedmanVariantSpec(n=4000, seed=2))
    r = np.corrcoef(data.X[:, 10], data.y)[0, 1]
    assert abs(r) < 3.0 / math.sqrt(data.n_rows)


# ---------------------------------------------------------------------------
# Convergence study


def small_study(seed=0, m_grid=(3, 6), repetitions=2, n_test=3):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 4))
    y = X @ np.array([1.0, -1.0, 0.5, 2.0]) + rng.normal(size=200)
    config = AttributionConfig(
        method="smr", alpha=0.2, mean_spec=RegressorSpec.linear()
    )
    frame = convergence_study(
        config, X, y, X[:n_test], m_grid=m_grid, repetitions=repetitions, seed=seed
    )
    return frame


def test_study_tidy_layout_and_exact_baseline():
    frame = small_study()
    assert set(frame["estimator"]) == {"exact", "mc"}
    exact = frame[frame["estimator"] == "exact"]
    assert len(exact) == 3 * 4
    np.testing.assert_array_equal(exact["abs_error"], 0.0)
    assert exact["std_err"].isna().all()
    assert len(frame) == (1 + 2 * 2) * 3 * 4
    assert set(frame["m"]) == {0, 3, 6}


def test_study_trained_counts_within_budget():
    frame = small_study()
    mc = frame[frame["estimator"] == "mc"]
    for m, group in mc.groupby("m"):
        assert group["trained_count"].max() <= m * (4 - 1) + 4 + 2


def test_study_deterministic_in_seed():
    a = small_study(seed=5)
    b = small_study(seed=5)
    np.testing.assert_array_equal(a["estimate"].to_numpy(), b["estimate"].to_numpy())
    c = small_study(seed=6)
    assert np.any(a["estimate"].to_numpy() != c["estimate"].to_numpy())


def test_study_rejects_bad_grid_and_repetitions():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    y = rng.normal(size=60)
    config = AttributionConfig(method="smr", alpha=0.2)
    with pytest.raises(ParameterError):
        convergence_study(config, X, y, X[:2], m_grid=[], repetitions=2)
    with pytest.raises(ParameterError):
        convergence_study(config, X, y, X[:2], m_grid=[0], repetitions=2)
    with pytest.raises(ParameterError):
        convergence_study(config, X, y, X[:2], m_grid=[3], repetitions=0)


def test_summary_aggregates_per_m():
    frame = small_study()
    out = convergence_summary(frame)
    assert list(out["m"]) == [3, 6]
    mc = frame[frame["estimator"] == "mc"]
    want = mc.groupby(["m", "repetition"])["abs_error"].mean().groupby("m").mean()
    np.testing.assert_allclose(out["mad"].to_numpy(), want.to_numpy())
    assert out.attrs["exact_trained"] == 16
    assert out.attrs["exact_wall_s"] > 0.0


# ---------------------------------------------------------------------------
# Packaged studies (smallest useful scales; the real sizes run elsewhere)


def test_run_sobol_convergence_small_scale():
    frame, meta = run_sobol_convergence(
        m_grid=(3,), repetitions=1, seed=0, n_train=160, n_cal=90, n_test=2
    )
    assert meta["benchmark"] == "sobol-levitan"
    assert meta["m_grid"] == [3] and meta["repetitions"] == 1
    assert len(meta["dataset_fingerprint"]) == 64
    exact = frame[frame["estimator"] == "exact"]
    assert exact["trained_count"].iloc[0] == 1 << 16
    mc = frame[frame["estimator"] == "mc"]
    assert mc["trained_count"].max() <= 3 * 15 + 16 + 2
    assert set(frame["feature"]) == {f"x{j}" for j in range(1, 17)}


def test_run_friedman_comparison_small_scale():
    res = run_friedman_comparison(
        seed=0,
        n_train=120,
        n_cal=80,
        n_test=6,
        alpha=0.05,
        trees=2,
        max_leaves=3,
        learning_rate=0.5,
        scale_spec=RegressorSpec.tree(trees=2, max_leaves=3, learning_rate=0.5),
        quantile_spec=RegressorSpec.constant(),
    )
    assert set(res.allocations) == set(COMPARISON_TARGETS)
    for target in COMPARISON_TARGETS:
        A = res.allocations[target]
        assert A.shape == (6, 11)
        assert np.all(np.isfinite(A))
        assert res.mean_abs(target).shape == (11,)
    share = res.group_share("conditional_mean", list(range(5)))
    assert 0.0 <= share <= 1.0
    assert len(res.per_feature) == 4 * 11
    assert set(res.per_feature.columns) == {
        "target", "feature", "mean_value", "mean_abs", "q05", "q95",
    }
    assert res.meta["trained_models"] == 5 * (1 << 11) + 2
    assert res.feature_names == tuple(f"x{j}" for j in range(1, 12))
