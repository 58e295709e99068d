import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import switchlab as sl
from switchlab.errors import BootstrapDegenerate, DegenerateDesign
from switchlab.tvcdp import (
    TVCDP,
    covariance_bundle,
    de_wald_test,
    decompose_residuals,
    direct_effect,
    fit_outcome_ols,
    fit_paths,
    ie_bootstrap_test,
    indirect_effect,
    rollout_ate,
    select_bandwidth,
)


def _noiseless_panel(env, n=40, seed=0):
    quiet = sl.Environment(
        theta=env.theta,
        Theta=env.Theta,
        eta_cov=np.zeros_like(env.eta_cov),
        eps_sd=np.zeros_like(env.eps_sd),
        state_noise_sd=np.zeros_like(env.state_noise_sd),
        init_pool=env.init_pool,
    )
    return sl.simulate_dataset(quiet, sl.DesignSpec("bernoulli", seed=9), n, seed=seed)


def test_raw_fit_recovers_truth_noiseless(linear_env):
    ds = _noiseless_panel(linear_env)
    raw, _ = fit_paths(ds, sl.KernelSpec(h=0.1), ridge=1e-10)
    assert np.allclose(raw.theta, linear_env.theta, atol=1e-5)
    assert np.allclose(raw.Theta, linear_env.Theta, atol=1e-5)


def test_effects_match_rollout_oracle(linear_env):
    ds = _noiseless_panel(linear_env)
    _, smooth = fit_paths(ds, sl.KernelSpec(h=0.05))
    de = direct_effect(smooth)
    ie = indirect_effect(smooth)
    ate = rollout_ate(smooth, ds.states[0, 0])
    assert de + ie == pytest.approx(ate, abs=1e-8)


def test_environment_truth_consistency(linear_env):
    # The environment's plug-in effects also satisfy the decomposition.
    path = sl.CoefficientPath(linear_env.theta, linear_env.Theta, smoothed=True)
    init = linear_env.init_pool[0]
    assert direct_effect(path) + indirect_effect(path) == pytest.approx(
        rollout_ate(path, init), abs=1e-10
    )


def test_smoothing_is_weighted_average(small_panel):
    spec = sl.KernelSpec(h=0.2)
    raw, smooth = fit_paths(small_panel, spec)
    from switchlab.kernels import temporal_smoothing_matrix

    W = temporal_smoothing_matrix(spec, small_panel.m)
    assert np.allclose(smooth.theta, W @ raw.theta)


def test_constant_actions_degenerate():
    states = np.random.default_rng(0).standard_normal((10, 6, 1))
    actions = np.ones((10, 6))
    outcomes = np.random.default_rng(1).standard_normal((10, 6))
    ds = sl.PanelDataset(states, actions, outcomes)
    with pytest.raises(DegenerateDesign):
        fit_paths(ds, sl.KernelSpec(h=0.1), ridge=0.0)


def test_wald_test_report_fields(small_panel):
    rep = de_wald_test(small_panel, sl.KernelSpec(h=0.1))
    assert rep.effect == "DE"
    assert 0.0 <= rep.p_value <= 1.0
    assert rep.reject == (rep.p_value <= rep.alpha)
    assert rep.se > 0
    d = rep.to_dict()
    assert set(d) >= {"effect", "estimate", "p_value", "reject", "alpha"}


def test_wald_two_sided_doubles_tail(small_panel):
    one = de_wald_test(small_panel, sl.KernelSpec(h=0.1), sides="one_sided")
    two = de_wald_test(small_panel, sl.KernelSpec(h=0.1), sides="two_sided")
    tail = min(one.p_value, 1.0 - one.p_value)
    assert two.p_value == pytest.approx(min(1.0, 2.0 * tail))


def test_residual_decomposition_adds_up(small_panel):
    spec = sl.KernelSpec(h=0.1)
    _, smooth = fit_paths(small_panel, spec)
    total, eta, eps = decompose_residuals(small_panel, smooth, spec)
    assert np.allclose(total, eta + eps, atol=1e-10)
    Z = small_panel.regressors()
    fitted = np.einsum("imp,mp->im", Z, smooth.theta)
    assert np.allclose(total, small_panel.outcomes - fitted)


def test_covariance_bundle_psd(small_panel):
    spec = sl.KernelSpec(h=0.1)
    _, smooth = fit_paths(small_panel, spec)
    bundle = covariance_bundle(small_panel, smooth, spec)
    m, p = small_panel.m, small_panel.d + 2
    assert bundle.sigma_y.shape == (m, m)
    for flat in (bundle.V_theta, bundle.V_smoothed):
        assert flat.shape == (m * p, m * p)
        assert np.allclose(flat, flat.T, atol=1e-8)
        evals = np.linalg.eigvalsh((flat + flat.T) / 2)
        assert evals.min() > -1e-8 * max(evals.max(), 1.0)


def test_ie_bootstrap_deterministic(small_panel):
    spec = sl.KernelSpec(h=0.1)
    r1 = ie_bootstrap_test(small_panel, spec, n_bootstrap=50, seed=11)
    r2 = ie_bootstrap_test(small_panel, spec, n_bootstrap=50, seed=11)
    assert r1.p_value == r2.p_value
    assert np.array_equal(r1.bootstrap_draws, r2.bootstrap_draws)


def test_ie_bootstrap_pvalue_floor(small_panel):
    B = 40
    rep = ie_bootstrap_test(small_panel, sl.KernelSpec(h=0.1), n_bootstrap=B, seed=1)
    assert rep.p_value >= 1.0 / (B + 1)
    assert rep.n_bootstrap == B


def test_ie_bootstrap_degenerate_raises():
    # All-zero data fits exactly, so every bootstrap draw is identical.
    states = np.zeros((6, 5, 1))
    actions = sl.panel.generate_actions(sl.DesignSpec("switchback"), 6, 5)
    outcomes = np.zeros((6, 5))
    ds = sl.PanelDataset(states, actions, outcomes)
    with pytest.raises(BootstrapDegenerate):
        ie_bootstrap_test(ds, sl.KernelSpec(h=0.1), n_bootstrap=20, seed=0)


def test_select_bandwidth_in_grid(small_panel):
    h = select_bandwidth(small_panel)
    n = small_panel.n
    grid = [0.05 * k * n ** (-1 / 3) for k in range(1, 21)]
    assert min(abs(h - g) for g in grid) < 1e-12


def test_estimator_api(small_panel):
    est = sl.TVCDP(bandwidth=0.1)
    params = est.get_params()
    assert "bandwidth" in params
    est.set_params(ridge=1e-4).set_params(ridge=1e-3)
    est.fit(small_panel)
    assert est.bandwidth_ == 0.1
    assert np.isfinite(est.direct_effect_)
    assert np.isfinite(est.indirect_effect_)
    rep = est.de_test()
    assert rep.effect == "DE"
    pred = est.predict(small_panel)
    assert pred.shape == small_panel.outcomes.shape
    # In-sample predictions correlate strongly with realized outcomes.
    corr = np.corrcoef(pred.ravel(), small_panel.outcomes.ravel())[0, 1]
    assert corr > 0.5


def test_estimator_auto_bandwidth(small_panel):
    est = sl.TVCDP().fit(small_panel)
    assert est.bandwidth_ > 0


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    m=st.integers(min_value=3, max_value=7),
    d=st.integers(min_value=1, max_value=3),
)
def test_effect_decomposition_property(seed, m, d):
    # DE + IE equals the brute-force noiseless rollout contrast for any
    # stable coefficient path.
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((m, d + 2))
    Theta = rng.standard_normal((m - 1, d, d + 2))
    Phi = Theta[:, :, 1 : d + 1]
    norms = np.abs(Phi).sum(axis=2).max(axis=1)
    scale = np.minimum(1.0, 0.9 / np.maximum(norms, 1e-12))
    Theta[:, :, 1 : d + 1] *= scale[:, None, None]
    path = sl.CoefficientPath(theta, Theta, smoothed=True)
    init = rng.standard_normal(d)
    lhs = direct_effect(path) + indirect_effect(path)
    assert lhs == pytest.approx(rollout_ate(path, init), abs=1e-10)
