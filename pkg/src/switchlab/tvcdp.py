"""Temporal varying-coefficient decision-process model.

The outcome at decision point tau is ``Y = Z' theta(tau) + e`` and the next
state is ``S' = Theta(tau) Z + eps_S``, with regressor
``Z = (1, S', A)'``. Coefficients are estimated by per-point ridge-stabilized
least squares and smoothed across decision points with kernel weights.

The direct effect is the sum of the action coefficient over the day; the
indirect effect propagates the action's state impact through the estimated
state transition and outcome state coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from .errors import BootstrapDegenerate, DegenerateDesign
from .kernels import KernelSpec, temporal_smoothing_matrix
from .panel import PanelDataset

DEFAULT_RIDGE = 1e-3


@dataclass
class CoefficientPath:
    """Coefficient trajectories for one model fit.

    ``theta`` is (m, d+2) ordered (intercept, state, action); ``Theta`` is
    (m-1, d, d+2) for the state transition, or None when not fitted.
    """

    theta: np.ndarray
    Theta: np.ndarray | None = None
    smoothed: bool = False

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1] - 2

    @property
    def intercept(self) -> np.ndarray:
        return self.theta[:, 0]

    @property
    def beta(self) -> np.ndarray:
        """State coefficients of the outcome model, (m, d)."""
        return self.theta[:, 1 : self.d + 1]

    @property
    def gamma(self) -> np.ndarray:
        """Action coefficient of the outcome model, (m,)."""
        return self.theta[:, self.d + 1]

    @property
    def phi0(self) -> np.ndarray:
        return self.Theta[:, :, 0]

    @property
    def Phi(self) -> np.ndarray:
        """State-to-state transition matrices, (m-1, d, d)."""
        return self.Theta[:, :, 1 : self.d + 1]

    @property
    def Gamma(self) -> np.ndarray:
        """Action-to-state coefficients, (m-1, d)."""
        return self.Theta[:, :, self.d + 1]


@dataclass
class CovarianceBundle:
    """Residual decomposition and variance estimates from one fit.

    ``eta``/``eps`` are (n, m) day-effect and measurement residuals,
    ``sigma_y`` is the (m, m) outcome error covariance, ``V_theta`` the
    sandwich covariance of the stacked per-point coefficients and
    ``V_smoothed`` the covariance of the smoothed coefficients.
    """

    eta: np.ndarray
    eps: np.ndarray
    sigma_y: np.ndarray
    V_theta: np.ndarray
    V_smoothed: np.ndarray


@dataclass
class TestReport:
    """Outcome of a hypothesis test. ``reject`` always equals
    ``p_value <= alpha``."""

    effect: str
    estimate: float
    statistic: float
    p_value: float
    alpha: float
    reject: bool
    sides: str = "one_sided"
    se: float | None = None
    n_bootstrap: int | None = None
    bootstrap_draws: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "effect": self.effect,
            "estimate": self.estimate,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": bool(self.reject),
            "sides": self.sides,
            "se": self.se,
            "n_bootstrap": self.n_bootstrap,
        }


def _batched_solve(G: np.ndarray, b: np.ndarray, ridge: float, region: int | None = None) -> np.ndarray:
    """Solve ``(G + ridge I) x = b`` across the leading batch axes, raising
    DegenerateDesign naming the offending decision point when singular."""
    p = G.shape[-1]
    Greg = G + ridge * np.eye(p)
    try:
        return np.linalg.solve(Greg, b)
    except np.linalg.LinAlgError:
        flat = Greg.reshape(-1, p, p)
        for tau in range(flat.shape[0]):
            if np.linalg.matrix_rank(flat[tau]) < p:
                raise DegenerateDesign(tau + 1, region) from None
        raise


def fit_outcome_ols(dataset: PanelDataset, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-decision-point least squares for the outcome model; (m, d+2)."""
    Z = dataset.regressors()
    G = np.einsum("imp,imq->mpq", Z, Z)
    b = np.einsum("imp,im->mp", Z, dataset.outcomes)
    return _batched_solve(G, b[..., None], ridge)[..., 0]


def fit_state_ols(dataset: PanelDataset, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-decision-point least squares for the state transition; (m-1, d, d+2)."""
    Z = dataset.regressors()[:, :-1]
    S_next = dataset.states[:, 1:]
    G = np.einsum("imp,imq->mpq", Z, Z)
    B = np.einsum("imp,imd->mpd", Z, S_next)
    return _batched_solve(G, B, ridge).transpose(0, 2, 1)


def fit_paths(
    dataset: PanelDataset,
    spec: KernelSpec,
    ridge: float = DEFAULT_RIDGE,
    with_state: bool = True,
) -> tuple[CoefficientPath, CoefficientPath]:
    """Raw and kernel-smoothed coefficient paths for outcome (and state)."""
    theta = fit_outcome_ols(dataset, ridge)
    Theta = fit_state_ols(dataset, ridge) if with_state else None
    W = temporal_smoothing_matrix(spec, dataset.m)
    theta_s = W @ theta
    Theta_s = None
    if Theta is not None:
        Ws = temporal_smoothing_matrix(spec, dataset.m - 1)
        Theta_s = np.einsum("tk,kdp->tdp", Ws, Theta)
    raw = CoefficientPath(theta, Theta, smoothed=False)
    smooth = CoefficientPath(theta_s, Theta_s, smoothed=True)
    return raw, smooth


def direct_effect(path: CoefficientPath) -> float:
    """Sum of the action coefficient over the day."""
    return float(path.gamma.sum())


def indirect_effect(path: CoefficientPath) -> float:
    """Plug-in indirect effect from outcome state coefficients and the state
    transition path: accumulated action-induced state shifts weighted by the
    outcome's state coefficients."""
    if path.Theta is None:
        raise ValueError("indirect effect needs the state transition path")
    beta, Phi, Gamma = path.beta, path.Phi, path.Gamma
    d = path.d
    v = np.zeros(d)
    total = 0.0
    for tau in range(2, path.m + 1):
        v = Phi[tau - 2] @ v + Gamma[tau - 2]
        total += float(beta[tau - 1] @ v)
    return total


def rollout_ate(path: CoefficientPath, s1: np.ndarray | None = None) -> float:
    """Noiseless all-treated minus all-control day total from a coefficient
    path: the brute-force counterpart of direct + indirect effect."""
    d = path.d
    s1 = np.zeros(d) if s1 is None else np.asarray(s1, dtype=float)
    totals = []
    for a in (1.0, 0.0):
        s = s1.copy()
        total = 0.0
        for tau in range(path.m):
            z = np.concatenate(([1.0], s, [a]))
            total += float(path.theta[tau] @ z)
            if tau < path.m - 1:
                s = path.Theta[tau] @ z
        totals.append(total)
    return totals[0] - totals[1]


def decompose_residuals(
    dataset: PanelDataset, path: CoefficientPath, spec: KernelSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split outcome residuals into a smooth day effect and measurement
    noise: returns (raw residuals, eta, eps), each (n, m)."""
    Z = dataset.regressors()
    resid = dataset.outcomes - np.einsum("imp,mp->im", Z, path.theta)
    W = temporal_smoothing_matrix(spec, dataset.m)
    eta = resid @ W.T
    return resid, eta, resid - eta


def outcome_covariance(eta: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Outcome error covariance over decision points: day-effect sample
    second moment plus a diagonal measurement variance, both divided by n."""
    n = eta.shape[0]
    return eta.T @ eta / n + np.diag((eps**2).mean(axis=0))


def sandwich_covariance(
    dataset: PanelDataset, sigma_y: np.ndarray, ridge: float = DEFAULT_RIDGE
) -> np.ndarray:
    """Sandwich covariance of the stacked per-point outcome coefficients,
    (m(d+2), m(d+2))."""
    Z = dataset.regressors()
    m, p = dataset.m, dataset.d + 2
    G = np.einsum("imp,imq->mpq", Z, Z) + ridge * np.eye(p)
    Ginv = np.linalg.inv(G)
    cross = np.einsum("imp,inq->mnpq", Z, Z)
    mid = sigma_y[:, :, None, None] * cross
    V = np.einsum("mpq,mnqr,nsr->mnps", Ginv, mid, Ginv)
    return V.transpose(0, 2, 1, 3).reshape(m * p, m * p)


def smoothed_covariance(V_theta: np.ndarray, W: np.ndarray, p: int) -> np.ndarray:
    """Covariance of the smoothed stacked coefficients: the smoothing map is
    block-scalar, weight w[t, k] times the identity on each (d+2) block."""
    omega = np.kron(W, np.eye(p))
    return omega @ V_theta @ omega.T


def covariance_bundle(
    dataset: PanelDataset,
    path: CoefficientPath,
    spec: KernelSpec,
    ridge: float = DEFAULT_RIDGE,
) -> CovarianceBundle:
    """Full residual/variance pipeline from a smoothed coefficient path."""
    _, eta, eps = decompose_residuals(dataset, path, spec)
    sigma_y = outcome_covariance(eta, eps)
    V = sandwich_covariance(dataset, sigma_y, ridge)
    W = temporal_smoothing_matrix(spec, dataset.m)
    V_s = smoothed_covariance(V, W, dataset.d + 2)
    return CovarianceBundle(eta, eps, sigma_y, V, V_s)


def _gamma_selector(m: int, p: int) -> np.ndarray:
    g = np.zeros(m * p)
    g[p - 1 :: p] = 1.0
    return g


DEGENERATE_SE = 1e-12


def _wald_report(effect: str, estimate: float, se: float, alpha: float, sides: str) -> TestReport:
    if se < DEGENERATE_SE:
        stat, p = 0.0, 1.0
    else:
        stat = estimate / se
        p = float(1.0 - stats.norm.cdf(stat))
        if sides == "two_sided":
            p = min(1.0, 2.0 * p)
    return TestReport(
        effect=effect,
        estimate=float(estimate),
        statistic=float(stat),
        p_value=float(p),
        alpha=alpha,
        reject=bool(p <= alpha),
        sides=sides,
        se=float(se),
    )


def de_wald_test(
    dataset: PanelDataset,
    spec: KernelSpec,
    alpha: float = 0.05,
    sides: str = "one_sided",
    ridge: float = DEFAULT_RIDGE,
    smoothed: bool = True,
) -> TestReport:
    """Normal-approximation test of zero direct effect.

    The standard error comes from the sandwich covariance; smoothing (the
    default) uses the smoothed coefficient path and its covariance.
    """
    raw, smooth = fit_paths(dataset, spec, ridge, with_state=False)
    bundle = covariance_bundle(dataset, smooth, spec, ridge)
    path = smooth if smoothed else raw
    V = bundle.V_smoothed if smoothed else bundle.V_theta
    g = _gamma_selector(dataset.m, dataset.d + 2)
    se = float(np.sqrt(max(g @ V @ g, 0.0)))
    return _wald_report("DE", direct_effect(path), se, alpha, sides)


def _bootstrap_xi(seed: int, b: int, n: int) -> np.ndarray:
    """One standard-normal multiplier per day for bootstrap draw ``b``,
    derived from (seed, b) only so results do not depend on scheduling."""
    return np.random.default_rng((seed, 104729, b)).standard_normal(n)


def _refit_ie_batch(
    S_b: np.ndarray,
    Y_b: np.ndarray,
    actions: np.ndarray,
    W: np.ndarray,
    W_state: np.ndarray,
    ridge: float,
) -> np.ndarray:
    """Indirect-effect estimates for a batch of pseudo panels.

    ``S_b`` is (B, n, m, d), ``Y_b`` (B, n, m); actions are shared across
    the batch. Returns (B,) smoothed plug-in indirect effects.
    """
    Bn, n, m, d = S_b.shape
    p = d + 2
    Z = np.empty((Bn, n, m, p))
    Z[..., 0] = 1.0
    Z[..., 1 : d + 1] = S_b
    Z[..., d + 1] = actions
    G = np.einsum("bimp,bimq->bmpq", Z, Z) + ridge * np.eye(p)
    rhs_y = np.einsum("bimp,bim->bmp", Z, Y_b)
    theta = np.linalg.solve(G, rhs_y[..., None])[..., 0]
    Zc = Z[:, :, :-1]
    Gs = np.einsum("bimp,bimq->bmpq", Zc, Zc) + ridge * np.eye(p)
    rhs_s = np.einsum("bimp,bimd->bmpd", Zc, S_b[:, :, 1:])
    Theta = np.linalg.solve(Gs, rhs_s).transpose(0, 1, 3, 2)
    theta_s = np.einsum("tk,bkp->btp", W, theta)
    Theta_s = np.einsum("tk,bkdp->btdp", W_state, Theta)
    beta = theta_s[:, :, 1 : d + 1]
    Phi = Theta_s[:, :, :, 1 : d + 1]
    Gamma = Theta_s[:, :, :, d + 1]
    v = np.zeros((Bn, d))
    ie = np.zeros(Bn)
    for tau in range(2, m + 1):
        v = np.einsum("bde,be->bd", Phi[:, tau - 2], v) + Gamma[:, tau - 2]
        ie += np.einsum("bd,bd->b", beta[:, tau - 1], v)
    return ie


def ie_bootstrap_test(
    dataset: PanelDataset,
    spec: KernelSpec,
    n_bootstrap: int = 400,
    alpha: float = 0.05,
    sides: str = "one_sided",
    seed: int = 0,
    ridge: float = DEFAULT_RIDGE,
) -> TestReport:
    """Wild-bootstrap test of zero indirect effect.

    Pseudo panels regenerate states and outcomes from the smoothed fit with
    both residual streams scaled by a single standard-normal multiplier per
    day, then the full estimation pipeline is rerun on each pseudo panel.
    The p-value compares the point estimate against centered bootstrap draws.
    """
    _, smooth = fit_paths(dataset, spec, ridge)
    ie_hat = indirect_effect(smooth)
    Z = dataset.regressors()
    e_out = dataset.outcomes - np.einsum("imp,mp->im", Z, smooth.theta)
    E_state = dataset.states[:, 1:] - np.einsum(
        "imp,mdp->imd", Z[:, :-1], smooth.Theta
    )
    n, m, d = dataset.n, dataset.m, dataset.d
    B = n_bootstrap
    xi = np.stack([_bootstrap_xi(seed, b, n) for b in range(B)])
    S_b = np.empty((B, n, m, d))
    Y_b = np.empty((B, n, m))
    S_b[:, :, 0] = dataset.states[:, 0]
    for tau in range(m):
        Zb = np.empty((B, n, d + 2))
        Zb[..., 0] = 1.0
        Zb[..., 1 : d + 1] = S_b[:, :, tau]
        Zb[..., d + 1] = dataset.actions[:, tau]
        Y_b[:, :, tau] = Zb @ smooth.theta[tau] + xi * e_out[:, tau]
        if tau < m - 1:
            S_b[:, :, tau + 1] = (
                np.einsum("bnp,dp->bnd", Zb, smooth.Theta[tau])
                + xi[..., None] * E_state[:, tau]
            )
    W = temporal_smoothing_matrix(spec, m)
    W_state = temporal_smoothing_matrix(spec, m - 1)
    ie_b = _refit_ie_batch(S_b, Y_b, dataset.actions, W, W_state, ridge)
    draws = ie_b - ie_hat
    if np.ptp(draws) == 0.0:
        raise BootstrapDegenerate("all bootstrap draws identical")
    p = (1.0 + np.sum(draws >= ie_hat)) / (B + 1.0)
    if sides == "two_sided":
        p_lower = (1.0 + np.sum(draws <= ie_hat)) / (B + 1.0)
        p = min(1.0, 2.0 * min(p, p_lower))
    return TestReport(
        effect="IE",
        estimate=float(ie_hat),
        statistic=float(ie_hat),
        p_value=float(p),
        alpha=alpha,
        reject=bool(p <= alpha),
        sides=sides,
        n_bootstrap=B,
        bootstrap_draws=draws,
    )


def select_bandwidth(
    dataset: PanelDataset,
    family: str = "epanechnikov",
    constants: np.ndarray | None = None,
    n_folds: int = 5,
    ridge: float = DEFAULT_RIDGE,
) -> float:
    """Bandwidth by day-level cross-validation.

    Candidates are ``C * n**(-1/3)`` over a grid of constants; folds split
    days in contiguous order, and the score is the held-out sum of squared
    outcome prediction errors under the smoothed fit.
    """
    if constants is None:
        constants = 0.05 * np.arange(1, 21)
    n = dataset.n
    folds = np.array_split(np.arange(n), min(n_folds, n))
    best_h, best_sse = None, np.inf
    for C in constants:
        h = float(C * n ** (-1.0 / 3.0))
        spec = KernelSpec(family=family, h=h)
        sse = 0.0
        for test_idx in folds:
            train_idx = np.setdiff1d(np.arange(n), test_idx)
            if len(train_idx) == 0:
                continue
            train = PanelDataset(
                dataset.states[train_idx],
                dataset.actions[train_idx],
                dataset.outcomes[train_idx],
            )
            _, smooth = fit_paths(train, spec, ridge, with_state=False)
            Z_test = dataset.regressors()[test_idx]
            pred = np.einsum("imp,mp->im", Z_test, smooth.theta)
            sse += float(((dataset.outcomes[test_idx] - pred) ** 2).sum())
        if sse < best_sse:
            best_sse, best_h = sse, h
    return best_h


class TVCDP(BaseEstimator):
    """Estimator wrapper around the temporal model pipeline.

    Parameters mirror the functional API; after ``fit`` the raw and
    smoothed paths, covariance bundle, and point effects are available as
    trailing-underscore attributes.
    """

    def __init__(
        self,
        kernel: str = "epanechnikov",
        bandwidth: float | None = None,
        ridge: float = DEFAULT_RIDGE,
    ):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.ridge = ridge

    def _spec(self) -> KernelSpec:
        return KernelSpec(family=self.kernel, h=self.bandwidth_)

    def fit(self, dataset: PanelDataset) -> "TVCDP":
        self.bandwidth_ = (
            self.bandwidth
            if self.bandwidth is not None
            else select_bandwidth(dataset, self.kernel, ridge=self.ridge)
        )
        self.dataset_ = dataset
        spec = self._spec()
        self.raw_path_, self.path_ = fit_paths(dataset, spec, self.ridge)
        self.covariance_ = covariance_bundle(dataset, self.path_, spec, self.ridge)
        self.direct_effect_ = direct_effect(self.path_)
        self.indirect_effect_ = indirect_effect(self.path_)
        return self

    def predict(self, dataset: PanelDataset) -> np.ndarray:
        """Fitted outcome means under the smoothed coefficient path."""
        return np.einsum("imp,mp->im", dataset.regressors(), self.path_.theta)

    def de_test(self, alpha: float = 0.05, sides: str = "one_sided", smoothed: bool = True) -> TestReport:
        return de_wald_test(
            self.dataset_, self._spec(), alpha, sides, self.ridge, smoothed
        )

    def ie_test(
        self,
        n_bootstrap: int = 400,
        alpha: float = 0.05,
        sides: str = "one_sided",
        seed: int = 0,
    ) -> TestReport:
        return ie_bootstrap_test(
            self.dataset_, self._spec(), n_bootstrap, alpha, sides, seed, self.ridge
        )
