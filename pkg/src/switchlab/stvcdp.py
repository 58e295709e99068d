"""Spatio-temporal varying-coefficient decision-process model.

Each (decision point, region) cell has its own outcome and state-transition
coefficients over the regressor ``Z = (1, S', A, Abar)'`` where ``Abar`` is
the neighbor-averaged action. Per-cell least-squares estimates are smoothed
first across decision points within each region, then across regions with a
product kernel over region coordinates.

Outcome residuals decompose into four parts: a component smooth in both
time and space (day-level shocks shared across the city), a within-region
temporal remainder, a within-time spatial remainder, and measurement noise.
These drive the error covariance that feeds the sandwich variance of the
direct-effect test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BootstrapDegenerate
from .kernels import KernelSpec, spatial_smoothing_matrix, temporal_smoothing_matrix
from .panel import SpatioPanelDataset
from .tvcdp import DEFAULT_RIDGE, TestReport, _batched_solve, _bootstrap_xi, _wald_report


@dataclass
class STCoefficientPath:
    """Coefficient surfaces: ``theta`` is (m, r, d+3) ordered (intercept,
    state, action, neighbor action); ``Theta`` is (m-1, r, d, d+3)."""

    theta: np.ndarray
    Theta: np.ndarray | None = None
    smoothed: bool = False

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def r(self) -> int:
        return self.theta.shape[1]

    @property
    def d(self) -> int:
        return self.theta.shape[2] - 3

    @property
    def beta(self) -> np.ndarray:
        return self.theta[:, :, 1 : self.d + 1]

    @property
    def gamma_own(self) -> np.ndarray:
        """Own-action outcome coefficient, (m, r)."""
        return self.theta[:, :, self.d + 1]

    @property
    def gamma_neighbor(self) -> np.ndarray:
        """Neighbor-action outcome coefficient, (m, r)."""
        return self.theta[:, :, self.d + 2]

    @property
    def Phi(self) -> np.ndarray:
        return self.Theta[:, :, :, 1 : self.d + 1]

    @property
    def Gamma_own(self) -> np.ndarray:
        return self.Theta[:, :, :, self.d + 1]

    @property
    def Gamma_neighbor(self) -> np.ndarray:
        return self.Theta[:, :, :, self.d + 2]


def _neighbor_collinear(dataset: SpatioPanelDataset, tol: float = 1e-10) -> bool:
    """True when, in every (decision point, region) cell, the neighbor
    average is an affine function of the own action across days.

    This happens under synchronized alternation designs; the interference
    coefficient is then unidentified and the column must be dropped.
    """
    A = dataset.actions
    NB = dataset.neighbor_actions
    a_c = A - A.mean(axis=0)
    nb_c = NB - NB.mean(axis=0)
    var_a = (a_c**2).mean(axis=0)
    var_nb = (nb_c**2).mean(axis=0)
    cov = (a_c * nb_c).mean(axis=0)
    explained = np.where(var_a > 0, cov**2 / np.where(var_a > 0, var_a, 1.0), 0.0)
    resid = var_nb - explained
    return bool(np.all(resid <= tol * np.maximum(var_nb, 1.0)))


def _st_regressors(dataset: SpatioPanelDataset) -> tuple[np.ndarray, bool]:
    """Regressor array and whether the neighbor column was dropped.

    With a single region there is no interference column, and under designs
    where the neighbor average is cell-wise collinear with the own action
    the interference coefficient is unidentified; both cases drop the
    column. The coefficient surfaces still report a (zero) neighbor
    coefficient for shape stability.
    """
    Z = dataset.regressors()
    if dataset.r == 1:
        warnings.warn(
            "single region: neighbor-averaged action dropped from the model",
            stacklevel=3,
        )
        return Z[..., :-1], True
    if _neighbor_collinear(dataset):
        warnings.warn(
            "neighbor-averaged action is collinear with the own action in "
            "every cell; dropping it from the model",
            stacklevel=3,
        )
        return Z[..., :-1], True
    return Z, False


def _pad_neighbor(arr: np.ndarray) -> np.ndarray:
    """Append a zero neighbor-coefficient column along the last axis."""
    pad = [(0, 0)] * (arr.ndim - 1) + [(0, 1)]
    return np.pad(arr, pad)


def fit_outcome_ols_st(dataset: SpatioPanelDataset, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-(decision point, region) outcome least squares; (m, r, d+3)."""
    Z, dropped = _st_regressors(dataset)
    G = np.einsum("imrp,imrq->mrpq", Z, Z)
    b = np.einsum("imrp,imr->mrp", Z, dataset.outcomes)
    theta = _batched_solve(G, b[..., None], ridge)[..., 0]
    return _pad_neighbor(theta) if dropped else theta


def fit_state_ols_st(dataset: SpatioPanelDataset, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-(decision point, region) state-transition least squares;
    (m-1, r, d, d+3)."""
    Z, dropped = _st_regressors(dataset)
    Zc = Z[:, :-1]
    S_next = dataset.states[:, 1:]
    G = np.einsum("imrp,imrq->mrpq", Zc, Zc)
    B = np.einsum("imrp,imrd->mrpd", Zc, S_next)
    Theta = _batched_solve(G, B, ridge).transpose(0, 1, 3, 2)
    return _pad_neighbor(Theta) if dropped else Theta


def _smoothing_matrices(
    spec: KernelSpec, m: int, coords: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    Wt = temporal_smoothing_matrix(spec, m)
    Ws = spatial_smoothing_matrix(spec, coords)
    return Wt, Ws


def smooth_st(arr: np.ndarray, Wt: np.ndarray, Ws: np.ndarray) -> np.ndarray:
    """Apply temporal then spatial smoothing over the first two axes
    (decision point, region)."""
    out = np.tensordot(Wt, arr, axes=(1, 0))
    out = np.moveaxis(np.tensordot(Ws, out, axes=(1, 1)), 0, 1)
    return out


def fit_paths_st(
    dataset: SpatioPanelDataset,
    spec: KernelSpec,
    ridge: float = DEFAULT_RIDGE,
    with_state: bool = True,
) -> tuple[STCoefficientPath, STCoefficientPath]:
    """Raw and doubly smoothed coefficient surfaces."""
    theta = fit_outcome_ols_st(dataset, ridge)
    Theta = fit_state_ols_st(dataset, ridge) if with_state else None
    Wt, Ws = _smoothing_matrices(spec, dataset.m, dataset.coords)
    theta_s = smooth_st(theta, Wt, Ws)
    Theta_s = None
    if Theta is not None:
        Wt_state = temporal_smoothing_matrix(spec, dataset.m - 1)
        Theta_s = smooth_st(Theta, Wt_state, Ws)
    return (
        STCoefficientPath(theta, Theta, smoothed=False),
        STCoefficientPath(theta_s, Theta_s, smoothed=True),
    )


def direct_effect_st(path: STCoefficientPath) -> float:
    """Total direct effect: own plus neighbor action coefficients summed
    over all decision points and regions."""
    return float((path.gamma_own + path.gamma_neighbor).sum())


def indirect_effect_st(path: STCoefficientPath) -> float:
    """Plug-in indirect effect summed over regions; state propagation stays
    within each region."""
    if path.Theta is None:
        raise ValueError("indirect effect needs the state transition surfaces")
    beta = path.beta
    Phi = path.Phi
    Gam = path.Gamma_own + path.Gamma_neighbor
    r, d = path.r, path.d
    v = np.zeros((r, d))
    total = 0.0
    for tau in range(2, path.m + 1):
        v = np.einsum("rde,re->rd", Phi[tau - 2], v) + Gam[tau - 2]
        total += float(np.einsum("rd,rd->", beta[tau - 1], v))
    return total


def decompose_residuals_st(
    dataset: SpatioPanelDataset, path: STCoefficientPath, spec: KernelSpec
) -> tuple[np.ndarray, ...]:
    """Residual decomposition (raw, eta_ts, eta_region, eta_time, eps).

    ``eta_ts`` is the doubly smoothed component, ``eta_region`` the spatial
    smooth at fixed time minus it, ``eta_time`` the temporal smooth within
    region minus it; ``eps`` is the remainder so the four parts add back to
    the raw residual exactly.
    """
    Z = dataset.regressors()
    resid = dataset.outcomes - np.einsum("imrp,mrp->imr", Z, path.theta)
    Wt, Ws = _smoothing_matrices(spec, dataset.m, dataset.coords)
    eta_ts = np.einsum("tk,sl,ikl->its", Wt, Ws, resid)
    eta_region = np.einsum("sl,itl->its", Ws, resid) - eta_ts
    eta_time = np.einsum("tk,iks->its", Wt, resid) - eta_ts
    eps = resid - eta_ts - eta_region - eta_time
    return resid, eta_ts, eta_region, eta_time, eps


def outcome_covariance_st(
    eta_ts: np.ndarray, eta_region: np.ndarray, eta_time: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """Outcome error covariance over (region-major) stacked cells.

    The doubly smooth part contributes everywhere; the within-region part
    only between cells of the same region; the within-time part only
    between cells at the same decision point; measurement noise only on the
    diagonal. All second moments use the n-1 divisor.
    """
    n, m, r = eta_ts.shape
    denom = n - 1
    flat = eta_ts.transpose(0, 2, 1).reshape(n, r * m)
    sigma = flat.T @ flat / denom
    cov_region = np.einsum("ita,iua->tua", eta_region, eta_region) / denom
    for region in range(r):
        block = slice(region * m, (region + 1) * m)
        sigma[block, block] += cov_region[:, :, region]
    cov_time = np.einsum("ita,itb->tab", eta_time, eta_time) / denom
    region_idx = np.arange(r)
    for tau in range(m):
        cells = region_idx * m + tau
        sigma[np.ix_(cells, cells)] += cov_time[tau]
    var_eps = (eps**2).sum(axis=0) / denom
    sigma[np.diag_indices_from(sigma)] += var_eps.T.ravel()
    return sigma


def sandwich_covariance_st(
    dataset: SpatioPanelDataset, sigma_y: np.ndarray, ridge: float = DEFAULT_RIDGE
) -> np.ndarray:
    """Sandwich covariance of the stacked per-cell outcome coefficients,
    blocks ordered region-major then by decision point."""
    Z, dropped = _st_regressors(dataset)
    n, m, r = dataset.n, dataset.m, dataset.r
    p = Z.shape[-1]
    Zf = Z.transpose(0, 2, 1, 3).reshape(n, r * m, p)
    G = np.einsum("iap,iaq->apq", Zf, Zf) + ridge * np.eye(p)
    Ginv = np.linalg.inv(G)
    cross = np.einsum("iap,ibq->abpq", Zf, Zf)
    mid = sigma_y[:, :, None, None] * cross
    V = np.einsum("apq,abqr,bsr->abps", Ginv, mid, Ginv)
    V = V.transpose(0, 2, 1, 3).reshape(r * m * p, r * m * p)
    if dropped:
        full = r * m * (p + 1)
        out = np.zeros((full, full))
        keep = np.arange(full).reshape(r * m, p + 1)[:, :p].ravel()
        out[np.ix_(keep, keep)] = V
        return out
    return V


def smoothed_covariance_st(
    V: np.ndarray, Wt: np.ndarray, Ws: np.ndarray, p: int
) -> np.ndarray:
    """Covariance of the doubly smoothed coefficients: applies the
    (space x time x identity) smoothing map on both sides without forming
    the Kronecker product."""
    r, m = Ws.shape[0], Wt.shape[0]
    V6 = V.reshape(r, m, p, r, m, p)
    V6 = np.tensordot(Ws, V6, axes=(1, 0))
    V6 = np.moveaxis(np.tensordot(Wt, V6, axes=(1, 1)), 0, 1)
    V6 = np.moveaxis(np.tensordot(Ws, V6, axes=(1, 3)), 0, 3)
    V6 = np.moveaxis(np.tensordot(Wt, V6, axes=(1, 4)), 0, 4)
    return V6.reshape(r * m * p, r * m * p)


def de_st_wald_test(
    dataset: SpatioPanelDataset,
    spec: KernelSpec,
    alpha: float = 0.05,
    sides: str = "one_sided",
    ridge: float = DEFAULT_RIDGE,
    smoothed: bool = True,
) -> TestReport:
    """Normal-approximation test of zero total direct effect."""
    raw, smooth = fit_paths_st(dataset, spec, ridge, with_state=False)
    _, eta_ts, eta_region, eta_time, eps = decompose_residuals_st(dataset, smooth, spec)
    sigma_y = outcome_covariance_st(eta_ts, eta_region, eta_time, eps)
    V = sandwich_covariance_st(dataset, sigma_y, ridge)
    m, r, d = dataset.m, dataset.r, dataset.d
    p = d + 3
    if smoothed:
        Wt, Ws = _smoothing_matrices(spec, m, dataset.coords)
        V = smoothed_covariance_st(V, Wt, Ws, p)
    g = np.zeros(r * m * p)
    g[p - 2 :: p] = 1.0
    g[p - 1 :: p] = 1.0
    se = float(np.sqrt(max(g @ V @ g, 0.0)))
    path = smooth if smoothed else raw
    return _wald_report("DE", direct_effect_st(path), se, alpha, sides)


def _refit_ie_batch_st(
    S_b: np.ndarray,
    Y_b: np.ndarray,
    actions: np.ndarray,
    neighbor_actions: np.ndarray,
    Wt: np.ndarray,
    Wt_state: np.ndarray,
    Ws: np.ndarray,
    ridge: float,
    use_neighbor: bool = True,
) -> np.ndarray:
    """Indirect-effect estimates for a batch of pseudo spatio panels."""
    Bn, n, m, r, d = S_b.shape
    p = d + 3 if use_neighbor else d + 2
    Z = np.empty((Bn, n, m, r, p))
    Z[..., 0] = 1.0
    Z[..., 1 : d + 1] = S_b
    Z[..., d + 1] = actions
    if use_neighbor:
        Z[..., d + 2] = neighbor_actions
    G = np.einsum("bimrp,bimrq->bmrpq", Z, Z) + ridge * np.eye(p)
    rhs_y = np.einsum("bimrp,bimr->bmrp", Z, Y_b)
    theta = np.linalg.solve(G, rhs_y[..., None])[..., 0]
    Zc = Z[:, :, :-1]
    Gs = np.einsum("bimrp,bimrq->bmrpq", Zc, Zc) + ridge * np.eye(p)
    rhs_s = np.einsum("bimrp,bimrd->bmrpd", Zc, S_b[:, :, 1:])
    Theta = np.linalg.solve(Gs, rhs_s).transpose(0, 1, 2, 4, 3)
    theta_s = np.einsum("tk,sl,bklp->btsp", Wt, Ws, theta)
    Theta_s = np.einsum("tk,sl,bkldp->btsdp", Wt_state, Ws, Theta)
    beta = theta_s[..., 1 : d + 1]
    Phi = Theta_s[..., 1 : d + 1]
    Gam = Theta_s[..., d + 1]
    if use_neighbor:
        Gam = Gam + Theta_s[..., d + 2]
    v = np.zeros((Bn, r, d))
    ie = np.zeros(Bn)
    for tau in range(2, m + 1):
        v = np.einsum("brde,bre->brd", Phi[:, tau - 2], v) + Gam[:, tau - 2]
        ie += np.einsum("brd,brd->b", beta[:, tau - 1], v)
    return ie


def ie_st_bootstrap_test(
    dataset: SpatioPanelDataset,
    spec: KernelSpec,
    n_bootstrap: int = 400,
    alpha: float = 0.05,
    sides: str = "one_sided",
    seed: int = 0,
    ridge: float = DEFAULT_RIDGE,
    chunk: int = 50,
) -> TestReport:
    """Wild-bootstrap test of zero indirect effect for spatio panels.

    One standard-normal multiplier per day scales both residual streams in
    every region; pseudo panels are processed in chunks to bound memory.
    """
    _, smooth = fit_paths_st(dataset, spec, ridge)
    ie_hat = indirect_effect_st(smooth)
    Z = dataset.regressors()
    e_out = dataset.outcomes - np.einsum("imrp,mrp->imr", Z, smooth.theta)
    E_state = dataset.states[:, 1:] - np.einsum(
        "imrp,mrdp->imrd", Z[:, :-1], smooth.Theta
    )
    n, m, r, d = dataset.n, dataset.m, dataset.r, dataset.d
    Wt = temporal_smoothing_matrix(spec, m)
    Wt_state = temporal_smoothing_matrix(spec, m - 1)
    Ws = spatial_smoothing_matrix(spec, dataset.coords)
    use_neighbor = dataset.r > 1 and not _neighbor_collinear(dataset)
    B = n_bootstrap
    ie_b = np.empty(B)
    for start in range(0, B, chunk):
        idx = range(start, min(start + chunk, B))
        xi = np.stack([_bootstrap_xi(seed, b, n) for b in idx])
        Bc = len(xi)
        S_b = np.empty((Bc, n, m, r, d))
        Y_b = np.empty((Bc, n, m, r))
        S_b[:, :, 0] = dataset.states[:, 0]
        for tau in range(m):
            Zb = np.empty((Bc, n, r, d + 3))
            Zb[..., 0] = 1.0
            Zb[..., 1 : d + 1] = S_b[:, :, tau]
            Zb[..., d + 1] = dataset.actions[:, tau]
            Zb[..., d + 2] = dataset.neighbor_actions[:, tau]
            Y_b[:, :, tau] = (
                np.einsum("bnrp,rp->bnr", Zb, smooth.theta[tau])
                + xi[..., None] * e_out[:, tau]
            )
            if tau < m - 1:
                S_b[:, :, tau + 1] = (
                    np.einsum("bnrp,rdp->bnrd", Zb, smooth.Theta[tau])
                    + xi[..., None, None] * E_state[:, tau]
                )
        ie_b[start : start + Bc] = _refit_ie_batch_st(
            S_b,
            Y_b,
            dataset.actions,
            dataset.neighbor_actions,
            Wt,
            Wt_state,
            Ws,
            ridge,
            use_neighbor,
        )
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


def select_bandwidth_st(
    dataset: SpatioPanelDataset,
    family: str = "epanechnikov",
    constants: np.ndarray | None = None,
    ridge: float = DEFAULT_RIDGE,
    h_temporal: float | None = None,
) -> float:
    """Spatial bandwidth by region-level cross-validation.

    Candidates are ``C * r**(-1/3)``; each fold holds out one region and
    scores the outcome predictions made from the other regions' spatially
    smoothed coefficients (temporal smoothing held fixed).
    """
    if constants is None:
        constants = 0.25 * np.arange(1, 9)
    r, m = dataset.r, dataset.m
    if h_temporal is None:
        h_temporal = float(0.5 * dataset.n ** (-1.0 / 3.0))
    theta = fit_outcome_ols_st(dataset, ridge)
    Wt = temporal_smoothing_matrix(KernelSpec(family=family, h=h_temporal), m)
    theta_t = np.tensordot(Wt, theta, axes=(1, 0))
    Z = dataset.regressors()
    best_h, best_sse = None, np.inf
    for C in constants:
        h_st = float(C * r ** (-1.0 / 3.0))
        spec = KernelSpec(family=family, h=h_temporal, h_spatial=h_st)
        sse = 0.0
        try:
            Ws = spatial_smoothing_matrix(spec, dataset.coords)
        except Exception:
            continue
        for hold in range(r):
            w = Ws[hold].copy()
            w[hold] = 0.0
            if w.sum() <= 0:
                sse = np.inf
                break
            w = w / w.sum()
            pred_coef = np.tensordot(theta_t, w, axes=(1, 0))
            pred = np.einsum("imp,mp->im", Z[:, :, hold], pred_coef)
            sse += float(((dataset.outcomes[:, :, hold] - pred) ** 2).sum())
        if sse < best_sse:
            best_sse, best_h = sse, h_st
    return best_h


from sklearn.base import BaseEstimator  # noqa: E402


class STVCDP(BaseEstimator):
    """Estimator wrapper around the spatio-temporal pipeline."""

    def __init__(
        self,
        kernel: str = "epanechnikov",
        bandwidth: float | None = None,
        spatial_bandwidth: float | None = None,
        ridge: float = DEFAULT_RIDGE,
    ):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.spatial_bandwidth = spatial_bandwidth
        self.ridge = ridge

    def _spec(self) -> KernelSpec:
        return KernelSpec(
            family=self.kernel, h=self.bandwidth_, h_spatial=self.spatial_bandwidth_
        )

    def fit(self, dataset: SpatioPanelDataset) -> "STVCDP":
        self.bandwidth_ = (
            self.bandwidth
            if self.bandwidth is not None
            else float(0.5 * dataset.n ** (-1.0 / 3.0))
        )
        self.spatial_bandwidth_ = (
            self.spatial_bandwidth
            if self.spatial_bandwidth is not None
            else select_bandwidth_st(
                dataset, self.kernel, ridge=self.ridge, h_temporal=self.bandwidth_
            )
        )
        self.dataset_ = dataset
        spec = self._spec()
        self.raw_path_, self.path_ = fit_paths_st(dataset, spec, self.ridge)
        self.direct_effect_ = direct_effect_st(self.path_)
        self.indirect_effect_ = indirect_effect_st(self.path_)
        return self

    def predict(self, dataset: SpatioPanelDataset) -> np.ndarray:
        return np.einsum("imrp,mrp->imr", dataset.regressors(), self.path_.theta)

    def de_test(self, alpha: float = 0.05, sides: str = "one_sided", smoothed: bool = True) -> TestReport:
        return de_st_wald_test(
            self.dataset_, self._spec(), alpha, sides, self.ridge, smoothed
        )

    def ie_test(
        self,
        n_bootstrap: int = 400,
        alpha: float = 0.05,
        sides: str = "one_sided",
        seed: int = 0,
    ) -> TestReport:
        return ie_st_bootstrap_test(
            self.dataset_, self._spec(), n_bootstrap, alpha, sides, seed, self.ridge
        )
