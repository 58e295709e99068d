"""Neural-network decision-process surfaces and Monte Carlo effects.

Instead of linear varying coefficients, each arm gets its own outcome
surface ``g_a(t, s)`` and state-transition surface ``G_a(t, s)`` fit by a
small feedforward network on that arm's observations, with normalized time
``t = tau / m`` as an input feature. Effects come from coupled Monte Carlo
rollouts: the all-treated and all-control state paths share the same
resampled transition-noise draws, the direct effect averages the arm gap in
the outcome surface along control paths, and the indirect effect averages
the outcome gap caused by the diverging state paths.

Training is intentionally plain: full manual backpropagation and fixed-step
mini-batch gradient descent, so runs are deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EmptyArm
from .panel import PanelDataset


class MLP:
    """Tanh feedforward network trained by mini-batch gradient descent.

    Inputs and targets are standardized internally; predictions are
    returned on the original scale.
    """

    def __init__(self, n_in: int, n_out: int, hidden: tuple[int, ...] = (32, 32), seed: int = 0):
        rng = np.random.default_rng(seed)
        sizes = (n_in, *hidden, n_out)
        self.weights = []
        self.biases = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            # Symmetric uniform init scaled by fan-in + fan-out.
            bound = np.sqrt(6.0 / (a + b))
            self.weights.append(rng.uniform(-bound, bound, size=(a, b)))
            self.biases.append(np.zeros(b))
        self.x_mean = np.zeros(n_in)
        self.x_scale = np.ones(n_in)
        self.y_mean = np.zeros(n_out)
        self.y_scale = np.ones(n_out)

    def _forward(self, X: np.ndarray) -> list[np.ndarray]:
        """Activations per layer for standardized input; the last entry is
        the (linear) output."""
        acts = [X]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            acts.append(z if k == last else np.tanh(z))
        return acts

    def loss_and_grad(
        self, X: np.ndarray, Y: np.ndarray
    ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Half mean squared error and its gradients on standardized data."""
        nb = X.shape[0]
        acts = self._forward(X)
        err = acts[-1] - Y
        loss = 0.5 * float((err**2).sum()) / nb
        delta = err / nb
        gW: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        gb: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        return loss, gW, gb

    def fit(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        lr: float = 0.05,
        epochs: int = 500,
        batch_size: int = 256,
        seed: int = 0,
    ) -> "MLP":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.x_mean = X.mean(axis=0)
        self.x_scale = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        self.y_mean = Y.mean(axis=0)
        self.y_scale = np.where(Y.std(axis=0) > 0, Y.std(axis=0), 1.0)
        Xs = (X - self.x_mean) / self.x_scale
        Ys = (Y - self.y_mean) / self.y_scale
        rng = np.random.default_rng(seed)
        N = Xs.shape[0]
        for epoch in range(epochs):
            # Cosine learning-rate decay settles the iterates instead of
            # leaving them bouncing around the minimum at a fixed step size.
            step = lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))
            order = rng.permutation(N)
            for start in range(0, N, batch_size):
                idx = order[start : start + batch_size]
                _, gW, gb = self.loss_and_grad(Xs[idx], Ys[idx])
                for k in range(len(self.weights)):
                    self.weights[k] -= step * gW[k]
                    self.biases[k] -= step * gb[k]
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale
        out = self._forward(Xs)[-1]
        return out * self.y_scale + self.y_mean


def gradient_check(net: MLP, X: np.ndarray, Y: np.ndarray, step: float = 1e-6) -> float:
    """Largest relative error between backprop and central finite-difference
    gradients over all parameters."""
    if Y.ndim == 1:
        Y = Y[:, None]
    _, gW, gb = net.loss_and_grad(X, Y)
    worst = 0.0
    for params, grads in ((net.weights, gW), (net.biases, gb)):
        for arr, grad in zip(params, grads):
            flat = arr.ravel()
            gflat = grad.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up, _, _ = net.loss_and_grad(X, Y)
                flat[j] = orig - step
                down, _, _ = net.loss_and_grad(X, Y)
                flat[j] = orig
                fd = (up - down) / (2 * step)
                denom = max(abs(fd), abs(gflat[j]), 1e-8)
                worst = max(worst, abs(fd - gflat[j]) / denom)
    return worst


@dataclass
class Surfaces:
    """Arm-specific outcome and state-transition networks."""

    g: dict[int, MLP]
    G: dict[int, MLP]
    m: int


def _arm_features(dataset: PanelDataset, arm: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (t/m, state) and row mask for one arm over decision
    points 1..horizon."""
    n, m, d = dataset.states.shape
    t_norm = np.tile(np.arange(1, horizon + 1) / m, (n, 1))
    X = np.concatenate([t_norm[..., None], dataset.states[:, :horizon]], axis=2)
    mask = dataset.actions[:, :horizon] == arm
    if not mask.any():
        raise EmptyArm(arm)
    return X.reshape(-1, d + 1), mask.ravel()


def fit_surfaces(
    dataset: PanelDataset,
    hidden: tuple[int, ...] = (32, 32),
    lr: float = 0.05,
    epochs: int = 500,
    batch_size: int = 256,
    seed: int = 0,
) -> Surfaces:
    """Fit the four surfaces by arm-wise least squares."""
    n, m, d = dataset.states.shape
    g: dict[int, MLP] = {}
    G: dict[int, MLP] = {}
    for arm in (0, 1):
        X, mask = _arm_features(dataset, arm, m)
        y = dataset.outcomes.reshape(-1)[mask]
        net = MLP(d + 1, 1, hidden, seed=seed + arm)
        net.fit(X[mask], y, lr, epochs, batch_size, seed=seed + 10 + arm)
        g[arm] = net
        Xs, mask_s = _arm_features(dataset, arm, m - 1)
        y_s = dataset.states[:, 1:].reshape(-1, d)[mask_s]
        net_s = MLP(d + 1, d, hidden, seed=seed + 2 + arm)
        net_s.fit(Xs[mask_s], y_s, lr, epochs, batch_size, seed=seed + 12 + arm)
        G[arm] = net_s
    return Surfaces(g=g, G=G, m=m)


def transition_residuals(dataset: PanelDataset, surfaces: Surfaces) -> np.ndarray:
    """Observed next state minus the fitted arm-matched transition surface,
    flattened to (n*(m-1), d)."""
    n, m, d = dataset.states.shape
    X0, _ = _arm_features(dataset, 0, m - 1)
    pred = np.where(
        (dataset.actions[:, : m - 1] == 1).reshape(-1, 1),
        surfaces.G[1].predict(X0),
        surfaces.G[0].predict(X0),
    )
    return dataset.states[:, 1:].reshape(-1, d) - pred


@dataclass
class GaussianNoise:
    """Zero-mean Gaussian transition-noise model with pooled covariance."""

    cov: np.ndarray
    _factor: np.ndarray

    @classmethod
    def fit(cls, residuals: np.ndarray) -> "GaussianNoise":
        residuals = np.asarray(residuals, dtype=float)
        cov = residuals.T @ residuals / residuals.shape[0]
        vals, vecs = np.linalg.eigh(cov)
        factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        return cls(cov=cov, _factor=factor)

    def sample(self, size: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((*size, self.cov.shape[0]))
        return z @ self._factor.T


def estimate_nn_effects(
    dataset: PanelDataset,
    surfaces: Surfaces,
    noise: GaussianNoise,
    n_rollouts: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """Direct and indirect effect by coupled Monte Carlo rollouts.

    Both arms start each rollout from the observed first state of the day
    and consume identical noise draws, so their state paths differ only
    through the transition surfaces.
    """
    n, m, d = dataset.states.shape
    rng = np.random.default_rng(seed)
    M = n_rollouts
    s0 = np.repeat(dataset.states[:, 0], M, axis=0)  # (n*M, d)
    s1 = s0.copy()
    de_total = 0.0
    ie_total = 0.0
    for tau in range(1, m + 1):
        t = np.full((n * M, 1), tau / m)
        X0 = np.concatenate([t, s0], axis=1)
        X1 = np.concatenate([t, s1], axis=1)
        g0 = surfaces.g[0].predict(X0)[:, 0]
        g1_on_s0 = surfaces.g[1].predict(X0)[:, 0]
        de_total += float((g1_on_s0 - g0).sum())
        if tau >= 2:
            ie_total += float((surfaces.g[1].predict(X1)[:, 0] - g1_on_s0).sum())
        if tau < m:
            eps = noise.sample((n * M,), rng)
            s0 = surfaces.G[0].predict(X0) + eps
            s1 = surfaces.G[1].predict(X1) + eps
    return de_total / (n * M), ie_total / (n * M)


class NNVCDP(BaseEstimator):
    """Estimator wrapper: fit surfaces and noise model, then Monte Carlo
    direct/indirect effects."""

    def __init__(
        self,
        hidden: tuple[int, ...] = (32, 32),
        lr: float = 0.1,
        epochs: int = 1500,
        batch_size: int = 256,
        n_rollouts: int = 100,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_rollouts = n_rollouts
        self.seed = seed

    def fit(self, dataset: PanelDataset) -> "NNVCDP":
        self.surfaces_ = fit_surfaces(
            dataset, self.hidden, self.lr, self.epochs, self.batch_size, self.seed
        )
        self.noise_ = GaussianNoise.fit(transition_residuals(dataset, self.surfaces_))
        self.direct_effect_, self.indirect_effect_ = estimate_nn_effects(
            dataset, self.surfaces_, self.noise_, self.n_rollouts, self.seed + 100
        )
        return self
