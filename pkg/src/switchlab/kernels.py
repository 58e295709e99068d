"""Kernel functions and smoothing weights.

All kernels are symmetric probability densities supported on [-1, 1].
Temporal weights follow the normalized-kernel construction
``w_k(t) = K((t - k) / (m h)) / sum_j K((t - j) / (m h))`` over the grid of
decision points ``1..m``; spatial weights use a product kernel over 2-d
region coordinates in the unit square.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllWeightsZero

KERNELS = ("epanechnikov", "triangular", "quartic")


def kernel_eval(u: np.ndarray | float, family: str = "epanechnikov") -> np.ndarray:
    """Evaluate a kernel density at points ``u``.

    Returns 0 outside [-1, 1] for every family.
    """
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if family == "epanechnikov":
        vals = 0.75 * (1.0 - u**2)
    elif family == "triangular":
        vals = 1.0 - np.abs(u)
    elif family == "quartic":
        vals = (15.0 / 16.0) * (1.0 - u**2) ** 2
    else:
        raise ValueError(f"unknown kernel family: {family!r}")
    return np.where(inside, vals, 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus temporal bandwidth ``h`` and optional spatial
    bandwidth ``h_spatial`` (both on the scale of the construction above)."""

    family: str = "epanechnikov"
    h: float = 0.1
    h_spatial: float | None = None

    def __post_init__(self) -> None:
        if self.family not in KERNELS:
            raise ValueError(f"unknown kernel family: {self.family!r}")
        if self.h <= 0:
            raise ValueError("temporal bandwidth must be positive")
        if self.h_spatial is not None and self.h_spatial <= 0:
            raise ValueError("spatial bandwidth must be positive")


def temporal_weights(spec: KernelSpec, t: float, m: int) -> np.ndarray:
    """Weights over decision points 1..m for smoothing at time ``t``.

    The returned vector has length ``m`` and sums exactly to 1.
    """
    grid = np.arange(1, m + 1, dtype=float)
    raw = kernel_eval((t - grid) / (m * spec.h), spec.family)
    total = raw.sum()
    if total <= 0.0:
        raise AllWeightsZero(
            f"no decision point within bandwidth support at t={t} (m={m}, h={spec.h})"
        )
    return raw / total


def temporal_smoothing_matrix(spec: KernelSpec, m: int) -> np.ndarray:
    """Matrix ``W`` with ``W[t-1]`` the smoothing weights at decision point t."""
    return np.stack([temporal_weights(spec, t, m) for t in range(1, m + 1)])


def spatial_weights(spec: KernelSpec, idx: int, coords: np.ndarray) -> np.ndarray:
    """Product-kernel weights over regions for smoothing at region ``idx``.

    ``coords`` is an (r, 2) array of region centers in the unit square.
    The weight on region ``l`` is K((u_idx-u_l)/h) * K((v_idx-v_l)/h),
    normalized to sum to 1.
    """
    if spec.h_spatial is None:
        raise ValueError("spatial smoothing requires h_spatial in the KernelSpec")
    coords = np.asarray(coords, dtype=float)
    du = (coords[idx, 0] - coords[:, 0]) / spec.h_spatial
    dv = (coords[idx, 1] - coords[:, 1]) / spec.h_spatial
    raw = kernel_eval(du, spec.family) * kernel_eval(dv, spec.family)
    total = raw.sum()
    if total <= 0.0:
        raise AllWeightsZero(f"no region within spatial bandwidth of region {idx}")
    return raw / total


def spatial_smoothing_matrix(spec: KernelSpec, coords: np.ndarray) -> np.ndarray:
    """Matrix ``W`` with row ``i`` the spatial smoothing weights at region i."""
    r = np.asarray(coords).shape[0]
    return np.stack([spatial_weights(spec, i, coords) for i in range(r)])
