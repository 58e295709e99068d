"""Panel data containers for switchback experiments.

A temporal panel holds ``n`` days of ``m`` decision points with a
``d``-dimensional state, a binary action, and a scalar outcome per point.
The spatio-temporal panel adds ``r`` regions, region coordinates in the
unit square, a symmetric adjacency matrix, and the neighbor-averaged
action that enters the interference model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IsolatedRegion, SchemaError, TiMismatch

DESIGN_KINDS = (
    "switchback",
    "alternating_day",
    "spatiotemporal_alternation",
    "bernoulli",
)


@dataclass(frozen=True)
class DesignSpec:
    """Experimental design: which arm each (day, decision point[, region])
    cell receives.

    ``ti`` is the treatment-interval length in decision points; within a
    day the arm is held constant over blocks of ``ti`` points.
    """

    kind: str = "switchback"
    ti: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DESIGN_KINDS:
            raise SchemaError(f"unknown design kind: {self.kind!r}")
        if self.ti < 1:
            raise SchemaError("treatment interval must be >= 1")


@dataclass
class PanelDataset:
    """Temporal panel: states (n, m, d), actions (n, m) in {0, 1},
    outcomes (n, m)."""

    states: np.ndarray
    actions: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        if self.states.ndim != 3:
            raise SchemaError("states must be (n, m, d)")
        if self.actions.shape != self.states.shape[:2]:
            raise SchemaError("actions must be (n, m)")
        if self.outcomes.shape != self.states.shape[:2]:
            raise SchemaError("outcomes must be (n, m)")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def regressors(self) -> np.ndarray:
        """Design array (n, m, d+2): intercept, state, action."""
        n, m, d = self.states.shape
        Z = np.empty((n, m, d + 2))
        Z[..., 0] = 1.0
        Z[..., 1 : d + 1] = self.states
        Z[..., d + 1] = self.actions
        return Z


def neighbor_average(adjacency: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Average action over each region's neighbors.

    ``actions`` has region as its last axis; the result has the same shape.
    Row ``i`` of the weight matrix is ``adjacency[i] / degree(i)``.
    """
    adjacency = np.asarray(adjacency, dtype=float)
    deg = adjacency.sum(axis=1)
    if np.any(deg == 0):
        raise IsolatedRegion(f"regions with no neighbors: {np.where(deg == 0)[0].tolist()}")
    weights = adjacency / deg[:, None]
    return np.asarray(actions, dtype=float) @ weights.T


def grid_coords(r: int) -> np.ndarray:
    """Fallback region coordinates: a ceil(sqrt(r)) x ceil(sqrt(r)) lattice
    scaled to the unit square, filled row-major."""
    side = int(np.ceil(np.sqrt(r)))
    denom = max(side - 1, 1)
    pts = [(col / denom, row / denom) for row in range(side) for col in range(side)]
    return np.asarray(pts[:r], dtype=float)


@dataclass
class SpatioPanelDataset:
    """Spatio-temporal panel: states (n, m, r, d), actions (n, m, r),
    outcomes (n, m, r), coords (r, 2), adjacency (r, r).

    ``neighbor_actions`` is computed from ``adjacency`` and ``actions`` when
    not supplied; re-deriving it always reproduces the stored array exactly.
    """

    states: np.ndarray
    actions: np.ndarray
    outcomes: np.ndarray
    adjacency: np.ndarray
    coords: np.ndarray | None = None
    neighbor_actions: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        if self.states.ndim != 4:
            raise SchemaError("states must be (n, m, r, d)")
        n, m, r, _ = self.states.shape
        if self.actions.shape != (n, m, r):
            raise SchemaError("actions must be (n, m, r)")
        if self.outcomes.shape != (n, m, r):
            raise SchemaError("outcomes must be (n, m, r)")
        if self.adjacency.shape != (r, r):
            raise SchemaError("adjacency must be (r, r)")
        if self.coords is None:
            self.coords = grid_coords(r)
        else:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.shape != (r, 2):
                raise SchemaError("coords must be (r, 2)")
        if self.neighbor_actions is None:
            if r == 1:
                # Single region: there is no neighborhood, the interference
                # column is dropped downstream.
                self.neighbor_actions = np.zeros_like(self.actions)
            else:
                self.neighbor_actions = neighbor_average(self.adjacency, self.actions)
        else:
            self.neighbor_actions = np.asarray(self.neighbor_actions, dtype=float)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def r(self) -> int:
        return self.states.shape[2]

    @property
    def d(self) -> int:
        return self.states.shape[3]

    def regressors(self) -> np.ndarray:
        """Design array (n, m, r, d+3): intercept, state, action,
        neighbor-averaged action."""
        n, m, r, d = self.states.shape
        Z = np.empty((n, m, r, d + 3))
        Z[..., 0] = 1.0
        Z[..., 1 : d + 1] = self.states
        Z[..., d + 1] = self.actions
        Z[..., d + 2] = self.neighbor_actions
        return Z


def _check_finite(name: str, arr: np.ndarray, problems: list[str]) -> None:
    if not np.all(np.isfinite(arr)):
        problems.append(f"{name} contains missing or non-finite values")


def validate(dataset: PanelDataset | SpatioPanelDataset) -> list[str]:
    """Return a list of violation messages; an empty list means valid."""
    problems: list[str] = []
    _check_finite("states", dataset.states, problems)
    _check_finite("outcomes", dataset.outcomes, problems)
    _check_finite("actions", dataset.actions, problems)
    acts = dataset.actions
    if not np.all(np.isin(acts[np.isfinite(acts)], (0.0, 1.0))):
        problems.append("actions must be binary 0/1")
    if isinstance(dataset, SpatioPanelDataset):
        adj = dataset.adjacency
        if not np.allclose(adj, adj.T):
            problems.append("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            problems.append("adjacency must have a zero diagonal")
        if not np.all(np.isin(adj, (0.0, 1.0))):
            problems.append("adjacency entries must be binary 0/1")
        if dataset.r > 1 and np.any(adj.sum(axis=1) == 0):
            problems.append("every region needs at least one neighbor")
        coords = dataset.coords
        if np.any(coords < 0) or np.any(coords > 1):
            problems.append("region coordinates must lie in the unit square")
        if not problems and dataset.r > 1:
            expected = neighbor_average(adj, dataset.actions)
            if not np.array_equal(expected, dataset.neighbor_actions):
                problems.append("stored neighbor-averaged actions do not match adjacency")
    return problems


def check_ti(design: DesignSpec, m: int) -> None:
    """Raise TiMismatch unless the treatment interval divides the day."""
    if m % design.ti != 0:
        raise TiMismatch(f"treatment interval {design.ti} does not divide m={m}")


def generate_actions(
    design: DesignSpec,
    n: int,
    m: int,
    r: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Action array for a design: (n, m) or, with ``r`` regions, (n, m, r).

    Randomized designs (bernoulli arms, spatio-temporal starting arms) draw
    from ``rng`` when given, else from a generator seeded by ``design.seed``.
    """
    check_ti(design, m)
    if rng is None:
        rng = np.random.default_rng(design.seed)
    blocks = m // design.ti
    # Within-day alternation starting from arm 0, in blocks of length ti.
    day0 = np.repeat(np.arange(blocks) % 2, design.ti).astype(float)
    day1 = 1.0 - day0
    if design.kind == "switchback":
        # Day pairs stack the two starting arms so each decision point is
        # balanced across days.
        acts = np.stack([day0 if i % 2 == 0 else day1 for i in range(n)])
    elif design.kind == "alternating_day":
        acts = np.stack([np.full(m, float(i % 2)) for i in range(n)])
    elif design.kind == "bernoulli":
        shape = (n, m) if r is None else (n, m, r)
        return rng.integers(0, 2, size=shape).astype(float)
    elif design.kind == "spatiotemporal_alternation":
        if r is None:
            raise SchemaError("spatiotemporal_alternation requires a region count")
        base = np.stack([day0 if i % 2 == 0 else day1 for i in range(n)])
        flips = rng.integers(0, 2, size=r).astype(float)
        return np.abs(base[:, :, None] - flips[None, None, :])
    else:  # pragma: no cover - guarded by DesignSpec
        raise SchemaError(design.kind)
    if r is not None and design.kind in ("switchback", "alternating_day"):
        acts = np.repeat(acts[:, :, None], r, axis=2)
    return acts
