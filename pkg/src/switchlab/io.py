"""CSV ingestion and export for panel datasets.

Temporal layout: one row per (date, time) with columns
``date,time,state_1..state_d,action,outcome``. The spatio-temporal layout
prepends a ``region_id`` column. Adjacency files are undirected edge lists
``region_a,region_b``; coordinates files are ``region_id,u,v``.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import SchemaError
from .panel import PanelDataset, SpatioPanelDataset, validate


def _state_columns(df: pd.DataFrame) -> list[str]:
    cols = [c for c in df.columns if c.startswith("state_")]
    if not cols:
        raise SchemaError("no state_<j> columns found")
    try:
        cols.sort(key=lambda c: int(c.split("_", 1)[1]))
    except ValueError as exc:
        raise SchemaError(f"malformed state column name: {exc}") from exc
    return cols


def _require(df: pd.DataFrame, cols: list[str]) -> None:
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing}")


def _panel_axes(df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    dates = np.array(sorted(df["date"].unique().tolist()), dtype=object)
    times = np.sort(df["time"].unique())
    return dates, times


def read_panel_csv(path: str) -> PanelDataset:
    """Load a temporal panel; every (date, time) cell must appear exactly once."""
    df = pd.read_csv(path)
    _require(df, ["date", "time", "action", "outcome"])
    state_cols = _state_columns(df)
    dates, times = _panel_axes(df)
    n, m = len(dates), len(times)
    if len(df) != n * m:
        raise SchemaError(f"expected {n * m} rows for {n} dates x {m} times, got {len(df)}")
    if df.isna().any().any():
        raise SchemaError("missing values are not supported")
    df = df.sort_values(["date", "time"], kind="mergesort")
    states = df[state_cols].to_numpy(float).reshape(n, m, len(state_cols))
    actions = df["action"].to_numpy(float).reshape(n, m)
    outcomes = df["outcome"].to_numpy(float).reshape(n, m)
    ds = PanelDataset(states, actions, outcomes)
    problems = validate(ds)
    if problems:
        raise SchemaError("; ".join(problems))
    return ds


def write_panel_csv(path: str, dataset: PanelDataset) -> None:
    n, m, d = dataset.states.shape
    date = np.repeat(np.arange(n), m)
    time = np.tile(np.arange(1, m + 1), n)
    data = {"date": date, "time": time}
    for j in range(d):
        data[f"state_{j + 1}"] = dataset.states[:, :, j].ravel()
    data["action"] = dataset.actions.ravel().astype(int)
    data["outcome"] = dataset.outcomes.ravel()
    pd.DataFrame(data).to_csv(path, index=False)


def read_adjacency_csv(path: str, r: int) -> np.ndarray:
    """Build the (r, r) binary adjacency matrix from an edge list."""
    df = pd.read_csv(path)
    _require(df, ["region_a", "region_b"])
    adj = np.zeros((r, r))
    for a, b in df[["region_a", "region_b"]].itertuples(index=False):
        a, b = int(a), int(b)
        if not (0 <= a < r and 0 <= b < r) or a == b:
            raise SchemaError(f"bad edge ({a}, {b}) for {r} regions")
        adj[a, b] = adj[b, a] = 1.0
    return adj


def write_adjacency_csv(path: str, adjacency: np.ndarray) -> None:
    a_idx, b_idx = np.nonzero(np.triu(np.asarray(adjacency), k=1))
    pd.DataFrame({"region_a": a_idx, "region_b": b_idx}).to_csv(path, index=False)


def read_coords_csv(path: str, r: int) -> np.ndarray:
    df = pd.read_csv(path)
    _require(df, ["region_id", "u", "v"])
    if len(df) != r:
        raise SchemaError(f"expected {r} coordinate rows, got {len(df)}")
    coords = np.zeros((r, 2))
    for rid, u, v in df[["region_id", "u", "v"]].itertuples(index=False):
        coords[int(rid)] = (float(u), float(v))
    return coords


def write_coords_csv(path: str, coords: np.ndarray) -> None:
    coords = np.asarray(coords)
    pd.DataFrame(
        {"region_id": np.arange(len(coords)), "u": coords[:, 0], "v": coords[:, 1]}
    ).to_csv(path, index=False)


def read_spatio_panel_csv(
    path: str, adjacency_path: str, coords_path: str | None = None
) -> SpatioPanelDataset:
    """Load a spatio-temporal panel plus its adjacency (and optional coords)."""
    df = pd.read_csv(path)
    _require(df, ["region_id", "date", "time", "action", "outcome"])
    state_cols = _state_columns(df)
    dates, times = _panel_axes(df)
    regions = np.sort(df["region_id"].unique())
    n, m, r = len(dates), len(times), len(regions)
    if len(df) != n * m * r:
        raise SchemaError(
            f"expected {n * m * r} rows for {n} dates x {m} times x {r} regions, got {len(df)}"
        )
    if df.isna().any().any():
        raise SchemaError("missing values are not supported")
    df = df.sort_values(["date", "time", "region_id"], kind="mergesort")
    shape = (n, m, r)
    states = df[state_cols].to_numpy(float).reshape(*shape, len(state_cols))
    actions = df["action"].to_numpy(float).reshape(shape)
    outcomes = df["outcome"].to_numpy(float).reshape(shape)
    adjacency = read_adjacency_csv(adjacency_path, r)
    coords = read_coords_csv(coords_path, r) if coords_path else None
    ds = SpatioPanelDataset(states, actions, outcomes, adjacency, coords)
    problems = validate(ds)
    if problems:
        raise SchemaError("; ".join(problems))
    return ds


def write_spatio_panel_csv(path: str, dataset: SpatioPanelDataset) -> None:
    n, m, r, d = dataset.states.shape
    date = np.repeat(np.arange(n), m * r)
    time = np.tile(np.repeat(np.arange(1, m + 1), r), n)
    region = np.tile(np.arange(r), n * m)
    data = {"region_id": region, "date": date, "time": time}
    for j in range(d):
        data[f"state_{j + 1}"] = dataset.states[:, :, :, j].ravel()
    data["action"] = dataset.actions.ravel().astype(int)
    data["outcome"] = dataset.outcomes.ravel()
    pd.DataFrame(data).to_csv(path, index=False)
