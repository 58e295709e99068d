import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import switchlab as sl
from switchlab.errors import IsolatedRegion, SchemaError, TiMismatch
from switchlab.panel import (
    DESIGN_KINDS,
    check_ti,
    generate_actions,
    grid_coords,
    neighbor_average,
    validate,
)


def test_design_spec_validation():
    with pytest.raises(SchemaError):
        sl.DesignSpec(kind="nope")
    with pytest.raises(SchemaError):
        sl.DesignSpec(ti=0)


def test_panel_shape_validation():
    with pytest.raises(SchemaError):
        sl.PanelDataset(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((3, 4)))
    with pytest.raises(SchemaError):
        sl.PanelDataset(np.zeros((3, 4, 2)), np.zeros((3, 5)), np.zeros((3, 4)))


def test_regressors_layout(small_panel):
    Z = small_panel.regressors()
    n, m, d = small_panel.states.shape
    assert Z.shape == (n, m, d + 2)
    assert np.all(Z[:, :, 0] == 1.0)
    assert np.array_equal(Z[:, :, 1 : d + 1], small_panel.states)
    assert np.array_equal(Z[:, :, -1], small_panel.actions)


def test_check_ti():
    check_ti(sl.DesignSpec(ti=6), 48)
    with pytest.raises(TiMismatch):
        check_ti(sl.DesignSpec(ti=5), 48)


def test_switchback_alternates_within_day():
    a = generate_actions(sl.DesignSpec("switchback", ti=2), 4, 8)
    assert a.shape == (4, 8)
    # Blocks of length ti alternate within the day; consecutive days start
    # on opposite arms.
    assert np.all(np.isin(a, (0.0, 1.0)))
    for i in range(4):
        blocks = a[i].reshape(-1, 2)
        assert np.all(blocks[:, 0] == blocks[:, 1])
        assert np.all(np.abs(np.diff(blocks[:, 0])) == 1)
    assert np.all(a[0] + a[1] == 1.0)


def test_alternating_day_constant_within_day():
    a = generate_actions(sl.DesignSpec("alternating_day"), 4, 6)
    assert np.all(a.min(axis=1) == a.max(axis=1))
    assert np.all(a[:, 0] == np.array([0, 1, 0, 1]) % 2)


def test_bernoulli_uses_seed():
    a1 = generate_actions(sl.DesignSpec("bernoulli", seed=1), 6, 12)
    a2 = generate_actions(sl.DesignSpec("bernoulli", seed=1), 6, 12)
    a3 = generate_actions(sl.DesignSpec("bernoulli", seed=2), 6, 12)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, a3)


def test_spatiotemporal_alternation_shape_and_flips():
    a = generate_actions(
        sl.DesignSpec("spatiotemporal_alternation", ti=1, seed=0), 3, 8, r=5
    )
    assert a.shape == (3, 8, 5)
    assert np.all(np.isin(a, (0.0, 1.0)))
    # Every region is either the base pattern or its complement.
    base = a[:, :, 0]
    for region in range(5):
        col = a[:, :, region]
        same = np.array_equal(col, base)
        flipped = np.array_equal(col, 1 - base)
        assert same or flipped


def test_spatiotemporal_alternation_requires_region_count():
    with pytest.raises(SchemaError):
        generate_actions(sl.DesignSpec("spatiotemporal_alternation"), 3, 8)


def test_neighbor_average_matches_manual():
    adj = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float)
    actions = np.zeros((1, 2, 3))
    actions[0, 0] = [1, 0, 1]
    nb = neighbor_average(adj, actions)
    assert nb[0, 0, 0] == pytest.approx(0.5)  # mean of regions 1 and 2
    assert nb[0, 0, 1] == pytest.approx(1.0)
    assert nb[0, 0, 2] == pytest.approx(1.0)


def test_isolated_region_raises():
    adj = np.zeros((2, 2))
    with pytest.raises(IsolatedRegion):
        neighbor_average(adj, np.zeros((1, 2, 2)))


def test_grid_coords_in_unit_square():
    for r in (1, 3, 7, 10):
        c = grid_coords(r)
        assert c.shape == (r, 2)
        assert np.all((c >= 0) & (c <= 1))


def test_validate_clean_panels(small_panel, st_panel):
    assert validate(small_panel) == []
    assert validate(st_panel) == []


def test_validate_flags_nonbinary_actions(small_panel):
    bad = sl.PanelDataset(
        small_panel.states.copy(),
        small_panel.actions + 0.5,
        small_panel.outcomes.copy(),
    )
    assert any("action" in v for v in validate(bad))


def test_validate_flags_asymmetric_adjacency(st_panel):
    adj = st_panel.adjacency.copy()
    adj[0, 1] = 1 - adj[0, 1]
    bad = sl.SpatioPanelDataset(
        states=st_panel.states.copy(),
        actions=st_panel.actions.copy(),
        outcomes=st_panel.outcomes.copy(),
        adjacency=adj,
        coords=st_panel.coords.copy(),
    )
    assert any("adjacency" in v for v in validate(bad))


def test_ten_region_adjacency_is_valid_graph():
    adj = sl.TEN_REGION_ADJACENCY
    assert adj.shape == (10, 10)
    assert np.array_equal(adj, adj.T)
    assert np.all(np.diag(adj) == 0)
    assert np.all(np.isin(adj, (0, 1)))
    assert np.all(adj.sum(axis=1) >= 1)


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(DESIGN_KINDS),
    n=st.integers(min_value=1, max_value=6),
    blocks=st.integers(min_value=1, max_value=4),
    ti=st.sampled_from([1, 2, 3]),
)
def test_generated_actions_always_binary(kind, n, blocks, ti):
    m = ti * blocks * 2
    r = 4 if kind == "spatiotemporal_alternation" else None
    a = generate_actions(sl.DesignSpec(kind, ti=ti, seed=0), n, m, r=r)
    assert np.all(np.isin(a, (0.0, 1.0)))
    expected = (n, m) if r is None else (n, m, r)
    assert a.shape == expected
