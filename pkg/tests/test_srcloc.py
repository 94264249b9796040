import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sasbl.model import ValidationError
from sasbl.srcloc import (D_MIN, GridField, PlacementError, SensorLayout, build_sensing_matrix,
                          draw_scenario, draw_sensing_matrix, evolve_sources,
                          localization_success, prior_from_previous, random_sensors,
                          run_srcloc_experiment, top_k)


def idx(*one_based):
    return tuple(i - 1 for i in one_based)


def test_grid_layout_row_major():
    g = GridField()
    assert g.n == 121 and g.extent == (10.0, 10.0)
    xy = g.coords()
    assert tuple(xy[0]) == (0.0, 0.0) and tuple(xy[1]) == (1.0, 0.0)
    assert tuple(xy[11]) == (0.0, 1.0) and tuple(xy[120]) == (10.0, 10.0)
    assert len({tuple(p) for p in xy}) == 121


def test_sensing_matrix_distance_examples():
    g = GridField(1, 1)  # one grid point at the origin
    A = build_sensing_matrix(g, SensorLayout([[1.0, 0.0], [0.0, 2.0]]))
    assert A[0, 0] == 1.0          # distance 1
    assert A[1, 0] == 0.25         # distance 2


def test_sensing_matrix_center_of_cell():
    g = GridField()
    A = build_sensing_matrix(g, SensorLayout([[0.5, 0.5]]))
    corners = [0, 1, 11, 12]
    np.testing.assert_allclose(A[0, corners], 2.0, rtol=1e-15)
    assert A[0].max() == pytest.approx(2.0)


def test_sensor_on_grid_point_is_rejected():
    with pytest.raises(PlacementError):
        build_sensing_matrix(GridField(), SensorLayout([[3.0, 4.0 + D_MIN / 2]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_sensing_entries_positive_and_bounded(seed, m):
    g = GridField()
    A, sensors = draw_sensing_matrix(g, m, np.random.default_rng(seed))
    assert A.shape == (m, 121)
    assert np.all(A > 0) and np.all(A <= D_MIN ** -2.0)
    w, h = g.extent
    assert np.all((sensors.positions >= 0) & (sensors.positions <= [w, h]))


def test_random_sensors_inside_extent():
    pos = random_sensors(GridField(4, 7), 200, np.random.default_rng(0)).positions
    assert pos.shape == (200, 2)
    assert pos[:, 0].max() <= 6.0 and pos[:, 1].max() <= 3.0


def test_boundary_source_moves_half_and_half():
    g = GridField()
    rng = np.random.default_rng(0)
    draws = [evolve_sources(idx(1), g, rng)[0] for _ in range(10_000)]
    assert set(draws) == set(idx(1, 2))
    assert abs(np.mean(np.array(draws) == 0) - 0.5) <= 0.02


def test_interior_source_move_frequencies():
    g = GridField()
    draws = np.array([evolve_sources(idx(60), g, np.random.default_rng(s))[0]
                      for s in range(10_000)])
    for target in idx(59, 60, 61):
        assert abs(np.mean(draws == target) - 1 / 3) <= 0.02
    assert set(draws.tolist()) == set(idx(59, 60, 61))


def test_adjacent_sources_stay_distinct():
    g = GridField()
    rng = np.random.default_rng(1)
    for _ in range(2000):
        nxt = evolve_sources(idx(10, 11), g, rng)
        assert len(set(nxt)) == 2


def test_prior_examples():
    n = 121
    assert prior_from_previous(idx(5), n).P == set(idx(4, 5, 6))
    assert prior_from_previous(idx(1), n).P == set(idx(1, 2))
    assert prior_from_previous(idx(5, 6), n).P == set(idx(4, 5, 6, 7))
    assert prior_from_previous(idx(121), n).P == set(idx(120, 121))
    assert prior_from_previous(idx(5), n).hidden_partition is None


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(0, 5))
def test_scenario_invariants(seed, K1, extra):
    g = GridField()
    scen, prior, slow_t = draw_scenario(g, K1 + extra, K1, np.random.default_rng(seed))
    assert set(scen.slow_sources) <= prior.P
    assert len(prior.P) <= 3 * K1
    assert not set(scen.fast_sources) & prior.P
    assert len(set(scen.positions)) == scen.K == K1 + extra
    assert all(0.5 <= v <= 1.5 for v in scen.intensities)
    assert prior == prior_from_previous(slow_t, g.n)


def test_scenario_rejects_impossible_counts():
    with pytest.raises(ValidationError):
        draw_scenario(GridField(), 2, 3, np.random.default_rng(0))


def test_localization_examples():
    x = np.zeros(10)
    x[[2, 7]] = [0.9, 1.1]
    assert localization_success(x, {2, 7}, 2)
    assert not localization_success(x, {2, 6}, 2)
    assert localization_success(np.zeros(10), {0, 1}, 2)
    assert not localization_success(np.zeros(10), {0, 2}, 2)
    with pytest.raises(ValidationError):
        localization_success(x, {2}, 2)


def _brute_top_k(x, K):
    best = None
    for combo in itertools.combinations(range(len(x)), K):
        key = (sorted((-abs(x[i]), i) for i in combo))
        if best is None or key < best[0]:
            best = (key, combo)
    return frozenset(best[1])


@settings(max_examples=200)
@given(st.lists(st.integers(-4, 4), min_size=10, max_size=10), st.integers(1, 10))
def test_top_k_matches_exhaustive_oracle(values, K):
    x = np.array(values, dtype=float) / 4
    assert top_k(x, K) == _brute_top_k(x, K)


def test_experiment_deterministic_and_shaped():
    kw = dict(grid=GridField(), K=4, K1=3, m_grid=[0.3], snr_db=20.0, trials=3, seed=5)
    a = run_srcloc_experiment(**kw)
    b = run_srcloc_experiment(**kw)
    assert a.aggregates == b.aggregates
    assert [g.mode.value for g in a.aggregates] == ["sbl", "nsl", "sl"]
    assert all(g.trials == 3 for g in a.aggregates)


def test_experiment_rejects_bad_ratio():
    with pytest.raises(ValidationError):
        run_srcloc_experiment(m_grid=[1.5], trials=1)
    with pytest.raises(ValidationError):
        run_srcloc_experiment(m_grid=[0.3], trials=0)


@pytest.mark.slow
def test_square_noiseless_limit_recovers_slow_sources():
    res = run_srcloc_experiment(GridField(), K=3, K1=3, m_grid=[1.0], snr_db=None,
                                trials=5, seed=0)
    for agg in res.aggregates:
        assert agg.success_rate == 1.0, agg
