"""Intensity-based source localization on a planar grid.

A handful of sources sit on grid points; ``m`` sensors at random positions
each record ``sum_i x_i * d_ij**(-decay)``. Slowly moving sources supply a
prior support for the next time step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .engine import NumericBreakdownError, solve
from .model import (GroundTruth, Mode, PriorSupport, SensingProblem,
                    SolverConfig, ValidationError)
from .synth import (SUCCESS_NMSE, TrialRecord, add_noise, aggregate, nmse,
                    run_tasks, trial_rng)
from . import synth

D_MIN = 1e-2
COND_LIMIT = 1e12
MAX_REDRAWS = 100
INTENSITY_RANGE = (0.5, 1.5)


class PlacementError(ValidationError):
    """A sensor sits closer than ``d_min`` to a grid point."""


@dataclass(frozen=True)
class GridField:
    rows: int = 11
    cols: int = 11
    spacing: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or not self.spacing > 0:
            raise ValidationError("grid: rows, cols and spacing must be positive")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self):
        return (self.cols - 1) * self.spacing, (self.rows - 1) * self.spacing

    def coords(self) -> np.ndarray:
        """``(n, 2)`` array of (x, y) positions, row-major."""
        idx = np.arange(self.n)
        return np.column_stack([(idx % self.cols) * self.spacing,
                                (idx // self.cols) * self.spacing])


@dataclass(frozen=True)
class SensorLayout:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def m(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SourceScenario:
    slow_sources: tuple
    fast_sources: tuple
    intensities: tuple

    @property
    def K(self) -> int:
        return len(self.slow_sources) + len(self.fast_sources)

    @property
    def K1(self) -> int:
        return len(self.slow_sources)

    @property
    def positions(self) -> tuple:
        return tuple(self.slow_sources) + tuple(self.fast_sources)


@dataclass(frozen=True)
class ScenarioSpec:
    rows: int = 11
    cols: int = 11
    K: int = 4
    K1: int = 3
    m: int = 36
    snr_db: Optional[float] = 20.0
    seed: int = 0
    decay_alpha: float = 2.0


def random_sensors(grid: GridField, m: int, rng) -> SensorLayout:
    w, h = grid.extent
    return SensorLayout(rng.uniform(0.0, 1.0, size=(m, 2)) * np.array([w, h]))


def build_sensing_matrix(grid: GridField, sensors: SensorLayout,
                         decay_alpha: float = 2.0, d_min: float = D_MIN) -> np.ndarray:
    """Row ``j``, column ``i`` holds ``d_ij ** (-decay_alpha)``."""
    diff = sensors.positions[:, None, :] - grid.coords()[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(dist < d_min):
        j, i = np.unravel_index(np.argmin(dist), dist.shape)
        raise PlacementError(
            f"sensor {j + 1} lies within {d_min} of grid point {i + 1}")
    return dist ** (-decay_alpha)


def evolve_sources(current_slow, grid: GridField, rng) -> tuple:
    """Move each slow source to ``s - 1``, ``s`` or ``s + 1`` (linear index).

    Moves are uniform over the in-range options not already claimed by an
    earlier source, which is what redrawing on collision amounts to.
    """
    n = grid.n
    taken = []
    for s in current_slow:
        options = [c for c in (s - 1, s, s + 1) if 0 <= c < n and c not in taken]
        if not options:
            raise ValidationError(f"source at {s + 1} has no free move")
        taken.append(int(options[rng.integers(len(options))]))
    return tuple(taken)


def prior_from_previous(prev_slow, n: int) -> PriorSupport:
    P = {c for s in prev_slow for c in (s - 1, s, s + 1) if 0 <= c < n}
    return PriorSupport(P)


def top_k(x_hat, K) -> frozenset:
    # stable sort keeps the smaller index first among equal magnitudes
    order = np.argsort(-np.abs(np.asarray(x_hat, dtype=float)), kind="stable")
    return frozenset(order[:K].tolist())


def localization_success(x_hat, true_positions, K) -> bool:
    true_positions = frozenset(int(i) for i in true_positions)
    if len(true_positions) != K:
        raise ValidationError("true_positions: expected exactly K distinct indices")
    return top_k(x_hat, K) == true_positions


def draw_scenario(grid: GridField, K: int, K1: int, rng):
    """Slow positions at t, their moves to t+1, the prior and the fast sources.

    Returns ``(scenario_at_t_plus_1, prior, slow_at_t)``.
    """
    if not 0 <= K1 <= K <= grid.n:
        raise ValidationError("need 0 <= K1 <= K <= n")
    slow_t = tuple(int(s) for s in rng.choice(grid.n, size=K1, replace=False))
    slow_next = evolve_sources(slow_t, grid, rng)
    prior = prior_from_previous(slow_t, grid.n)
    free = np.array(sorted(set(range(grid.n)) - prior.P - set(slow_next)), dtype=int)
    if free.size < K - K1:
        raise ValidationError("not enough free grid points for the fast sources")
    fast = tuple(int(s) for s in rng.choice(free, size=K - K1, replace=False))
    intensities = tuple(rng.uniform(*INTENSITY_RANGE, size=K).tolist())
    return SourceScenario(slow_next, fast, intensities), prior, slow_t


def draw_sensing_matrix(grid: GridField, m: int, rng, decay_alpha=2.0):
    """Draw sensor layouts until one passes placement and conditioning."""
    for _ in range(MAX_REDRAWS):
        sensors = random_sensors(grid, m, rng)
        try:
            A = build_sensing_matrix(grid, sensors, decay_alpha)
        except PlacementError:
            continue
        if np.linalg.cond(A) <= COND_LIMIT:
            return A, sensors
    raise PlacementError(f"no acceptable sensor layout in {MAX_REDRAWS} draws")


def _run_trial(args):
    spec, grid_index, trial, modes, solver = args
    grid = GridField(spec.rows, spec.cols)
    rng = trial_rng(spec.seed, grid_index, trial)
    scenario, prior, _ = draw_scenario(grid, spec.K, spec.K1, rng)
    try:
        A, _ = draw_sensing_matrix(grid, spec.m, rng, spec.decay_alpha)
    except PlacementError:
        return [TrialRecord(spec, mode, 1.0, False, 0, 0.0, trial) for mode in modes]
    x = np.zeros(grid.n)
    x[list(scenario.positions)] = scenario.intensities
    y, sigma = add_noise(A @ x, spec.snr_db, rng)
    problem = SensingProblem(A, y, GroundTruth(x, scenario.positions, sigma))
    noisy = sigma > 0
    out = []
    for mode in modes:
        t0 = time.perf_counter()
        try:
            res = solve(problem, prior, replace(solver, mode=mode))
            err, iters = nmse(x, res.x_hat), res.iterations
            ok = (localization_success(res.x_hat, scenario.positions, spec.K) if noisy
                  else err <= SUCCESS_NMSE)
        except NumericBreakdownError:
            err, iters, ok = 1.0, 0, False
        wall = 1e3 * (time.perf_counter() - t0)
        out.append(TrialRecord(spec, mode, err, bool(ok), iters, wall, trial))
    return out


def run_srcloc_experiment(grid: GridField = GridField(), K: int = 4, K1: int = 3,
                          m_grid: Sequence[float] = (0.3, 0.4),
                          snr_db: Optional[float] = 20.0, trials: int = 100,
                          seed: int = 0, modes=("sbl", "nsl", "sl"),
                          parallelism: int = 1,
                          solver: Optional[SolverConfig] = None):
    """Sweep the sensor ratio ``m / n`` for one t -> t+1 transition.

    Noiseless runs are scored by NMSE; noisy runs by exact top-K localization.
    """
    if not len(m_grid):
        raise ValidationError("m_grid: must be nonempty")
    if trials < 1:
        raise ValidationError("trials: must be at least 1")
    modes = [Mode.parse(m) for m in modes]
    solver = solver or synth.BENCH_SOLVER
    tasks = []
    for gi, ratio in enumerate(m_grid):
        m = int(round(ratio * grid.n))
        if not 1 <= m <= grid.n:
            raise ValidationError(f"m_grid: ratio {ratio} gives m = {m} outside 1..{grid.n}")
        spec = ScenarioSpec(grid.rows, grid.cols, K, K1, m, snr_db, seed)
        tasks.extend((spec, gi, t, modes, solver) for t in range(trials))
    flat = run_tasks(_run_trial, tasks, parallelism)
    per_point = [sum(flat[gi * trials:(gi + 1) * trials], [])
                 for gi in range(len(m_grid))]
    return aggregate("m_over_n", list(m_grid), modes, trials, per_point,
                     score=lambda r: r.success)
