"""Hierarchical prior model: problem containers, solver settings and the
per-index Gamma-rate schedule that carries prior support knowledge.

Indices are 0-based everywhere inside the package. Files and the CLI use
1-based indices; conversion happens in :mod:`sasbl.io`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np


class ValidationError(ValueError):
    """Raised for malformed inputs (shapes, index ranges, sizes)."""


class Mode(str, enum.Enum):
    SBL = "sbl"
    NSL = "nsl"
    SL = "sl"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(
                f"mode: expected one of sbl, nsl, sl, got {value!r}") from None


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _index_set(indices: Iterable[int]) -> frozenset:
    return frozenset(int(i) for i in indices)


@dataclass(frozen=True)
class GroundTruth:
    x: np.ndarray
    support: frozenset
    noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "support", _index_set(self.support))
        if self.noise_std < 0:
            raise ValidationError("noise_std must be nonnegative")
        nonzero = frozenset(np.flatnonzero(self.x).tolist())
        if nonzero != self.support:
            raise ValidationError("support does not match the nonzeros of x")

    @property
    def K(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class SensingProblem:
    A: np.ndarray
    y: np.ndarray
    truth: Optional[GroundTruth] = None

    def __post_init__(self):
        A = _frozen(self.A)
        y = _frozen(self.y)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValidationError(f"A: expected a nonempty 2-D matrix, got shape {A.shape}")
        if y.ndim != 1 or y.shape[0] != A.shape[0]:
            raise ValidationError(
                f"y: expected length {A.shape[0]} to match rows of A, got shape {y.shape}")
        if not np.all(np.isfinite(A)):
            raise ValidationError("A: contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValidationError("y: contains non-finite entries")
        if self.truth is not None and self.truth.x.shape != (A.shape[1],):
            raise ValidationError("truth.x: length must equal the number of columns of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class PriorSupport:
    """Claimed support ``P``.

    ``hidden_partition`` holds ``(S, E)`` for scoring synthetic runs. Solvers
    only ever look at ``P``.
    """

    P: frozenset = frozenset()
    hidden_partition: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "P", _index_set(self.P))
        if self.hidden_partition is not None:
            S, E = (_index_set(s) for s in self.hidden_partition)
            if S & E or (S | E) != self.P:
                raise ValidationError("hidden partition must split P into disjoint S and E")
            object.__setattr__(self, "hidden_partition", (S, E))

    def check_range(self, n: int) -> None:
        bad = sorted(i for i in self.P if not 0 <= i < n)
        if bad:
            raise ValidationError(
                f"prior support: index {bad[0] + 1} out of range 1..{n}")

    def __len__(self):
        return len(self.P)


@dataclass(frozen=True)
class SolverConfig:
    mode: Mode = Mode.SBL
    a: float = 1e-4
    b_small: float = 1e-4
    b_large: float = 0.5
    c: float = 1e-4
    d: float = 1e-4
    p: float = 0.1
    q: float = 0.1
    epsilon: float = 1e-6
    max_iter: int = 2000
    alpha_cap: float = 1e12
    gamma_cap: float = 1e12
    # off by default: the absolute ||dmu|| <= epsilon rule is the reference one
    relative_tol: bool = False
    normalize_columns: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        for name in ("a", "b_small", "b_large", "c", "d", "p", "q",
                     "epsilon", "alpha_cap", "gamma_cap"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{name}: must be a positive finite number, got {value!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValidationError(f"max_iter: must be a positive integer, got {self.max_iter!r}")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class BSchedule:
    values: np.ndarray
    learnable: np.ndarray = field(default=None)

    def __post_init__(self):
        values = _frozen(self.values)
        learnable = (np.zeros(values.shape, dtype=bool) if self.learnable is None
                     else _frozen(self.learnable, dtype=bool))
        if learnable.shape != values.shape:
            raise ValidationError("learnable mask must match values in length")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "learnable", learnable)

    @property
    def learnable_index(self) -> np.ndarray:
        return np.flatnonzero(self.learnable)


def build_b_schedule(config: SolverConfig, prior: PriorSupport, n: int) -> BSchedule:
    """Per-index Gamma rates ``b_i`` for the chosen mode.

    SBL ignores ``P``. NSL pins ``b_i = b_large`` on ``P``. SL marks ``P`` as
    latent and starts it at the Gamma(p, q) prior mean ``p / q``.
    """
    if n < 1:
        raise ValidationError(f"n: must be positive, got {n}")
    prior.check_range(n)
    values = np.full(n, config.b_small)
    learnable = np.zeros(n, dtype=bool)
    idx = np.fromiter(sorted(prior.P), dtype=int, count=len(prior.P))
    if config.mode is Mode.NSL:
        values[idx] = config.b_large
    elif config.mode is Mode.SL:
        values[idx] = config.p / config.q
        learnable[idx] = True
    return BSchedule(values, learnable)
