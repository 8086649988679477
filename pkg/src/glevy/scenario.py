"""Scenario controls and the finite families that stand in for the control set.

A scenario picks, on each control interval, a jump-measure index and a
volatility index. Fixed scenarios store one pair per interval; feedback
scenarios look the pair up from the bin of the first state component at the
start of the interval.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .uncertainty import UncertaintySet

MODES = ("single", "product-lattice", "feedback-lattice")


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """A piecewise-constant control on ``time_grid``.

    ``table`` has shape ``(N, n_bins, 2)``; entry ``[i, b]`` is the
    ``(jump index, vol index)`` pair used on interval ``i`` when the state lies
    in bin ``b``. A fixed scenario is the one-bin case. ``edges`` are the
    interior bin edges; a state equal to an edge belongs to the upper bin.
    """

    time_grid: np.ndarray
    table: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        grid = _frozen(self.time_grid, float)
        table = _frozen(self.table, np.int64)
        edges = _frozen(self.edges, float).ravel()
        if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("time grid must be strictly increasing from 0")
        if table.shape != (len(grid) - 1, len(edges) + 1, 2):
            raise ValueError(f"selection table has shape {table.shape}, "
                             f"expected {(len(grid) - 1, len(edges) + 1, 2)}")
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def fixed(cls, time_grid, pairs):
        pairs = np.asarray(pairs, np.int64).reshape(-1, 1, 2)
        if len(pairs) == 1 and len(time_grid) > 2:
            pairs = np.repeat(pairs, len(time_grid) - 1, axis=0)
        return cls(time_grid, pairs, np.zeros(0))

    @classmethod
    def constant(cls, T, k=0, m=0):
        return cls.fixed([0.0, T], [(k, m)])

    @property
    def is_feedback(self):
        return len(self.edges) > 0

    @property
    def n_intervals(self):
        return len(self.time_grid) - 1

    @property
    def horizon(self):
        return float(self.time_grid[-1])

    def check_indices(self, U: UncertaintySet):
        k, m = self.table[..., 0], self.table[..., 1]
        if k.min() < 0 or k.max() >= len(U.jump_family) or m.min() < 0 or m.max() >= len(U.vol_family):
            raise ValueError("scenario references an index outside the uncertainty set")

    def interval_of(self, t):
        """Index of the control interval ``[t_i, t_{i+1})`` containing ``t``."""
        i = np.searchsorted(self.time_grid, t, side="right") - 1
        return np.clip(i, 0, self.n_intervals - 1)

    def select(self, i, states):
        """Vectorized lookup: ``states`` of shape ``(n, d)`` or ``(n,)`` -> ``(k, m)`` arrays."""
        states = np.asarray(states, float)
        first = states[:, 0] if states.ndim == 2 else states
        bins = np.searchsorted(self.edges, first, side="right")
        pairs = self.table[i][bins]
        return pairs[:, 0], pairs[:, 1]

    def key(self, U: UncertaintySet, refine_to: int | None = None):
        """Canonical description used to test family nesting across resolutions.

        Indices are replaced by the measures and matrices they select and the
        control grid is expanded to ``refine_to`` equal intervals.
        """
        n = refine_to or self.n_intervals
        T = self.horizon
        out = []
        for j in range(n):
            i = int(self.interval_of(T * j / n))
            segs = []
            for b, (k, m) in enumerate(self.table[i]):
                lo = float(np.round(self.edges[b - 1], 12)) if b > 0 else -np.inf
                what = (U.jump_family[k].key(), tuple(np.round(U.vol_family[m], 12).ravel()))
                if segs and segs[-1][1] == what:
                    continue
                segs.append((lo, what))
            out.append(tuple(segs))
        return tuple(out)


def scenario_at(s: Scenario, i: int, state) -> tuple[int, int]:
    """The ``(jump index, vol index)`` pair selected on interval ``i`` at ``state``.

    States outside the binned box fall into the boundary bins.
    """
    state = np.atleast_1d(np.asarray(state, float))
    k, m = s.select(i, state[None, :])
    return int(k[0]), int(m[0])


@dataclass(frozen=True)
class ScenarioFamily:
    """Configuration of an enumerable scenario family.

    ``single`` yields the constant scenario ``single_pair``. ``product-lattice``
    yields every fixed selection on ``control_intervals`` equal intervals.
    ``feedback-lattice`` yields every table over ``control_intervals`` x ``bins``
    cells, with bins uniform on ``state_box``.
    """

    mode: str = "single"
    control_intervals: int = 1
    bins: int = 2
    state_box: tuple = (-1.0, 1.0)
    cap: int = 100_000
    allow_truncation: bool = False
    single_pair: tuple = (0, 0)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown scenario mode {self.mode!r}; expected one of {MODES}")
        if self.cap < 1 or self.control_intervals < 1 or self.bins < 1:
            raise ValueError("cap, control_intervals and bins must be positive")

    def size(self, U: UncertaintySet) -> int:
        pairs = len(U.jump_family) * len(U.vol_family)
        if self.mode == "single":
            return 1
        cells = self.control_intervals * (self.bins if self.mode == "feedback-lattice" else 1)
        return pairs ** cells

    def edges(self):
        lo, hi = self.state_box
        return np.linspace(lo, hi, self.bins + 1)[1:-1]


@dataclass(frozen=True)
class EnumeratedFamily:
    scenarios: tuple
    truncated: bool
    full_size: int

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]


def enumerate_scenarios(family: ScenarioFamily, U: UncertaintySet, T: float) -> EnumeratedFamily:
    """Deterministically enumerate ``family``; the last control index varies fastest."""
    full = family.size(U)
    if full > family.cap and not family.allow_truncation:
        raise ValueError(f"scenario family has {full} members, above the cap {family.cap}; "
                         "enable truncation or raise the cap")
    if family.mode == "single":
        s = Scenario.constant(T, *family.single_pair)
        s.check_indices(U)
        return EnumeratedFamily((s,), False, 1)

    grid = np.linspace(0.0, T, family.control_intervals + 1)
    pairs = [(k, m) for k in range(len(U.jump_family)) for m in range(len(U.vol_family))]
    feedback = family.mode == "feedback-lattice"
    n_bins = family.bins if feedback else 1
    edges = family.edges() if feedback else np.zeros(0)
    cells = family.control_intervals * n_bins
    out = []
    for combo in itertools.islice(itertools.product(range(len(pairs)), repeat=cells), family.cap):
        table = np.array([pairs[c] for c in combo]).reshape(family.control_intervals, n_bins, 2)
        out.append(Scenario(grid, table, edges))
    return EnumeratedFamily(tuple(out), full > family.cap, full)
