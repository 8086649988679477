"""Driver and SDE path simulation under a scenario.

Paths are simulated in batches: arrays carry a leading path axis and jump
events are stored flat with the path they belong to. :meth:`PathBatch.record`
extracts a single trajectory as a :class:`PathRecord`.

Randomness is drawn from counter-based streams keyed by ``(seed, path id,
step, slot)``. The scenario index is recorded with each path but does not
enter the key, so every scenario sees the same underlying random numbers.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import poisson

from . import rng
from .report import BlowUpError, Condition, StructureError, ValidationReport
from .scenario import Scenario
from .uncertainty import UncertaintySet, sup_jump_integral

_GRID_TOL = 1e-9


def _steps(T, dt):
    if not dt > 0:
        raise ValueError("time step must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > _GRID_TOL * max(1.0, T):
        raise ValueError(f"time step {dt} does not divide the horizon {T}")
    return n


@dataclass(frozen=True, eq=False)
class PathRecord:
    """One simulated trajectory on the time grid, plus its jump events."""

    times: np.ndarray
    X: np.ndarray
    B: np.ndarray
    qv: np.ndarray
    Y: np.ndarray | None
    event_times: np.ndarray
    event_marks: np.ndarray
    event_pre: np.ndarray
    seed_triple: tuple


@dataclass(frozen=True, eq=False)
class DriverBatch:
    """Brownian core, volatility-modulated ``B``, its covariation and jumps for ``n`` paths.

    Per-step arrays have shape ``(n, N, ...)``; ``X`` has ``N + 1`` nodes.
    Events are sorted by path, then time. ``ev_step`` is the step containing
    the event, ``ev_rank`` its order among that path's events in the step, and
    ``ev_x_pre`` the value of ``X`` just before it.
    """

    times: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    dqv: np.ndarray
    X: np.ndarray
    jump_index: np.ndarray
    vol_index: np.ndarray
    ev_path: np.ndarray
    ev_step: np.ndarray
    ev_rank: np.ndarray
    ev_time: np.ndarray
    ev_mark: np.ndarray
    ev_x_pre: np.ndarray
    seed: int
    scenario_index: int
    path_ids: np.ndarray

    @property
    def n_paths(self):
        return self.dW.shape[0]

    @property
    def n_steps(self):
        return self.dW.shape[1]

    @property
    def dim(self):
        return self.dW.shape[2]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def B(self):
        return np.concatenate([np.zeros((self.n_paths, 1, self.dim)), np.cumsum(self.dB, axis=1)], axis=1)

    @property
    def qv(self):
        zero = np.zeros((self.n_paths, 1, self.dim, self.dim))
        return np.concatenate([zero, np.cumsum(self.dqv, axis=1)], axis=1)

    @property
    def jump_counts(self):
        return np.bincount(self.ev_path, minlength=self.n_paths)

    def seed_triple(self, p):
        return (self.seed, self.scenario_index, int(self.path_ids[p]))

    def event_slice(self, p):
        lo, hi = np.searchsorted(self.ev_path, [p, p + 1])
        return slice(lo, hi)

    def record(self, p, Y=None, event_pre=None) -> PathRecord:
        sl = self.event_slice(p)
        return PathRecord(self.times, self.X[p], self.B[p], self.qv[p],
                          None if Y is None else Y[p],
                          self.ev_time[sl], self.ev_mark[sl],
                          self.ev_x_pre[sl] if event_pre is None else event_pre[sl],
                          self.seed_triple(p))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """SDE solutions ``Y`` on top of a :class:`DriverBatch`.

    ``Y_pre[e]`` is the left limit of ``Y`` at event ``e``.
    """

    driver: DriverBatch
    Y: np.ndarray
    Y_pre: np.ndarray

    def __getattr__(self, name):
        # delegate grid, driver and event arrays
        if name.startswith("__") or name == "driver":
            raise AttributeError(name)
        return getattr(self.driver, name)

    def record(self, p) -> PathRecord:
        return self.driver.record(p, Y=self.Y, event_pre=self.Y_pre)


def _zero_vec(t, x):
    return np.zeros_like(x)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficients of the jump SDE in vectorized form.

    With ``x`` of shape ``(n, d)``: ``b(t, x)`` and each ``h[(i, j)](t, x)``
    return ``(n, d)``, ``sigma(t, x)`` returns ``(n, d, d)`` and
    ``f(t, x, u)`` with ``u`` of shape ``(n, d)`` returns ``(n, d)``. In ``f``
    the time may be an array of event times of shape ``(n,)``. Only keys
    ``i <= j`` of ``h`` are stored; the ``(j, i)`` entry is the same function.
    Missing coefficients are zero.
    """

    dim: int = 1
    b: Callable | None = None
    h: dict = field(default_factory=dict)
    sigma: Callable | None = None
    f: Callable | None = None

    def __post_init__(self):
        for key in self.h:
            i, j = key
            if not (0 <= i <= j < self.dim):
                raise StructureError(f"h key {key} must satisfy 0 <= i <= j < d")

    @classmethod
    def from_1d(cls, b=None, h=None, sigma=None, f=None):
        """Wrap scalar functions of ``(t, x)`` (and ``u`` for ``f``) acting on 1-D arrays."""

        def vec(fn):
            if fn is None:
                return None
            return lambda t, x: np.broadcast_to(np.asarray(fn(t, x[:, 0]), float), x.shape[:1])[:, None]

        sig = None
        if sigma is not None:
            def sig(t, x):
                return np.broadcast_to(np.asarray(sigma(t, x[:, 0]), float), x.shape[:1])[:, None, None]
        jump = None
        if f is not None:
            def jump(t, x, u):
                return np.broadcast_to(np.asarray(f(t, x[:, 0], u[:, 0]), float), x.shape[:1])[:, None]
        return cls(dim=1, b=vec(b), h={} if h is None else {(0, 0): vec(h)}, sigma=sig, f=jump)

    @classmethod
    def pure_driver(cls, dim=1):
        """``b = 0, h = 0, sigma = I, f(t, x, u) = u`` so that ``Y - y0`` is the driver itself."""
        eye = np.eye(dim)
        return cls(dim=dim, sigma=lambda t, x: np.broadcast_to(eye, (len(x), dim, dim)),
                   f=lambda t, x, u: np.array(u, float))

    def drift(self, t, x):
        return _zero_vec(t, x) if self.b is None else np.asarray(self.b(t, x), float)

    def diffusion(self, t, x):
        if self.sigma is None:
            return np.zeros((len(x), self.dim, self.dim))
        return np.asarray(self.sigma(t, x), float)

    def jump(self, t, x, u):
        return np.zeros_like(x) if self.f is None else np.asarray(self.f(t, x, u), float)

    def h_items(self):
        """``(i, j, weight, fn)`` with weight 2 for off-diagonal keys (both orderings)."""
        return [(i, j, 1.0 if i == j else 2.0, fn) for (i, j), fn in sorted(self.h.items())]


def _poisson_tables(U: UncertaintySet, dt):
    tables = []
    for lam in U.intensities:
        mu = lam * dt
        if mu == 0:
            tables.append(np.ones(1))
            continue
        kmax = 1
        while poisson.sf(kmax, mu) > 1e-17:
            kmax += 1
        tables.append(poisson.cdf(np.arange(kmax + 1), mu))
    return tables


def simulate_driver(scn: Scenario, U: UncertaintySet, T: float, dt: float, seed: int = 0,
                    n_paths: int = 1, scenario_index: int = 0, path_ids=None) -> DriverBatch:
    """Simulate the driver for a batch of paths under ``scn``.

    Per step: ``dW ~ N(0, dt I)``, ``dB = Q dW``, ``d<B> = Q Q^T dt`` with the
    active ``Q``, a Poisson(``lambda dt``) number of jumps at uniform times in
    the step with marks drawn from the normalized active jump measure. Feedback
    scenarios read the first component of ``X`` at the start of each control
    interval.
    """
    N = _steps(T, dt)
    if abs(scn.horizon - T) > _GRID_TOL * max(1.0, T):
        raise ValueError("scenario horizon differs from T")
    ratio = scn.time_grid / dt
    if np.any(np.abs(ratio - np.round(ratio)) > 1e-6):
        raise ValueError("time step does not divide the scenario control grid")
    scn.check_indices(U)

    d = U.dim
    path_ids = np.arange(n_paths, dtype=np.int64) if path_ids is None else np.asarray(path_ids, np.int64)
    n = len(path_ids)
    times = np.linspace(0.0, T, N + 1)
    step_interval = np.round(ratio).astype(np.int64)
    interval_of_step = np.searchsorted(step_interval, np.arange(N), side="right") - 1
    vols = np.stack(U.vol_family)
    covs = U.covariances
    cdfs = _poisson_tables(U, dt)
    samplers = [nu.mark_sampler() for nu in U.jump_family]
    sqdt = np.sqrt(dt)
    comp = np.arange(d)

    dW = np.empty((n, N, d))
    dB = np.empty((n, N, d))
    dqv = np.empty((n, N, d, d))
    X = np.empty((n, N + 1, d))
    X[:, 0] = 0.0
    kk_all = np.empty((n, N), np.int64)
    mm_all = np.empty((n, N), np.int64)
    ev = {"path": [], "step": [], "rank": [], "time": [], "mark": [], "pre": []}
    kk = mm = None
    for i in range(N):
        ci = interval_of_step[i]
        if i == 0 or ci != interval_of_step[i - 1]:
            kk, mm = scn.select(ci, X[:, i])
        kk_all[:, i], mm_all[:, i] = kk, mm
        w = sqdt * rng.normal(seed, "dW", path_ids[:, None], i, comp[None, :])
        dW[:, i] = w
        dB[:, i] = np.einsum("nij,nj->ni", vols[mm], w)
        dqv[:, i] = covs[mm] * dt
        x = X[:, i] + dB[:, i]

        u = rng.uniform(seed, "jump_count", path_ids, i)
        counts = np.zeros(n, np.int64)
        for k in np.unique(kk):
            sel = kk == k
            counts[sel] = np.searchsorted(cdfs[k], u[sel], side="right")
        active = np.flatnonzero(counts)
        if len(active):
            kmax = counts[active].max()
            slots = np.arange(kmax)
            pid = path_ids[active][:, None]
            tau = rng.uniform(seed, "jump_time", pid, i, slots[None, :])
            tau = np.where(slots[None, :] < counts[active][:, None], tau, np.inf)
            order = np.argsort(tau, axis=1, kind="stable")
            tau = np.take_along_axis(tau, order, axis=1)
            umark = rng.uniform(seed, "jump_mark", pid, i, slots[None, :])
            umark = np.take_along_axis(umark, order, axis=1)
            marks = np.empty((len(active), kmax, d))
            ka = kk[active]
            for k in np.unique(ka):
                sel = ka == k
                nodes, cdf = samplers[k]
                if U.jump_family[k].is_atomic:
                    idx = np.minimum(np.searchsorted(cdf, umark[sel], side="right"), len(nodes) - 1)
                    marks[sel] = nodes[idx]
                else:
                    marks[sel] = np.interp(umark[sel], cdf, nodes)[..., None]
            for r in range(kmax):
                live = np.flatnonzero(np.isfinite(tau[:, r]))
                p = active[live]
                ev["path"].append(p)
                ev["step"].append(np.full(len(p), i))
                ev["rank"].append(np.full(len(p), r))
                ev["time"].append(times[i] + dt * tau[live, r])
                ev["mark"].append(marks[live, r])
                ev["pre"].append(x[p].copy())
                x[p] = x[p] + marks[live, r]
        X[:, i + 1] = x

    if ev["path"]:
        cat = {key: np.concatenate(val) for key, val in ev.items()}
    else:
        cat = {"path": np.zeros(0, np.int64), "step": np.zeros(0, np.int64), "rank": np.zeros(0, np.int64),
               "time": np.zeros(0), "mark": np.zeros((0, d)), "pre": np.zeros((0, d))}
    order = np.lexsort((cat["rank"], cat["step"], cat["path"]))
    return DriverBatch(times, dW, dB, dqv, X, kk_all, mm_all,
                       cat["path"][order], cat["step"][order], cat["rank"][order],
                       cat["time"][order], cat["mark"][order], cat["pre"][order],
                       int(seed), int(scenario_index), path_ids)


def record_as_batch(rec: PathRecord) -> PathBatch:
    """Rebuild a one-path batch from a record; ``dW`` is unavailable and left as NaN."""
    n_ev, d = rec.event_marks.shape
    times = rec.times
    step = np.clip(np.searchsorted(times, rec.event_times, side="left") - 1, 0, len(times) - 2)
    rank = np.zeros(n_ev, np.int64)
    for e in range(1, n_ev):
        rank[e] = rank[e - 1] + 1 if step[e] == step[e - 1] else 0
    X = rec.X[None]
    driver = DriverBatch(times, np.full((1, len(times) - 1, d), np.nan), np.diff(rec.B, axis=0)[None],
                         np.diff(rec.qv, axis=0)[None], X, np.zeros((1, len(times) - 1), np.int64),
                         np.zeros((1, len(times) - 1), np.int64), np.zeros(n_ev, np.int64), step, rank,
                         rec.event_times, rec.event_marks, rec.event_pre, rec.seed_triple[0],
                         rec.seed_triple[1], np.array([rec.seed_triple[2]]))
    Y = X if rec.Y is None else rec.Y[None]
    return PathBatch(driver, Y, rec.event_pre)


def coarsen(driver: DriverBatch, factor: int) -> DriverBatch:
    """Aggregate ``factor`` consecutive steps; the coarse path is the same realization."""
    if factor == 1:
        return driver
    n, N, d = driver.dW.shape
    if N % factor:
        raise ValueError("factor must divide the number of steps")
    M = N // factor

    def agg(a):
        return a.reshape((n, M, factor) + a.shape[2:]).sum(axis=2)

    step = driver.ev_step // factor
    order = np.lexsort((driver.ev_time, step, driver.ev_path))
    step = step[order]
    path = driver.ev_path[order]
    # rank within (path, coarse step)
    group_start = np.r_[True, (path[1:] != path[:-1]) | (step[1:] != step[:-1])] if len(path) else np.zeros(0, bool)
    idx = np.arange(len(path))
    first = np.maximum.accumulate(np.where(group_start, idx, 0)) if len(path) else idx
    rank = idx - first
    return DriverBatch(driver.times[::factor], agg(driver.dW), agg(driver.dB), agg(driver.dqv),
                       driver.X[:, ::factor], driver.jump_index[:, ::factor], driver.vol_index[:, ::factor],
                       path, step, rank, driver.ev_time[order], driver.ev_mark[order],
                       driver.ev_x_pre[order], driver.seed, driver.scenario_index, driver.path_ids)


def pure_driver_batch(driver: DriverBatch, y0=0.0) -> PathBatch:
    """``Y = y0 + X`` without stepping; equals :func:`simulate_sde` with pure-driver coefficients at ``y0 = 0``."""
    y0 = np.broadcast_to(np.asarray(y0, float), (driver.dim,))
    if not np.any(y0):
        return PathBatch(driver, driver.X, driver.ev_x_pre)
    return PathBatch(driver, driver.X + y0, driver.ev_x_pre + y0)


def simulate_sde(c: CoefficientSet, driver: DriverBatch, y0) -> PathBatch:
    """Explicit Euler scheme driven by ``driver``.

    On each step the continuous part ``b dt + sum h_ij d<B^i,B^j> + sigma dB``
    is applied at the left node, then the step's jumps in time order, each as
    ``Y <- Y + f(s, Y_{s-}, u)``.
    """
    if c.dim != driver.dim:
        raise StructureError(f"coefficients have dimension {c.dim}, driver has {driver.dim}")
    n, N, d = driver.dW.shape
    y0 = np.broadcast_to(np.asarray(y0, float), (d,))
    Y = np.empty((n, N + 1, d))
    Y[:, 0] = y0
    Y_pre = np.empty((len(driver.ev_path), d))
    order = np.lexsort((driver.ev_rank, driver.ev_step))
    step_sorted = driver.ev_step[order]
    bounds = np.searchsorted(step_sorted, np.arange(N + 1))
    times, dt = driver.times, driver.dt
    h_items = c.h_items()
    for i in range(N):
        t = times[i]
        y = Y[:, i]
        inc = c.drift(t, y) * dt
        for a, b, weight, fn in h_items:
            inc = inc + weight * np.asarray(fn(t, y), float) * driver.dqv[:, i, a, b][:, None]
        if c.sigma is not None:
            inc = inc + np.einsum("nij,nj->ni", c.diffusion(t, y), driver.dB[:, i])
        ynew = y + inc
        evs = order[bounds[i]:bounds[i + 1]]
        if len(evs):
            ranks = driver.ev_rank[evs]
            for r in range(ranks.max() + 1):
                e = evs[ranks == r]
                p = driver.ev_path[e]
                Y_pre[e] = ynew[p]
                ynew[p] = ynew[p] + c.jump(driver.ev_time[e], ynew[p], driver.ev_mark[e])
        if not np.all(np.isfinite(ynew)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(ynew), axis=1))[0])
            raise BlowUpError(f"state became non-finite by t={times[i + 1]:.6g} on path {bad}",
                              time=float(times[i + 1]), seed_triple=driver.seed_triple(bad))
        Y[:, i + 1] = ynew
    return PathBatch(driver, Y, Y_pre)


def _events_of(p):
    if isinstance(p, PathRecord):
        return np.zeros(len(p.event_times), np.int64), p.event_times, p.event_marks, 1
    return p.ev_path, p.ev_time, p.ev_mark, p.n_paths


def random_measure_sum(p, f, window=None):
    """Sum of ``f(s, kappa_s)`` over jump events with ``s`` in the window ``(lo, hi]``.

    ``f`` is vectorized over events: times ``(E,)`` and marks ``(E, d)``.
    Returns one value per path, or a float for a :class:`PathRecord`.
    """
    path, times, marks, n = _events_of(p)
    lo, hi = (-np.inf, np.inf) if window is None else window
    sel = (times > lo) & (times <= hi)
    out = np.zeros(n)
    if np.any(sel):
        vals = np.asarray(f(times[sel], marks[sel]), float)
        out = np.bincount(path[sel], weights=np.broadcast_to(vals, times[sel].shape), minlength=n)
    return float(out[0]) if isinstance(p, PathRecord) else out


def validate_coefficients(c: CoefficientSet, U: UncertaintySet | None = None, probes: int = 256,
                          box=(-2.0, 2.0), T: float = 1.0, seed: int = 0) -> ValidationReport:
    """Empirical Lipschitz (H1 with linear modulus) and growth-at-zero (H2) constants.

    Ratios are taken on random probe pairs in ``box`` and on pairs at
    separations shrinking from 1e-1 to 1e-6 around the origin and random
    centres; a ratio that keeps growing as the separation shrinks is reported
    as non-Lipschitz.
    """
    d = c.dim
    lo, hi = box
    ids = np.arange(probes)
    t = T * rng.uniform(seed, "probe", ids, 0)
    x = lo + (hi - lo) * rng.uniform(seed, "probe", ids[:, None], 1, np.arange(d)[None, :])
    y = lo + (hi - lo) * rng.uniform(seed, "probe", ids[:, None], 2, np.arange(d)[None, :])

    def sq_diff(t, x, y):
        out = np.sum((c.drift(t, x) - c.drift(t, y)) ** 2, axis=1)
        for _, _, _, fn in c.h_items():
            out += np.sum((np.asarray(fn(t, x), float) - np.asarray(fn(t, y), float)) ** 2, axis=1)
        out += np.sum((c.diffusion(t, x) - c.diffusion(t, y)) ** 2, axis=(1, 2))
        if U is not None and c.f is not None:
            def phi(u):
                return np.stack([np.sum((c.jump(t, x, np.broadcast_to(ui, x.shape))
                                         - c.jump(t, y, np.broadcast_to(ui, x.shape))) ** 2, axis=1)
                                 for ui in u]) if len(u) else np.zeros((0, len(x)))
            out += np.asarray(sup_jump_integral(phi, U))
        return out

    def ratio(t, x, y):
        gap = np.sum((x - y) ** 2, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return sq_diff(t, x, y) / gap

    rand_ratio = ratio(t, x, y)
    n_centres = min(probes, 16)
    centres = np.vstack([np.zeros((1, d)), x[:n_centres - 1]])
    tc = np.concatenate([[0.0], t[:n_centres - 1]])
    direction = np.ones(d) / np.sqrt(d)
    local = []
    for delta in 10.0 ** -np.arange(1, 7):
        local.append(ratio(tc, centres, centres + delta * direction))
    local = np.array(local)
    growth = local[-1] / np.maximum(local[0], 1e-300)
    lipschitz_like = np.all(np.isfinite(local)) and not np.any((growth > 100.0) & (local[-1] > 1.0))

    C1 = float(np.nanmax(np.concatenate([rand_ratio, local.ravel()])))
    zero = np.zeros((probes, d))
    C2_vals = np.sum(c.drift(t, zero) ** 2, axis=1)
    for _, _, _, fn in c.h_items():
        C2_vals += np.sum(np.asarray(fn(t, zero), float) ** 2, axis=1)
    C2_vals += np.sum(c.diffusion(t, zero) ** 2, axis=(1, 2))
    if U is not None and c.f is not None:
        def phi0(u):
            return np.stack([np.sum(c.jump(t, zero, np.broadcast_to(ui, zero.shape)) ** 2, axis=1) for ui in u]) \
                if len(u) else np.zeros((0, probes))
        C2_vals += np.asarray(sup_jump_integral(phi0, U))
    C2 = float(np.max(C2_vals))

    detail = "max sampled ratio of squared increments" if lipschitz_like else \
        "non-Lipschitz: ratio grows without bound as probe pairs approach each other"
    return ValidationReport([
        Condition("H1_lipschitz", bool(lipschitz_like and np.isfinite(C1)), C1, detail),
        Condition("H2_growth", bool(np.isfinite(C2)), C2, "max over probe times of squared coefficients at x=0"),
    ])


def write_path_csv(batch, p, directory, stem=None):
    """Write path ``p`` as ``<stem>.csv`` (t, X, B, <B>, Y) and ``<stem>_events.csv``."""
    os.makedirs(directory, exist_ok=True)
    rec = batch.record(p)
    d = rec.X.shape[1]
    stem = stem or f"path_{rec.seed_triple[2]}"
    header = ["t"] + [f"X{i+1}" for i in range(d)] + [f"B{i+1}" for i in range(d)] \
        + [f"QV{i+1}{j+1}" for i in range(d) for j in range(d)]
    if rec.Y is not None:
        header += [f"Y{i+1}" for i in range(d)]
    main = os.path.join(directory, f"{stem}.csv")
    with open(main, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n, t in enumerate(rec.times):
            row = [t, *rec.X[n], *rec.B[n], *rec.qv[n].ravel()]
            if rec.Y is not None:
                row += list(rec.Y[n])
            w.writerow([repr(float(v)) for v in row])
    events = os.path.join(directory, f"{stem}_events.csv")
    with open(events, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"u{i+1}" for i in range(d)])
        for t, u in zip(rec.event_times, rec.event_marks):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in u])
    return main, events
