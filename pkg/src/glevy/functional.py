"""The additive functional along simulated paths and its path-independence residual."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .paths import PathBatch, PathRecord, record_as_batch
from .uncertainty import G_of, UncertaintySet, jump_integrals


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """Constants ``alpha, beta, gamma`` and integrands ``g1, g2, g3``.

    Vectorized over ``x`` of shape ``(n, d)``: ``g1`` is a dict of functions
    keyed ``(i, j)`` with ``i <= j`` returning ``(n,)`` (missing keys are
    zero, ``(j, i)`` mirrors ``(i, j)``), ``g2(t, x)`` returns ``(n, d)`` and
    ``g3(t, x, u)`` with ``u`` of shape ``(n, d)`` returns ``(n,)``. The time
    argument of ``g3`` may be an array of event times.
    """

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    g1: dict | None = None
    g2: Callable | None = None
    g3: Callable | None = None
    dim: int = 1

    def __post_init__(self):
        for (i, j) in (self.g1 or {}):
            if not (0 <= i <= j < self.dim):
                raise ValueError(f"g1 key {(i, j)} must satisfy 0 <= i <= j < d")

    @classmethod
    def from_1d(cls, alpha=0.0, beta=0.0, gamma=0.0, g1=None, g2=None, g3=None):
        """Wrap scalar functions of ``(t, x)`` / ``(t, x, u)`` acting on 1-D arrays."""

        def bc(val, x):
            return np.broadcast_to(np.asarray(val, float), x.shape[:1])

        return cls(
            alpha, beta, gamma,
            None if g1 is None else {(0, 0): lambda t, x: bc(g1(t, x[:, 0]), x)},
            None if g2 is None else (lambda t, x: bc(g2(t, x[:, 0]), x)[:, None]),
            None if g3 is None else (lambda t, x, u: bc(g3(t, x[:, 0], u[:, 0]), x)),
            dim=1,
        )

    def bumped(self, g1=0.0, g2=0.0, g3=0.0) -> "FunctionalSpec":
        """Copy with constants added to every entry of ``g1``, ``g2`` or ``g3``."""
        d = self.dim
        new_g1 = dict(self.g1 or {})
        if g1:
            for i in range(d):
                for j in range(i, d):
                    base = new_g1.get((i, j))
                    new_g1[(i, j)] = (lambda t, x, f=base: (0.0 if f is None else f(t, x)) + g1)
        g2_fn = self.g2
        if g2:
            g2_fn = lambda t, x, f=self.g2: (np.zeros_like(x) if f is None else f(t, x)) + g2
        g3_fn = self.g3
        if g3:
            g3_fn = lambda t, x, u, f=self.g3: (0.0 if f is None else f(t, x, u)) + g3
        return FunctionalSpec(self.alpha, self.beta, self.gamma, new_g1 or None, g2_fn, g3_fn, d)

    def g1_matrix(self, t, x):
        """``g1`` as a stack of symmetric matrices, shape ``(n, d, d)``."""
        n, d = x.shape
        out = np.zeros((n, d, d))
        for (i, j), fn in (self.g1 or {}).items():
            val = np.broadcast_to(np.asarray(fn(t, x), float), (n,))
            out[:, i, j] = val
            out[:, j, i] = val
        return out

    def g2_vector(self, t, x):
        if self.g2 is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.g2(t, x), float), x.shape)

    def g3_value(self, t, x, u):
        if self.g3 is None:
            return np.zeros(len(x))
        return np.broadcast_to(np.asarray(self.g3(t, x, u), float), (len(x),))

    def sup_compensator(self, t, x, U: UncertaintySet):
        """``sup_nu int gamma g3(t, x, u) nu(du)`` per state, with gamma inside the sup."""
        if self.g3 is None:
            return np.zeros(len(x))

        def phi(nodes):
            return np.stack([self.gamma * self.g3_value(t, x, np.broadcast_to(u, x.shape)) for u in nodes]) \
                if len(nodes) else np.zeros((0, len(x)))

        return jump_integrals(phi, U).max(axis=0)

    def compensator(self, t, x, nu):
        """``int g3(t, x, u) nu(du)`` per state for a single measure."""
        if self.g3 is None:
            return np.zeros(len(x))
        nodes, w = nu.nodes_and_weights()
        out = np.zeros(len(x))
        for u, wk in zip(nodes, w):
            out += wk * self.g3_value(t, x, np.broadcast_to(u, x.shape))
        return out


def _window(batch, window):
    times = batch.times
    if window is None:
        return 0, len(times) - 1
    s, t = window
    lo, hi = np.searchsorted(times, [s - 1e-12, t - 1e-12])
    if lo >= len(times) or hi >= len(times) or abs(times[lo] - s) > 1e-9 or abs(times[hi] - t) > 1e-9:
        raise ValueError("window endpoints must be grid nodes")
    if hi < lo:
        raise ValueError("window must satisfy s <= t")
    return int(lo), int(hi)


def _check(name, vals):
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError(f"term {name!r} of the functional is not finite")
    return vals


def functional_terms(spec: FunctionalSpec, batch: PathBatch, U: UncertaintySet, window=None) -> dict:
    """The five terms of the additive functional, each of shape ``(n,)``.

    Keys: ``"G"`` (alpha G(g1) dr), ``"covariation"`` (beta g1 : d<B>),
    ``"stochastic"`` (<g2, dB>), ``"jumps"`` (sum of g3 over events) and
    ``"compensator"`` (sup over nu of gamma g3, dr). Left-node evaluation
    throughout; jump terms use the pre-jump state.
    """
    lo, hi = _window(batch, window)
    n = batch.n_paths
    dt = batch.dt
    terms = {k: np.zeros(n) for k in ("G", "covariation", "stochastic", "jumps", "compensator")}
    for i in range(lo, hi):
        t = batch.times[i]
        y = batch.Y[:, i]
        if spec.g1:
            g1 = spec.g1_matrix(t, y)
            if spec.alpha:
                terms["G"] += spec.alpha * G_of(g1, U) * dt
            if spec.beta:
                terms["covariation"] += spec.beta * np.einsum("nij,nij->n", g1, batch.dqv[:, i])
        if spec.g2 is not None:
            terms["stochastic"] += np.einsum("ni,ni->n", spec.g2_vector(t, y), batch.dB[:, i])
        if spec.g3 is not None and spec.gamma:
            terms["compensator"] += spec.sup_compensator(t, y, U) * dt
    if spec.g3 is not None:
        t0, t1 = batch.times[lo], batch.times[hi]
        sel = (batch.ev_time > t0) & (batch.ev_time <= t1)
        if np.any(sel):
            vals = spec.g3_value(batch.ev_time[sel], batch.Y_pre[sel], batch.ev_mark[sel])
            terms["jumps"] = np.bincount(batch.ev_path[sel], weights=vals, minlength=n)
    for name, vals in terms.items():
        _check(name, vals)
    return terms


def evaluate_functional(spec: FunctionalSpec, batch: PathBatch, U: UncertaintySet, window=None):
    """``F_{s,t}`` per path for the window ``(s, t]`` (whole horizon by default).

    A :class:`~glevy.paths.PathRecord` gives a float.
    """
    if isinstance(batch, PathRecord):
        return float(evaluate_functional(spec, record_as_batch(batch), U, window)[0])
    terms = functional_terms(spec, batch, U, window)
    return terms["G"] + terms["covariation"] + terms["stochastic"] + terms["jumps"] + terms["compensator"]


def classical_functional(spec: FunctionalSpec, batch: PathBatch, nu, window=None):
    """The same functional written in compensated classical form.

    Valid when the uncertainty set is a single jump measure ``nu`` and
    ``Q = I``: the G and covariation terms merge into ``(alpha/2 + beta) tr g1 dr``
    and the jump sum splits into the compensated sum plus ``(1 + gamma)`` times
    the compensator.
    """
    lo, hi = _window(batch, window)
    n, dt = batch.n_paths, batch.dt
    trace = np.zeros(n)
    stoch = np.zeros(n)
    comp = np.zeros(n)
    for i in range(lo, hi):
        t = batch.times[i]
        y = batch.Y[:, i]
        if spec.g1:
            trace += (spec.alpha / 2 + spec.beta) * np.trace(spec.g1_matrix(t, y), axis1=1, axis2=2) * dt
        if spec.g2 is not None:
            stoch += np.einsum("ni,ni->n", spec.g2_vector(t, y), batch.dB[:, i])
        if spec.g3 is not None:
            comp += spec.compensator(t, y, nu) * dt
    jumps = np.zeros(n)
    if spec.g3 is not None:
        t0, t1 = batch.times[lo], batch.times[hi]
        sel = (batch.ev_time > t0) & (batch.ev_time <= t1)
        if np.any(sel):
            vals = spec.g3_value(batch.ev_time[sel], batch.Y_pre[sel], batch.ev_mark[sel])
            jumps = np.bincount(batch.ev_path[sel], weights=vals, minlength=n)
    compensated = jumps - comp
    return trace + stoch + compensated + (1 + spec.gamma) * comp


@dataclass
class ResidualReport:
    max_residual: float
    residuals: np.ndarray
    F: np.ndarray
    dV: np.ndarray
    seed_triples: list

    def write_csv(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "seed", "scenario", "path_id", "F", "dV", "residual"])
            for p, (trip, F, dV, r) in enumerate(zip(self.seed_triples, self.F, self.dV, self.residuals)):
                w.writerow([p, *trip, repr(float(F)), repr(float(dV)), repr(float(r))])


def path_independence_residual(spec: FunctionalSpec, V, batch: PathBatch, U: UncertaintySet,
                               window=None) -> ResidualReport:
    """``|F_{s,t} - (V(t, Y_t) - V(s, Y_s))|`` per path.

    ``V`` is a :class:`~glevy.pide.PideWitness` or any callable ``V(t, x)``
    with ``x`` of shape ``(n, d)``.
    """
    lo, hi = _window(batch, window)
    F = evaluate_functional(spec, batch, U, window)
    value = V.value if hasattr(V, "value") else V
    dV = np.asarray(value(batch.times[hi], batch.Y[:, hi]), float) - np.asarray(value(batch.times[lo], batch.Y[:, lo]), float)
    res = np.abs(F - dV)
    trips = [batch.seed_triple(p) for p in range(batch.n_paths)]
    return ResidualReport(float(res.max()) if len(res) else 0.0, res, F, dV, trips)
