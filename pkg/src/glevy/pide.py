"""Characterization machinery for path independence.

* :func:`pide_system_residual` evaluates the four equations linking a candidate
  ``V`` to the functional's integrands and the SDE coefficients.
* :func:`manufacture_from_V` solves those equations for ``g1, g2, g3`` and the
  drift ``b`` given ``V``.
* :func:`special_case_V` / :func:`special_case_g` build the explicit
  one-dimensional solution for ``alpha = 1, beta = gamma = 0``.
* :func:`solve_viscosity_pide` is a monotone explicit scheme for
  ``v_t = sup over (nu, Q) of [int (v(x+u) - v(x)) nu(du) + q^2 v_xx / 2]``.
* :func:`decomposition_check` simulates a one-dimensional Ito-Levy process
  and decides whether it vanishes identically.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .functional import FunctionalSpec
from .paths import CoefficientSet, simulate_driver
from .uncertainty import G_inverse_1d, G_of, UncertaintySet, jump_integrals


def _as_states(x, dim):
    x = np.asarray(x, float)
    if x.ndim == 1 and dim == 1:
        return x[:, None]
    return x.reshape(-1, dim)


@dataclass(frozen=True, eq=False)
class PideWitness:
    """A candidate ``V(t, x)`` with derivative access.

    ``value(t, x)`` takes states ``(n, d)`` and returns ``(n,)``; ``t`` may be
    a scalar or an array of shape ``(n,)``. Optional closed forms
    ``time_deriv``, ``grad`` (``(n, d)``) and ``hess`` (``(n, d, d)``) replace
    the central-difference defaults.
    """

    value: Callable
    dim: int = 1
    time_deriv: Callable | None = None
    grad: Callable | None = None
    hess: Callable | None = None
    t_step: float = 1e-5
    x_step: float = 1e-4

    @classmethod
    def from_1d(cls, V, Vt=None, Vx=None, Vxx=None, **kwargs):
        """Wrap scalar functions of ``(t, x)`` acting on 1-D arrays."""

        def wrap(fn, shape):
            if fn is None:
                return None
            return lambda t, x: np.broadcast_to(np.asarray(fn(t, x[:, 0]), float), x.shape[:1]).reshape((-1,) + shape)

        return cls(wrap(V, ()), 1, wrap(Vt, ()), wrap(Vx, (1,)), wrap(Vxx, (1, 1)), **kwargs)

    def __call__(self, t, x):
        return self.value(t, x)

    def dV_dt(self, t, x):
        if self.time_deriv is not None:
            return np.asarray(self.time_deriv(t, x), float)
        h = self.t_step
        t = np.asarray(t, float)
        return (np.asarray(self.value(t + h, x)) - np.asarray(self.value(t - h, x))) / (2 * h)

    def dV_dx(self, t, x):
        if self.grad is not None:
            return np.asarray(self.grad(t, x), float)
        h = self.x_step
        out = np.empty(x.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[:, i] = (self.value(t, x + e) - self.value(t, x - e)) / (2 * h)
        return out

    def d2V_dx2(self, t, x):
        if self.hess is not None:
            return np.asarray(self.hess(t, x), float)
        h = self.x_step
        d = self.dim
        out = np.empty((len(x), d, d))
        eye = np.eye(d) * h
        v0 = self.value(t, x)
        for i in range(d):
            out[:, i, i] = (self.value(t, x + 2 * eye[i]) - 2 * v0 + self.value(t, x - 2 * eye[i])) / (4 * h * h)
            for j in range(i + 1, d):
                ei, ej = eye[i], eye[j]
                out[:, i, j] = out[:, j, i] = (self.value(t, x + ei + ej) - self.value(t, x + ei - ej)
                                               - self.value(t, x - ei + ej) + self.value(t, x - ei - ej)) / (4 * h * h)
        return out


def _u_probes(U: UncertaintySet):
    nodes = [nu.nodes_and_weights()[0] for nu in U.jump_family]
    nodes = [n for n in nodes if len(n)]
    if not nodes:
        return np.zeros((0, U.dim))
    return np.unique(np.concatenate(nodes), axis=0)


def pide_system_residual(V: PideWitness, spec: FunctionalSpec, c: CoefficientSet, U: UncertaintySet,
                         t, x, u=None) -> dict:
    """Residuals of the four equations at probes ``(t_p, x_p)`` and marks ``u``.

    Returns ``{"drift": (P,), "covariation": (P, d, d), "diffusion": (P, d),
    "jump": (P, K)}``; ``u`` defaults to every node of the jump family.
    """
    d = U.dim
    x = _as_states(x, d)
    P = len(x)
    t = np.broadcast_to(np.asarray(t, float), (P,))
    u = _u_probes(U) if u is None else np.asarray(u, float).reshape(-1, d)

    Vt = V.dV_dt(t, x)
    Vx = V.dV_dx(t, x)
    Vxx = V.d2V_dx2(t, x)
    sig = c.diffusion(t, x)
    g1 = spec.g1_matrix(t, x)

    drift = Vt + np.einsum("pi,pi->p", Vx, c.drift(t, x)) - spec.alpha * G_of(g1, U) \
        - spec.sup_compensator(t, x, U)

    cov = 0.5 * np.einsum("pki,pkl,plj->pij", sig, Vxx, sig) - spec.beta * g1
    for (i, j), fn in c.h.items():
        val = np.einsum("pk,pk->p", Vx, np.asarray(fn(t, x), float))
        cov[:, i, j] += val
        if i != j:
            cov[:, j, i] += val

    diffusion = np.einsum("pki,pk->pi", sig, Vx) - spec.g2_vector(t, x)

    jump = np.empty((P, len(u)))
    v0 = np.asarray(V.value(t, x), float)
    for k, uk in enumerate(u):
        ub = np.broadcast_to(uk, x.shape)
        jump[:, k] = np.asarray(V.value(t, x + c.jump(t, x, ub)), float) - v0 - spec.g3_value(t, x, ub)

    out = {"drift": drift, "covariation": cov, "diffusion": diffusion, "jump": jump}
    for name, arr in out.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"residual {name!r} is not finite at some probe")
    return out


def max_residuals(res: dict) -> dict:
    return {k: float(np.max(np.abs(v))) if np.size(v) else 0.0 for k, v in res.items()}


def _probe_box(box, dim, n_t=21, n_x=201, seed=0):
    (t0, t1), (lo, hi) = box
    ts = np.linspace(t0, t1, n_t)
    if dim == 1:
        xs = np.linspace(lo, hi, n_x)[:, None]
        tt, xx = np.meshgrid(ts, np.arange(len(xs)), indexing="ij")
        return tt.ravel(), xs[xx.ravel()]
    r = np.random.default_rng(seed)
    m = n_t * n_x
    return r.uniform(t0, t1, m), r.uniform(lo, hi, (m, dim))


def manufacture_from_V(V: PideWitness, c: CoefficientSet, U: UncertaintySet, alpha: float, beta: float,
                       gamma: float, box=((0.0, 1.0), (-4.0, 4.0)), floor: float = 1e-3):
    """Solve the four equations for ``g1, g2, g3`` and the drift given ``V``.

    ``c`` supplies ``sigma``, ``h`` and ``f``; its drift is ignored. Returns
    ``(spec, coefficients)`` where ``coefficients`` is ``c`` with the recovered
    drift ``b = R grad V / |grad V|^2``, ``R = alpha G(g1) + sup_nu int gamma g3
    - dV/dt`` (the ordinary quotient in one dimension). Raises ``ValueError``
    if ``beta == 0`` or ``|grad V|`` drops below ``floor`` on ``box``.
    """
    if beta == 0:
        raise ValueError("beta must be nonzero to recover g1")
    d = U.dim
    tp, xp = _probe_box(box, d)
    grad = V.dV_dx(tp, xp)
    low = float(np.linalg.norm(grad, axis=1).min())
    if d == 1:
        # probes are ordered along x for each time, so a sign change brackets a zero
        g = grad[:, 0].reshape(-1, len(np.unique(xp)))
        if np.any(np.sign(g[:, 1:]) * np.sign(g[:, :-1]) < 0):
            low = 0.0
    if low < floor:
        raise ValueError(f"|grad V| falls to {low:.3g} on the box, below the floor {floor}")

    def g1_entry(i, j):
        def fn(t, x):
            sig = c.diffusion(t, x)
            val = 0.5 * np.einsum("pk,pkl,pl->p", sig[:, :, i], V.d2V_dx2(t, x), sig[:, :, j])
            hij = c.h.get((i, j))
            if hij is not None:
                val = val + np.einsum("pk,pk->p", V.dV_dx(t, x), np.asarray(hij(t, x), float))
            return val / beta
        return fn

    g1 = {(i, j): g1_entry(i, j) for i in range(d) for j in range(i, d)}

    def g2(t, x):
        return np.einsum("pki,pk->pi", c.diffusion(t, x), V.dV_dx(t, x))

    def g3(t, x, u):
        return np.asarray(V.value(t, x + c.jump(t, x, u)), float) - np.asarray(V.value(t, x), float)

    spec = FunctionalSpec(alpha, beta, gamma, g1, g2, g3, dim=d)

    def b(t, x):
        t = np.asarray(t, float)
        R = alpha * G_of(spec.g1_matrix(t, x), U) + spec.sup_compensator(t, x, U) - V.dV_dt(t, x)
        grad = V.dV_dx(t, x)
        return grad * (R / np.sum(grad * grad, axis=1))[:, None]

    return spec, CoefficientSet(dim=d, b=b, h=dict(c.h), sigma=c.sigma, f=c.f)


@dataclass(frozen=True, eq=False)
class SpecialCaseWitness(PideWitness):
    """Explicit solution of ``V_x h + V_xx sigma^2 / 2 = 0`` in one dimension.

    ``V(t, x) = V0(t) + V0'(t) * int_0^x E(t, z) dz`` with
    ``E(t, z) = exp(-2 int_0^z h / sigma^2 dv)``, both integrals by adaptive
    quadrature. ``slope0`` is the boundary slope ``V_x(t, 0)``.
    """

    h_fn: Callable | None = None
    sigma_fn: Callable | None = None
    level0: Callable | None = None
    slope0: Callable | None = None
    tol: float = 1e-10

    def kernel(self, t, z):
        """``E(t, z)`` for scalar ``t`` and ``z``."""
        inner, _ = integrate.quad(lambda v: self.h_fn(t, v) / self.sigma_fn(t, v) ** 2, 0.0, z,
                                  epsabs=1e-13, epsrel=1e-13, limit=200)
        return np.exp(-2.0 * inner)

    def kernel_integral(self, t, a, b):
        """``int_a^b E(t, z) dz`` for scalars."""
        if a == b:
            return 0.0
        val, _ = integrate.quad(lambda z: self.kernel(t, z), a, b, epsabs=self.tol, epsrel=self.tol, limit=200)
        return val


def _pointwise(fn):
    def wrapped(t, x):
        x = np.asarray(x, float)
        flat = x[:, 0]
        tt = np.broadcast_to(np.asarray(t, float), flat.shape)
        return np.array([fn(float(a), float(b)) for a, b in zip(tt, flat)])
    return wrapped


def special_case_V(h, sigma, level0, slope0, box=(-4.0, 4.0), T: float = 1.0, tol: float = 1e-10) -> SpecialCaseWitness:
    """Build the explicit witness from boundary data ``V(t, 0)`` and ``V_x(t, 0)``.

    ``h``, ``sigma``, ``level0`` and ``slope0`` are scalar functions. The
    gradient and Hessian are exact given the kernel; the time derivative is a
    central difference. Raises ``ValueError`` if ``sigma`` vanishes on ``box``.
    """
    xs = np.linspace(box[0], box[1], 401)
    for tt in np.linspace(0.0, T, 11):
        if np.min(np.abs([sigma(tt, v) for v in xs])) < 1e-12:
            raise ValueError("sigma vanishes on the box; the explicit solution needs sigma != 0")

    holder = {}

    def V_point(t, x):
        w = holder["w"]
        return level0(t) + slope0(t) * w.kernel_integral(t, 0.0, x)

    def grad_point(t, x):
        return slope0(t) * holder["w"].kernel(t, x)

    value = _pointwise(V_point)
    grad_scalar = _pointwise(grad_point)

    def grad(t, x):
        return grad_scalar(t, x)[:, None]

    def hess(t, x):
        g = grad_scalar(t, x)
        flat = np.asarray(x, float)[:, 0]
        tt = np.broadcast_to(np.asarray(t, float), flat.shape)
        ratio = np.array([h(a, b) / sigma(a, b) ** 2 for a, b in zip(tt, flat)])
        return (-2.0 * ratio * g)[:, None, None]

    w = SpecialCaseWitness(value=value, dim=1, grad=grad, hess=hess, h_fn=h, sigma_fn=sigma,
                           level0=level0, slope0=slope0, tol=tol)
    holder["w"] = w
    return w


def special_case_g(V: SpecialCaseWitness, b, sigma, h, f, U: UncertaintySet) -> FunctionalSpec:
    """Integrands that make the functional path independent for ``alpha=1, beta=gamma=0``.

    ``g1 = G^{-1}(V_t + b V_x)``, ``g2 = sigma V_x`` and
    ``g3 = V_x(t, 0) int_x^{x + f} E``. ``b``, ``sigma``, ``h`` and ``f`` are
    scalar functions (``f`` of ``(t, x, u)``). Needs an elliptic one-dimensional set.
    """
    if U.dim != 1 or not U.elliptic:
        raise ValueError("G is invertible only for an elliptic one-dimensional set")

    def g1(t, x):
        flat = x[:, 0]
        tt = np.broadcast_to(np.asarray(t, float), flat.shape)
        drift = np.array([b(a, z) for a, z in zip(tt, flat)])
        return G_inverse_1d(V.dV_dt(t, x) + drift * V.dV_dx(t, x)[:, 0], U)

    def g2(t, x):
        flat = x[:, 0]
        tt = np.broadcast_to(np.asarray(t, float), flat.shape)
        s = np.array([sigma(a, z) for a, z in zip(tt, flat)])
        return (s * V.dV_dx(t, x)[:, 0])[:, None]

    def g3(t, x, u):
        flat, uu = x[:, 0], u[:, 0]
        tt = np.broadcast_to(np.asarray(t, float), flat.shape)
        return np.array([V.slope0(a) * V.kernel_integral(a, z, z + f(a, z, w)) for a, z, w in zip(tt, flat, uu)])

    return FunctionalSpec(1.0, 0.0, 0.0, {(0, 0): g1}, g2, g3, dim=1)


@dataclass(frozen=True)
class PideGrid:
    """Uniform space grid on ``[x_min, x_max]`` with ``nodes`` points and ``steps`` time steps to ``T``.

    ``steps=None`` picks the smallest count meeting the stability bound.
    """

    x_min: float
    x_max: float
    nodes: int
    T: float = 1.0
    steps: int | None = None

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.nodes - 1)

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.nodes)

    def max_stable_dt(self, U: UncertaintySet) -> float:
        dx2 = self.dx ** 2
        tr = float(np.trace(U.covariances, axis1=1, axis2=2).max())
        return dx2 / (tr + dx2 * float(U.intensities.max()))

    def resolve_steps(self, U: UncertaintySet) -> int:
        limit = self.max_stable_dt(U)
        if self.steps is None:
            return int(np.ceil(self.T / limit * (1 + 1e-12)))
        if self.T / self.steps > limit * (1 + 1e-12):
            raise ValueError(f"time step {self.T / self.steps:.3g} exceeds the stability bound {limit:.3g}")
        return self.steps


@dataclass
class ValueSurface:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    steps: int = 0
    dt: float = 0.0

    def at(self, t, x):
        """Linear interpolation in ``x`` at the stored time nearest ``t``."""
        i = int(np.argmin(np.abs(self.t - t)))
        return np.interp(x, self.x, self.v[i])

    def write_csv(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "v"])
            for i, t in enumerate(self.t):
                for x, v in zip(self.x, self.v[i]):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])


def solve_viscosity_pide(phi, U: UncertaintySet, grid: PideGrid, store_every: int | None = None) -> ValueSurface:
    """Explicit monotone scheme for the nonlinear PIDE with ``v(0, x) = phi(x)``.

    Central second differences, jump terms by linear interpolation with
    constant extrapolation outside the box, and a per-node maximum over the
    jump and volatility families at every step. ``store_every`` thins the
    stored time levels (initial and final levels are always kept).
    """
    if U.dim != 1:
        raise ValueError("the finite-difference solver is one-dimensional")
    x = grid.x
    dx = grid.dx
    N = grid.resolve_steps(U)
    dt = grid.T / N
    v = np.asarray(phi(x), float).copy()
    if not np.all(np.isfinite(v)):
        raise ValueError("payoff is not finite on the grid")
    half_q2 = 0.5 * U.covariances[:, 0, 0]
    jumps = [nu.nodes_and_weights() for nu in U.jump_family]
    store_every = store_every or max(1, N // 200)
    ts, vs = [0.0], [v.copy()]
    for n in range(N):
        d2 = np.empty_like(v)
        d2[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx ** 2
        d2[0] = (v[1] - v[0]) / dx ** 2
        d2[-1] = (v[-2] - v[-1]) / dx ** 2
        diff_term = np.max(half_q2[:, None] * d2[None, :], axis=0)
        jump_terms = []
        for nodes, w in jumps:
            acc = np.zeros_like(v)
            for u, wk in zip(nodes[:, 0], w):
                acc += wk * (np.interp(x + u, x, v) - v)
            jump_terms.append(acc)
        v = v + dt * (diff_term + np.max(jump_terms, axis=0))
        if (n + 1) % store_every == 0 or n + 1 == N:
            ts.append((n + 1) * dt)
            vs.append(v.copy())
    return ValueSurface(np.array(ts), x, np.array(vs), N, dt)


@dataclass(frozen=True, eq=False)
class DecompositionSpec:
    """Integrands of ``Z = int Gamma dr + int Phi_ij d<B^i,B^j> + int <Psi, dB> + sum K``.

    Functions of ``(t, x)`` with ``x`` the driver state ``(n, d)``: ``gamma``
    returns ``(n,)``, ``phi`` is a dict ``(i, j) -> (n,)`` with ``i <= j``, ``psi``
    returns ``(n, d)``. ``k(t, u)`` takes event times ``(E,)`` and marks
    ``(E, d)``. Missing pieces are zero.
    """

    gamma: Callable | None = None
    phi: dict = field(default_factory=dict)
    psi: Callable | None = None
    k: Callable | None = None


@dataclass
class DecompositionReport:
    verdict: str
    max_abs: float
    quad_form: np.ndarray
    floor_bound: np.ndarray
    bound_holds: bool
    nonzero_fraction: float
    nonzero_std_error: float
    n_paths: int

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "max_abs_Z": self.max_abs,
            "quadratic_form_max": float(self.quad_form.max()) if len(self.quad_form) else 0.0,
            "floor_bound_holds": self.bound_holds,
            "nonzero_fraction": self.nonzero_fraction,
            "nonzero_std_error": self.nonzero_std_error,
            "n_paths": self.n_paths,
        }


def decomposition_check(spec: DecompositionSpec, U: UncertaintySet, scenarios, T: float, dt: float,
                        n_paths: int, seed: int = 0, zero_tol: float = 1e-12) -> DecompositionReport:
    """Simulate ``Z`` under each scenario and decide whether it vanishes.

    Also accumulates ``sum <d<B> Psi, Psi>`` per path and checks it against
    ``iota * sum |Psi|^2 dt``, which holds step by step when every ``QQ^T``
    dominates ``iota I``.
    """
    if not U.elliptic:
        raise ValueError("the decomposition check needs an elliptic uncertainty set")
    iota = U.ellipticity_floor
    max_abs = 0.0
    qf_all, floor_all, zT_all = [], [], []
    for s_idx, scn in enumerate(scenarios):
        drv = simulate_driver(scn, U, T, dt, seed=seed, n_paths=n_paths, scenario_index=s_idx)
        n, N, d = drv.dW.shape
        Z = np.zeros((n, N + 1))
        qf = np.zeros(n)
        floor = np.zeros(n)
        for i in range(N):
            t = drv.times[i]
            x = drv.X[:, i]
            inc = np.zeros(n)
            if spec.gamma is not None:
                inc += np.asarray(spec.gamma(t, x), float) * dt
            for (a, b), fn in spec.phi.items():
                w = 1.0 if a == b else 2.0
                inc += w * np.asarray(fn(t, x), float) * drv.dqv[:, i, a, b]
            if spec.psi is not None:
                psi = np.broadcast_to(np.asarray(spec.psi(t, x), float), (n, d))
                inc += np.einsum("ni,ni->n", psi, drv.dB[:, i])
                qf += np.einsum("ni,nij,nj->n", psi, drv.dqv[:, i], psi)
                floor += iota * np.sum(psi * psi, axis=1) * dt
            Z[:, i + 1] = Z[:, i] + inc
        if spec.k is not None and len(drv.ev_path):
            kv = np.asarray(spec.k(drv.ev_time, drv.ev_mark), float)
            kv = np.broadcast_to(kv, drv.ev_time.shape)
            jump_inc = np.zeros((n, N + 1))
            np.add.at(jump_inc, (drv.ev_path, drv.ev_step + 1), kv)
            Z += np.cumsum(jump_inc, axis=1)
        max_abs = max(max_abs, float(np.max(np.abs(Z))))
        qf_all.append(qf)
        floor_all.append(floor)
        zT_all.append(Z[:, -1])
    qf = np.concatenate(qf_all)
    floor = np.concatenate(floor_all)
    zT = np.concatenate(zT_all)
    nonzero = np.abs(zT) > zero_tol
    p = float(nonzero.mean())
    return DecompositionReport(
        "zero" if max_abs <= zero_tol else "nonzero", max_abs, qf, floor,
        bool(np.all(qf >= floor * (1 - 1e-12) - 1e-15)), p, float(np.sqrt(p * (1 - p) / len(zT))), len(zT))
