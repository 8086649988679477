"""Uncertainty sets of jump measures and volatility matrices.

An uncertainty set is a finite family of jump measures (the jump part of the
Levy triplet) and a finite family of volatility matrices ``Q``; the drift slot
is identically zero. All suprema over the set become finite maxima.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .report import Condition, StructureError, ValidationReport


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """A finite jump measure on R^d minus the origin.

    Either atomic (``atoms`` with positive ``weights``) or a one-dimensional
    density on a bounded interval, integrated with Gauss-Legendre nodes.
    Use :meth:`atomic`, :meth:`density` or :meth:`zero` to build one.
    """

    dim: int
    atoms: np.ndarray | None = None
    weights: np.ndarray | None = None
    density_fn: Callable | None = None
    support: tuple[float, float] | None = None
    declared_mass: float | None = None
    n_nodes: int = 64
    _nodes: np.ndarray = field(init=False, repr=False)
    _node_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.density_fn is None:
            atoms = np.zeros((0, self.dim)) if self.atoms is None else np.asarray(self.atoms, float)
            atoms = atoms.reshape(-1, self.dim)
            weights = np.zeros(0) if self.weights is None else np.asarray(self.weights, float).ravel()
            if len(weights) != len(atoms):
                raise StructureError("atoms and weights differ in length")
            if np.any(weights <= 0):
                raise StructureError("atom weights must be positive")
            if len(atoms) and np.any(np.all(atoms == 0.0, axis=1)):
                raise StructureError("jump measure has an atom at the origin")
            object.__setattr__(self, "atoms", _frozen(atoms))
            object.__setattr__(self, "weights", _frozen(weights))
            object.__setattr__(self, "_nodes", self.atoms)
            object.__setattr__(self, "_node_weights", self.weights)
            return
        if self.dim != 1:
            raise StructureError("density jump measures are supported in dimension 1 only")
        lo, hi = self.support
        if not lo < hi:
            raise StructureError("density support must be a nonempty interval")
        # split at the origin so the punctured point is a panel boundary
        panels = [(lo, hi)] if (lo >= 0 or hi <= 0) else [(lo, 0.0), (0.0, hi)]
        ref_x, ref_w = np.polynomial.legendre.leggauss(self.n_nodes)
        nodes, wts = [], []
        for a, b in panels:
            nodes.append(0.5 * (b - a) * ref_x + 0.5 * (a + b))
            wts.append(0.5 * (b - a) * ref_w)
        nodes = np.concatenate(nodes)
        wts = np.concatenate(wts) * np.asarray(self.density_fn(nodes), float)
        object.__setattr__(self, "_nodes", _frozen(nodes.reshape(-1, 1)))
        object.__setattr__(self, "_node_weights", _frozen(wts))

    @classmethod
    def atomic(cls, atoms, weights, dim=None):
        atoms = np.asarray(atoms, float)
        if dim is None:
            dim = 1 if atoms.ndim <= 1 else atoms.shape[1]
        return cls(dim=dim, atoms=atoms.reshape(-1, dim), weights=weights)

    @classmethod
    def density(cls, fn, support, declared_mass=None, n_nodes=64):
        return cls(dim=1, density_fn=fn, support=tuple(map(float, support)),
                   declared_mass=declared_mass, n_nodes=n_nodes)

    @classmethod
    def zero(cls, dim=1):
        return cls(dim=dim)

    @property
    def is_atomic(self):
        return self.density_fn is None

    @property
    def total_mass(self) -> float:
        if self.declared_mass is not None:
            return float(self.declared_mass)
        return float(np.sum(self._node_weights))

    def nodes_and_weights(self):
        """Integration nodes ``(K, d)`` and weights ``(K,)``."""
        return self._nodes, self._node_weights

    def integrate(self, phi):
        """Integral of ``phi`` against the measure; ``phi`` maps ``(K, d)`` nodes to ``(K, ...)``."""
        nodes, w = self.nodes_and_weights()
        vals = np.asarray(phi(nodes), float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand is not finite at a node of the jump measure")
        return np.tensordot(w, vals, axes=(0, 0))

    def key(self):
        """Hashable identity used to compare measures across uncertainty sets."""
        if self.is_atomic:
            return ("atomic", self.dim, tuple(np.round(self.atoms, 12).ravel()),
                    tuple(np.round(self.weights, 12)))
        return ("density", id(self.density_fn), self.support, self.n_nodes)

    def mark_sampler(self):
        """Return ``(nodes, cdf)`` for inverse-CDF sampling of normalized marks.

        Atomic measures sample atoms exactly; densities sample from a fine
        piecewise-linear inverse CDF on their support.
        """
        if self.is_atomic:
            lam = self.total_mass
            if lam == 0:
                return self.atoms, np.zeros(0)
            return self.atoms, np.cumsum(self.weights) / lam
        lo, hi = self.support
        grid = np.linspace(lo, hi, 4097)
        dens = np.maximum(np.asarray(self.density_fn(grid), float), 0.0)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return grid, cdf / cdf[-1]


@dataclass(frozen=True, eq=False)
class BaseMeasureTransport:
    """A base measure ``mu`` and, per jump measure, an atom-to-atom map ``g_nu``.

    ``maps[k][i]`` is the image of the ``i``-th atom of ``mu`` under the
    transport for the ``k``-th jump measure.
    """

    base: JumpMeasure
    maps: tuple

    def pushforward(self, k) -> JumpMeasure:
        images = np.asarray(self.maps[k], float).reshape(-1, self.base.dim)
        keys, inverse = np.unique(images, axis=0, return_inverse=True)
        weights = np.bincount(inverse.ravel(), weights=self.base.weights, minlength=len(keys))
        return JumpMeasure.atomic(keys, weights, dim=self.base.dim)

    def check(self, measures: Sequence[JumpMeasure], atol=1e-12) -> bool:
        """True iff every measure equals the pushforward of ``mu`` under its map."""
        if len(measures) != len(self.maps):
            return False
        for k, nu in enumerate(measures):
            push = self.pushforward(k)
            if not nu.is_atomic:
                return False
            for atom, w in zip(nu.atoms, nu.weights):
                hit = np.all(np.isclose(push.atoms, atom, rtol=0, atol=1e-12), axis=1)
                if abs(push.weights[hit].sum() - w) > atol:
                    return False
            if abs(push.total_mass - nu.total_mass) > atol:
                return False
        return True


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Finite families of jump measures and volatility matrices, zero drift."""

    jump_family: tuple
    vol_family: tuple
    ellipticity_floor: float = 0.0
    elliptic: bool = False
    dim: int = 1

    def __post_init__(self):
        jumps = tuple(self.jump_family) or (JumpMeasure.zero(self.dim),)
        vols = tuple(_frozen(np.atleast_2d(np.asarray(q, float))) for q in self.vol_family)
        object.__setattr__(self, "jump_family", jumps)
        object.__setattr__(self, "vol_family", vols)
        if not vols:
            raise StructureError("volatility family is empty")
        if self.elliptic and not self.ellipticity_floor > 0:
            raise StructureError("an elliptic set needs a positive ellipticity floor")

    @classmethod
    def build(cls, jumps, vols, ellipticity_floor=0.0, elliptic=None, dim=None):
        """Convenience constructor accepting scalars for one-dimensional sets."""
        vols = [np.atleast_2d(np.asarray(q, float)) for q in vols]
        if dim is None:
            dim = vols[0].shape[0]
        if elliptic is None:
            elliptic = ellipticity_floor > 0
        return cls(tuple(jumps), tuple(vols), float(ellipticity_floor), bool(elliptic), dim)

    @property
    def drift(self):
        return np.zeros(self.dim)

    @property
    def covariances(self) -> np.ndarray:
        """Stack of ``Q Q^T`` over the volatility family, shape ``(m, d, d)``."""
        q = np.stack(self.vol_family)
        return q @ np.swapaxes(q, 1, 2)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([nu.total_mass for nu in self.jump_family])

    def check_structure(self):
        for k, nu in enumerate(self.jump_family):
            if nu.dim != self.dim:
                raise StructureError(f"jump measure {k} has dimension {nu.dim}, expected {self.dim}")
        for m, q in enumerate(self.vol_family):
            if q.shape != (self.dim, self.dim):
                raise StructureError(f"volatility matrix {m} has shape {q.shape}, expected {(self.dim, self.dim)}")


def validate_uncertainty_set(U: UncertaintySet, q: float = 0.5) -> ValidationReport:
    """Check the boundedness display, the q-moment and finite-mass assumptions and ellipticity.

    Raises :class:`StructureError` on dimension mismatch.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    U.check_structure()

    first_moments, q_moments, masses = [], [], []
    for nu in U.jump_family:
        masses.append(nu.total_mass)
        if not np.isfinite(nu.total_mass):
            first_moments.append(np.inf)
            q_moments.append(np.inf)
            continue
        first_moments.append(float(nu.integrate(lambda u: np.linalg.norm(u, axis=1))))
        q_moments.append(float(nu.integrate(
            lambda u: np.where((np.linalg.norm(u, axis=1) < 1), np.linalg.norm(u, axis=1) ** q, 0.0))))
    half_traces = 0.5 * np.trace(U.covariances, axis1=1, axis2=2)
    # zeta = 0, so the bound is a sum of separate maxima over the product family
    bound = max(first_moments) + 0.0 + float(half_traces.max())
    eig_min = float(min(np.linalg.eigvalsh(c).min() for c in U.covariances))

    conditions = [
        Condition("levy_khintchine_bound", bool(np.isfinite(bound)), bound,
                  "sup of int|u| nu(du) + |zeta| + tr(QQ*)/2"),
        Condition("q_moment", bool(np.isfinite(max(q_moments))), max(q_moments),
                  f"sup over nu of int_(0<|u|<1) |u|^{q} nu(du)"),
        Condition("finite_mass", bool(np.isfinite(max(masses))), max(masses),
                  "sup over nu of nu(R^d minus 0)"),
    ]
    if U.elliptic:
        conditions.append(Condition("ellipticity", eig_min >= U.ellipticity_floor, eig_min,
                                    f"min eigenvalue of QQ* against floor {U.ellipticity_floor}"))
    else:
        conditions.append(Condition("ellipticity", True, eig_min, "not required (set not flagged elliptic)"))
    return ValidationReport(conditions)


def _check_symmetric(A):
    A = np.asarray(A, float)
    if A.shape[-1] != A.shape[-2] or not np.allclose(A, np.swapaxes(A, -1, -2), rtol=0, atol=1e-12):
        raise ValueError("G is defined on symmetric matrices only")
    return A


def G_of(A, U: UncertaintySet, return_index=False):
    """``G(A) = max over Q of tr(Q Q^T A) / 2``.

    ``A`` may be a single ``(d, d)`` matrix or a stack ``(..., d, d)``; scalars
    are accepted when ``d == 1``.
    """
    A = np.asarray(A, float)
    if U.dim == 1 and (A.ndim == 0 or A.shape[-2:] != (1, 1)):
        A = A[..., None, None]
    A = _check_symmetric(A)
    vals = 0.5 * np.einsum("kij,...ji->...k", U.covariances, A)
    idx = np.argmax(vals, axis=-1)
    best = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
    if best.ndim == 0:
        best, idx = float(best), int(idx)
    return (best, idx) if return_index else best


def G_inverse_1d(y, U: UncertaintySet):
    """Inverse of ``G`` for a one-dimensional elliptic set."""
    if U.dim != 1:
        raise ValueError("G_inverse_1d needs a one-dimensional uncertainty set")
    if not U.elliptic:
        raise ValueError("G is invertible only on an elliptic set")
    q2 = U.covariances[:, 0, 0]
    y = np.asarray(y, float)
    out = np.where(y >= 0, 2.0 * y / q2.max(), 2.0 * y / q2.min())
    return float(out) if out.ndim == 0 else out


def jump_integrals(phi, U: UncertaintySet):
    """Per-measure integrals of ``phi`` over the jump family, stacked on axis 0."""
    return np.stack([np.asarray(nu.integrate(phi), float) for nu in U.jump_family])


def sup_jump_integral(phi, U: UncertaintySet, return_index=False):
    """Maximum over the jump family of the integral of ``phi``.

    ``phi`` receives nodes of shape ``(K, d)``. It may return ``(K,)`` or
    ``(K, n)`` for a batch of integrands, in which case the maximum is taken
    separately for each of the ``n`` columns.
    """
    vals = jump_integrals(phi, U)
    idx = np.argmax(vals, axis=0)
    best = np.max(vals, axis=0)
    if np.ndim(best) == 0:
        best, idx = float(best), int(idx)
    return (best, idx) if return_index else best


def _fd_hessian_at_zero(g, d, step=1e-5):
    H = np.empty((d, d))
    eye = np.eye(d)
    for i in range(d):
        for j in range(i, d):
            ei, ej = eye[i] * step, eye[j] * step
            H[i, j] = H[j, i] = (g(ei + ej) - g(ei - ej) - g(-ei + ej) + g(-ei - ej)) / (4 * step * step)
    return H


def g_x_functional(g, U: UncertaintySet, hessian=None, step=1e-5) -> float:
    """Levy-Khintchine functional: max over the family of ``int g dnu + tr(g''(0) QQ^T)/2``.

    ``g`` maps a single vector of shape ``(d,)`` to a float and vanishes at 0.
    Without a closed-form ``hessian`` the second derivative at 0 comes from
    central differences with the given step.
    """
    d = U.dim
    H = np.asarray(hessian, float).reshape(d, d) if hessian is not None else _fd_hessian_at_zero(g, d, step)
    jump_part = [float(nu.integrate(lambda u: np.array([g(row) for row in u]))) for nu in U.jump_family]
    diff_part = 0.5 * np.einsum("kij,ji->k", U.covariances, H)
    return float(max(jump_part) + diff_part.max())
