"""Cut-off Coulomb kernels, their gradient bound, pair potentials and total-force maps.

The interaction kernel with cut radius c and sign a is

    f(q) = a q / c**3       if |q| <= c
    f(q) = a q / |q|**3     otherwise,

and the fluctuation bound g is 2/c**3 inside 3c and 54/|q|**3 outside.  With
c = N**(-beta) these are the usual N-dependent kernels (c**-3 = N**(3 beta)).
A cut radius of 0 gives the exact Coulomb kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import REDUCE_FLAGS, njit, prange
from .errors import ConfigError, SingularInputError

MAIN_REGIME_BETA = 5.0 / 12.0


@dataclass(frozen=True)
class ModelParams:
    """Model constants.  ``beta`` is None when the cut radius was given explicitly."""

    n_particles: int
    cut_radius: float
    beta: float | None = None
    sign: int = 1
    sigma: float = 0.05
    horizon: float = 1.0
    mass: float = 1.0
    main_regime: bool = False

    def __post_init__(self):
        errors = []
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            errors.append(f"n_particles must be a positive integer, got {self.n_particles}")
        if not (math.isfinite(self.cut_radius) and self.cut_radius >= 0):
            errors.append(f"cut_radius must be finite and >= 0, got {self.cut_radius}")
        if self.sign not in (1, -1):
            errors.append(f"sign must be +1 or -1, got {self.sign}")
        if not (self.sigma > 0):
            errors.append(f"sigma must be positive, got {self.sigma}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            errors.append(f"horizon must be positive, got {self.horizon}")
        if self.mass != 1.0:
            errors.append("mass is fixed to 1")
        if self.beta is not None:
            if not (0 <= self.beta < MAIN_REGIME_BETA):
                errors.append(f"beta must lie in [0, 5/12), got {self.beta}")
            elif not errors:
                expected = float(self.n_particles) ** (-self.beta)
                if abs(self.cut_radius - expected) > 1e-12 * expected:
                    errors.append("cut_radius must equal n_particles**(-beta)")
        if self.main_regime and self.beta is not None and self.beta > MAIN_REGIME_BETA - self.sigma:
            errors.append(
                f"beta={self.beta} violates beta <= 5/12 - sigma = {MAIN_REGIME_BETA - self.sigma:.6g}")
        if errors:
            raise ConfigError("; ".join(errors), errors)

    @classmethod
    def from_beta(cls, n_particles, beta, **kw):
        if not (0 <= beta < MAIN_REGIME_BETA):
            raise ConfigError(f"beta must lie in [0, 5/12), got {beta}")
        return cls(int(n_particles), float(n_particles) ** (-beta), beta=float(beta), **kw)

    @classmethod
    def explicit(cls, n_particles, cut_radius, **kw):
        return cls(int(n_particles), float(cut_radius), beta=None, **kw)

    @property
    def inner_strength(self):
        """c**-3, i.e. N**(3 beta) in beta mode."""
        if self.cut_radius == 0:
            return math.inf
        return 1.0 / (self.cut_radius * self.cut_radius * self.cut_radius)


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(3)
        p = np.asarray(self.p, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ConfigError("phase point components must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def as_array(self):
        return np.concatenate([self.q, self.p])


@dataclass
class ParticleSystem:
    """N phase points stored as (N, 3) position and velocity arrays."""

    params: ModelParams
    q: np.ndarray
    p: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float64).reshape(-1, 3)
        if self.p is None:
            self.p = np.zeros_like(self.q)
        self.p = np.ascontiguousarray(self.p, dtype=np.float64).reshape(-1, 3)
        n = self.params.n_particles
        if self.q.shape[0] != n or self.p.shape[0] != n:
            raise ConfigError(f"expected {n} points, got q={self.q.shape[0]}, p={self.p.shape[0]}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ConfigError("phase point components must be finite")

    @classmethod
    def from_points(cls, params, points):
        q = np.array([pt.q for pt in points]).reshape(-1, 3)
        p = np.array([pt.p for pt in points]).reshape(-1, 3)
        return cls(params, q, p)

    @property
    def points(self):
        return [PhasePoint(self.q[i], self.p[i]) for i in range(len(self.q))]

    def __len__(self):
        return self.q.shape[0]


def _as_vectors(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 3:
        raise ConfigError(f"expected trailing dimension 3, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ConfigError("separation vectors must be finite")
    return q


def _force_factor(r2, c):
    # Both branches through one expression: max(r2, c^2)^(-3/2).  Keeps the
    # scalar and the compiled kernels bit-identical.
    r2c = np.maximum(r2, c * c)
    return 1.0 / (r2c * np.sqrt(r2c))


def pair_force(q, params: ModelParams):
    """Cut-off Coulomb force f(q); accepts a 3-vector or an (..., 3) array."""
    q = _as_vectors(q)
    r2 = np.einsum("...i,...i->...", q, q)
    c = params.cut_radius
    if c == 0 and np.any(r2 == 0):
        raise SingularInputError("exact Coulomb kernel evaluated at q = 0")
    k = params.sign * _force_factor(r2, c)
    return k[..., None] * q


def fluctuation_bound(q, params: ModelParams):
    """Gradient bound g(q): 2 c**-3 for |q| <= 3c and 54/|q|**3 beyond."""
    c = params.cut_radius
    if c <= 0:
        raise ConfigError("fluctuation_bound requires cut_radius > 0")
    q = _as_vectors(q)
    r2 = np.einsum("...i,...i->...", q, q)
    inner = 2.0 / (c * c * c)
    with np.errstate(divide="ignore"):
        outer = 54.0 / (r2 * np.sqrt(r2))
    return np.where(r2 <= 9.0 * c * c, inner, outer)


def pair_potential(q, params: ModelParams):
    """Potential U with -grad U = f: a/|q| outside, a(3/(2c) - |q|^2/(2c^3)) inside."""
    q = _as_vectors(q)
    r2 = np.einsum("...i,...i->...", q, q)
    c = params.cut_radius
    if c == 0:
        if np.any(r2 == 0):
            raise SingularInputError("exact Coulomb potential evaluated at q = 0")
        return params.sign / np.sqrt(r2)
    with np.errstate(divide="ignore"):
        outer = 1.0 / np.sqrt(r2)
    inner = 1.5 / c - 0.5 * r2 / (c * c * c)
    return params.sign * np.where(r2 <= c * c, inner, outer)


# ---------------------------------------------------------------- compiled sums
# Positions are passed as separate x, y, z arrays so the inner loop vectorises.
# Each target is reduced by exactly one thread in a fixed lane order, so the
# result does not depend on the number of threads.

@njit(parallel=True, fastmath=REDUCE_FLAGS, cache=True)
def _self_force(x, y, z, c2, out):
    n = x.shape[0]
    for j in prange(n):
        xj, yj, zj = x[j], y[j], z[j]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for i in range(j):
            dx = xj - x[i]
            dy = yj - y[i]
            dz = zj - z[i]
            r2 = max(dx * dx + dy * dy + dz * dz, c2)
            k = 1.0 / (r2 * np.sqrt(r2))
            fx += k * dx
            fy += k * dy
            fz += k * dz
        for i in range(j + 1, n):
            dx = xj - x[i]
            dy = yj - y[i]
            dz = zj - z[i]
            r2 = max(dx * dx + dy * dy + dz * dz, c2)
            k = 1.0 / (r2 * np.sqrt(r2))
            fx += k * dx
            fy += k * dy
            fz += k * dz
        out[j, 0] = fx
        out[j, 1] = fy
        out[j, 2] = fz


@njit(parallel=True, fastmath=REDUCE_FLAGS, cache=True)
def _cross_force(tx, ty, tz, x, y, z, c2, out):
    n = tx.shape[0]
    m = x.shape[0]
    for j in prange(n):
        xj, yj, zj = tx[j], ty[j], tz[j]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for i in range(m):
            dx = xj - x[i]
            dy = yj - y[i]
            dz = zj - z[i]
            r2 = max(dx * dx + dy * dy + dz * dz, c2)
            k = 1.0 / (r2 * np.sqrt(r2))
            fx += k * dx
            fy += k * dy
            fz += k * dz
        out[j, 0] = fx
        out[j, 1] = fy
        out[j, 2] = fz


@njit(parallel=True, fastmath=REDUCE_FLAGS, cache=True)
def _self_fluctuation(x, y, z, inner, out):
    n = x.shape[0]
    for j in prange(n):
        xj, yj, zj = x[j], y[j], z[j]
        s = 0.0
        for i in range(j):
            dx = xj - x[i]
            dy = yj - y[i]
            dz = zj - z[i]
            r2 = dx * dx + dy * dy + dz * dz
            s += min(inner, 54.0 / (r2 * np.sqrt(r2)))
        for i in range(j + 1, n):
            dx = xj - x[i]
            dy = yj - y[i]
            dz = zj - z[i]
            r2 = dx * dx + dy * dy + dz * dz
            s += min(inner, 54.0 / (r2 * np.sqrt(r2)))
        out[j] = s


@njit(parallel=True, fastmath=REDUCE_FLAGS, cache=True)
def _self_potential(x, y, z, c, out):
    # out[j] = sum_{i>j} U(q_j - q_i)/a ; the caller sums over j
    n = x.shape[0]
    c2 = c * c
    a0 = 1.5 / c if c > 0 else 0.0
    a2 = 0.5 / (c * c2) if c > 0 else 0.0
    for j in prange(n):
        s = 0.0
        for i in range(j + 1, n):
            dx = x[j] - x[i]
            dy = y[j] - y[i]
            dz = z[j] - z[i]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 <= c2:
                s += a0 - a2 * r2
            else:
                s += 1.0 / np.sqrt(r2)
        out[j] = s


def _split(q):
    q = np.asarray(q, dtype=np.float64)
    return (np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]),
            np.ascontiguousarray(q[:, 2]))


def _check_distinct(q):
    if len(q) > 1 and len(np.unique(q, axis=0)) < len(q):
        raise SingularInputError("coincident points with exact Coulomb kernel")


def force_on_self(q, cut_radius, sign, weight):
    """weight * sum_{i != j} f(q_j - q_i) for every j (the self-consistent field)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if cut_radius == 0:
        _check_distinct(q)
    out = np.empty((len(q), 3))
    if len(q):
        _self_force(*_split(q), float(cut_radius) ** 2, out)
    out *= sign * weight
    return out


def force_from_sources(targets, sources, cut_radius, sign, weight):
    """weight * sum_i f(x_j - q_i) for external targets x_j (sources feel nothing)."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    sources = np.asarray(sources, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(targets), 3))
    if len(targets) and len(sources):
        _cross_force(*_split(targets), *_split(sources), float(cut_radius) ** 2, out)
    if cut_radius == 0 and not np.all(np.isfinite(out)):
        raise SingularInputError("tracer coincides with a source point")
    out *= sign * weight
    return out


def total_force(system: ParticleSystem):
    """F_j = (1/N) sum_{i != j} f(q_j - q_i)."""
    prm = system.params
    return force_on_self(system.q, prm.cut_radius, prm.sign, 1.0 / prm.n_particles)


def total_fluctuation(system: ParticleSystem):
    """G_j = (1/N) sum_{i != j} g(q_j - q_i)."""
    c = system.params.cut_radius
    if c <= 0:
        raise ConfigError("total_fluctuation requires cut_radius > 0")
    out = np.empty(len(system))
    if len(system):
        _self_fluctuation(*_split(system.q), 2.0 / (c * c * c), out)
    return out / system.params.n_particles


def potential_energy(q, params: ModelParams):
    """(1/N) sum_{i<j} U(q_i - q_j)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if params.cut_radius == 0:
        _check_distinct(q)
    out = np.empty(len(q))
    if len(q):
        _self_potential(*_split(q), float(params.cut_radius), out)
    return params.sign * math.fsum(out) / params.n_particles


def total_energy(q, p, params: ModelParams):
    p = np.asarray(p, dtype=np.float64)
    return 0.5 * math.fsum((p * p).ravel()) + potential_energy(q, params)
