"""Initial phase-space densities, seeded i.i.d. sampling and admissibility checks.

Sampling uses numpy's Philox4x64-10 counter-based bit generator seeded through
``SeedSequence(seed)``; positions for all points are drawn first, then
velocities.  The same (density, count, seed) therefore yields the same bits on
every platform numpy supports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ConfigError

KINDS = ("gaussian-isotropic", "uniform-ball-gaussian", "compact-smooth", "power-tail")


@dataclass(frozen=True)
class DensityModel:
    """Product density k0(q, p) = rho(q) * nu(p).

    kind                    rho(q)                          nu(p)
    gaussian-isotropic      N(0, q_scale^2 I)               N(0, p_scale^2 I)
    uniform-ball-gaussian   uniform on ball radius q_scale  N(0, p_scale^2 I)
    compact-smooth          (1-|q|^2/q_scale^2)^k           (1-|p|^2/p_scale^2)^k
    power-tail              N(0, q_scale^2 I)               (1+|p|/p_scale)^(-k)

    ``exponent`` is the bump power k (compact-smooth, >= 2 for a C^1 density) or
    the tail exponent (power-tail, normalisable only for k > 3).
    """

    kind: str = "gaussian-isotropic"
    q_scale: float = 1.0
    p_scale: float = 1.0
    exponent: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown density kind {self.kind!r}; expected one of {KINDS}")
        if not (self.q_scale > 0 and self.p_scale > 0):
            raise ConfigError("density scales must be positive")
        if self.kind == "compact-smooth" and self.exponent < 2:
            raise ConfigError("compact-smooth exponent must be >= 2 (C^1 bump)")
        if self.kind == "power-tail" and self.exponent <= 0:
            raise ConfigError("power-tail exponent must be positive")

    @property
    def normalizable(self):
        return self.kind != "power-tail" or self.exponent > 3

    # --- densities -----------------------------------------------------
    def position_pdf(self, q):
        r2 = np.sum(np.asarray(q, dtype=float) ** 2, axis=-1)
        s = self.q_scale
        if self.kind == "uniform-ball-gaussian":
            return np.where(r2 <= s * s, 3.0 / (4 * math.pi * s ** 3), 0.0)
        if self.kind == "compact-smooth":
            k = self.exponent
            norm = 1.0 / (2 * math.pi * s ** 3 * special.beta(1.5, k + 1))
            return norm * np.clip(1 - r2 / s ** 2, 0, None) ** k
        return (2 * math.pi * s * s) ** -1.5 * np.exp(-0.5 * r2 / (s * s))

    def velocity_pdf(self, p):
        r2 = np.sum(np.asarray(p, dtype=float) ** 2, axis=-1)
        s = self.p_scale
        k = self.exponent
        if self.kind == "compact-smooth":
            norm = 1.0 / (2 * math.pi * s ** 3 * special.beta(1.5, k + 1))
            return norm * np.clip(1 - r2 / s ** 2, 0, None) ** k
        if self.kind == "power-tail":
            # unnormalisable tails are reported with unit prefactor
            norm = 1.0 / (4 * math.pi * s ** 3 * special.beta(3, k - 3)) if k > 3 else 1.0
            return norm * (1 + np.sqrt(r2) / s) ** -k
        return (2 * math.pi * s * s) ** -1.5 * np.exp(-0.5 * r2 / (s * s))

    def pdf(self, q, p):
        return self.position_pdf(q) * self.velocity_pdf(p)

    def second_moment(self):
        """Exact E|p|^2 (inf when it diverges)."""
        s, k = self.p_scale, self.exponent
        if self.kind == "compact-smooth":
            return s * s * 1.5 / (k + 2.5)
        if self.kind == "power-tail":
            if k <= 5:
                return math.inf
            return s * s * special.beta(5, k - 5) / special.beta(3, k - 3)
        return 3 * s * s

    def marginal_cdf(self, x, which="q"):
        """CDF of one Cartesian coordinate of q (or p)."""
        x = np.asarray(x, dtype=float)
        s = self.q_scale if which == "q" else self.p_scale
        kind = self.kind
        if which == "p" and kind == "uniform-ball-gaussian":
            kind = "gaussian-isotropic"
        if kind == "uniform-ball-gaussian":
            u = np.clip(x / s, -1, 1)
            return 0.5 + 0.75 * u - 0.25 * u ** 3
        if kind == "compact-smooth":
            k = self.exponent
            return stats.beta.cdf((np.clip(x / s, -1, 1) + 1) / 2, k + 2, k + 2)
        if kind == "power-tail" and which == "p":
            raise ConfigError("no closed-form marginal for the power-tail velocity law")
        return stats.norm.cdf(x / s)


@dataclass(frozen=True)
class SampleSpec:
    density: DensityModel
    count: int
    seed: int = 0

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 0:
            raise ConfigError(f"count must be a nonnegative integer, got {self.count}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def _directions(rng, n):
    v = rng.standard_normal((n, 3))
    norm = np.linalg.norm(v, axis=1)
    norm[norm == 0] = 1.0
    return v / norm[:, None]


def _draw_radial(rng, n, kind, scale, k, part):
    if kind == "uniform-ball-gaussian" and part == "q":
        return _directions(rng, n) * (scale * rng.random(n) ** (1 / 3))[:, None]
    if kind == "compact-smooth":
        return _directions(rng, n) * (scale * np.sqrt(rng.beta(1.5, k + 1, n)))[:, None]
    if kind == "power-tail" and part == "p":
        x = rng.beta(3.0, k - 3.0, n)
        return _directions(rng, n) * (scale * x / (1 - x))[:, None]
    return rng.standard_normal((n, 3)) * scale


def sample(spec: SampleSpec):
    """Draw ``count`` i.i.d. phase points; returns (q, p) arrays of shape (count, 3)."""
    d = spec.density
    if not d.normalizable:
        raise ConfigError(f"power-tail exponent {d.exponent} <= 3 is not normalisable")
    n = int(spec.count)
    rng = make_rng(spec.seed)
    q = _draw_radial(rng, n, d.kind, d.q_scale, d.exponent, "q")
    p = _draw_radial(rng, n, d.kind, d.p_scale, d.exponent, "p")
    return np.ascontiguousarray(q), np.ascontiguousarray(p)


# ------------------------------------------------------------------ validation

@dataclass
class ConditionResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class HorstReport:
    constant: float
    delta: float
    conditions: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def gaussian_envelope_constant(density: DensityModel, delta=1.0):
    """Exact sup of k0 (1+|p|)^(3+delta) for Gaussian velocities (delta = 1)."""
    if delta != 1.0:
        raise ConfigError("closed form only for delta = 1")
    s = density.p_scale
    pstar = 0.5 * (-1 + math.sqrt(1 + 16 * s * s))
    vmax = (2 * math.pi * s * s) ** -1.5 * (1 + pstar) ** 4 * math.exp(-0.5 * pstar ** 2 / s ** 2)
    return float(density.position_pdf(np.zeros(3))) * vmax


def _probe_points(density):
    # interior points only: the uniform ball's edge is a jump, not a slope
    s = density.q_scale
    return np.array([[0, 0, 0], [0.3 * s, 0, 0], [0, 0.5 * s, 0.2 * s], [0.1 * s, -0.4 * s, 0.6 * s]])


def validate_horst(density: DensityModel, constant=None, delta=1.0, moment_samples=100_000, seed=12345):
    """Check the decay envelope, the gradient envelope and the velocity second moment.

    The envelope is probed on a log grid of |p| up to 1e8 along a few directions
    and interior positions.  A condition passes when the weighted ratio stays
    below ``constant`` and does not grow over the last three decades of the grid.
    Without an explicit constant the grid supremum is used, so only the tail
    behaviour decides.
    """
    pmag = np.concatenate([[0.0], np.logspace(-3, 8, 1101)])
    dirs = np.array([[1, 0, 0], [0, 1, 0], [0.6, 0.0, 0.8], [-0.48, 0.6, 0.64]])
    qs = _probe_points(density)
    weight = (1 + pmag) ** (3 + delta)
    tail = pmag >= 1e5

    def ratio(fn):
        out = np.zeros_like(pmag)
        for q in qs:
            for d in dirs:
                out = np.maximum(out, fn(q, pmag[:, None] * d) * weight)
        return out

    def grad_norm(q, p):
        h = 1e-6 * (1 + np.linalg.norm(p, axis=1))[:, None]
        g2 = np.zeros(len(p))
        for axis in range(6):
            e = np.zeros(6)
            e[axis] = 1
            qp, pp = q + e[:3] * h, p + e[3:] * h
            qm, pm = q - e[:3] * h, p - e[3:] * h
            g2 += ((density.pdf(qp, pp) - density.pdf(qm, pm)) / (2 * h[:, 0])) ** 2
        return np.sqrt(g2)

    report = HorstReport(constant=math.nan, delta=delta)
    sups = []
    for name, fn in (("decay", lambda q, p: density.pdf(q, p)), ("gradient", grad_norm)):
        with np.errstate(over="ignore", invalid="ignore"):
            r = ratio(fn)
        sup = float(np.nanmax(r))
        tail_vals = r[tail]
        growing = bool(np.any(np.diff(tail_vals) > 1e-9 * np.maximum(tail_vals[:-1], 1e-300)))
        limit = sup if constant is None else constant
        ok = np.isfinite(sup) and sup <= limit * (1 + 1e-9) and not growing
        sups.append(sup)
        report.conditions.append(ConditionResult(
            name, bool(ok), sup, "tail ratio grows" if growing else "bounded envelope"))
    report.constant = max(sups) if constant is None else constant

    exact = density.second_moment()
    detail = f"exact {exact:.6g}"
    mc = math.nan
    if density.normalizable and np.isfinite(exact):
        _, p = sample(SampleSpec(density, moment_samples, seed))
        mc = float(np.mean(np.sum(p * p, axis=1)))
        detail += f", Monte-Carlo {mc:.6g}"
    report.conditions.append(ConditionResult("second-moment", bool(np.isfinite(exact)), mc, detail))
    return report


def spatial_density_max(q, cell):
    """Largest normalised cell-count density of a point cloud on a cubic grid."""
    q = np.asarray(q, dtype=float)
    if len(q) == 0:
        return 0.0
    idx = np.floor(q / cell).astype(np.int64)
    _, counts = np.unique(idx, axis=0, return_counts=True)
    return float(counts.max() / (len(q) * cell ** 3))
