"""Empirical estimators: deviations, class probabilities, LLN fluctuations,
bad-set cardinalities, cut-off convergence and log-log scaling fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .dynamics import (IntegratorSpec, MeanFieldEngine, TrajectoryRecord, evolve_lifted)
from .ensemble import DensityModel, SampleSpec, sample
from .errors import ConfigError
from .kernels import ModelParams, pair_force
from .taxonomy import (BAD, GOOD, SUPERBAD, TIE_REL, CollisionClass, TaxonomyReport,
                       ThresholdSchedule, pair_encounters, particle_deviation, schedule)


# ------------------------------------------------------------------ deviation

@dataclass
class DeviationReport:
    times: np.ndarray
    per_time: np.ndarray
    per_class: dict
    sup: float
    class_sups: dict
    threshold: float
    exceeds: bool


def deviation(micro: TrajectoryRecord, tracers: TrajectoryRecord, report: TaxonomyReport = None):
    """Max-over-particles phase-space infinity-norm deviation at every grid time."""
    if micro.q.shape != tracers.q.shape:
        raise ConfigError("micro and tracer records differ in shape")
    if not (np.array_equal(micro.q[0], tracers.q[0]) and np.array_equal(micro.p[0], tracers.p[0])):
        raise ConfigError("micro and tracer records start from different initial points")
    dev = particle_deviation(micro, tracers)
    n = micro.n_points
    per_time = dev.max(axis=1) if n else np.zeros(micro.n_frames)
    per_class, class_sups = {}, {}
    if report is not None:
        if len(report.labels) != n:
            raise ConfigError("report does not match the record size")
        for label in (GOOD, BAD, SUPERBAD):
            idx = report.indices(label)
            series = dev[:, idx].max(axis=1) if len(idx) else np.zeros(micro.n_frames)
            per_class[label] = series
            class_sups[label] = float(series.max())
    sup = float(per_time.max())
    threshold = float(max(n, 1)) ** (-1.0 / 6.0)
    return DeviationReport(micro.times, per_time, per_class, sup, class_sups, threshold, sup > threshold)


# -------------------------------------------------------- class probabilities

@dataclass
class ClassEstimate:
    cls: CollisionClass
    hits: int
    pairs: int
    estimate: float
    wilson_lo: float
    wilson_hi: float
    bound: float

    def within(self, constant):
        return self.estimate <= constant * self.bound


def wilson_interval(hits, n, level=0.95):
    ci = binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def pair_paths(density: DensityModel, pairs: int, seed: int, engine: MeanFieldEngine,
               integ: IntegratorSpec, record_stride=1):
    """Tracer paths of ``pairs`` i.i.d. (Y, Z) pairs drawn from one seed."""
    q, p = sample(SampleSpec(density, 2 * pairs, seed))
    _, rec = evolve_lifted(engine, density, (q, p), integ, record_stride)
    return rec.select(slice(0, pairs)), rec.select(slice(pairs, 2 * pairs))


def estimate_classes(classes, encounter_sets):
    """Aggregate membership frequencies of each class over encounter batches."""
    out = []
    for cls in classes:
        hits = 0
        total = 0
        for enc in encounter_sets:
            hits += int(enc.members(cls).sum())
            total += len(enc.dmin)
        lo, hi = wilson_interval(hits, total)
        out.append(ClassEstimate(cls, hits, total, hits / total, lo, hi, cls.lemma_bound()))
    return out


def class_probability(cls: CollisionClass, density: DensityModel, pairs: int, seeds, engine,
                      integ: IntegratorSpec, record_stride=1):
    """Monte-Carlo P(Z in class(Y)) for i.i.d. Y, Z; ``pairs`` pairs per seed."""
    if pairs <= 0:
        raise ConfigError("pairs must be positive")
    cls.check_horizon(integ.horizon)
    encs = []
    for seed in np.atleast_1d(seeds):
        ry, rz = pair_paths(density, pairs, int(seed), engine, integ, record_stride)
        encs.append(pair_encounters(ry, rz, cls.t1, cls.t2))
    return estimate_classes([cls], encs)[0]


def lemma_exceedance(estimates, constant):
    """Fraction of classes whose estimate stays within constant * bound."""
    ok = [e.within(constant) for e in estimates]
    return float(np.mean(ok)) if ok else 1.0


# ------------------------------------------------------------------------ LLN

@dataclass(frozen=True)
class LlnSpec:
    beta: float = 1.0 / 3.0
    sigma: float = 0.05
    functional: str = "force"        # force | zero | half-space
    reference_factor: int = 100
    horizon: float = 1.0
    steps: int = 1024
    sign: int = 1
    mass_factor: int = 16
    density: DensityModel = field(default_factory=DensityModel)
    probe_seed: int = 7

    def __post_init__(self):
        if self.functional not in ("force", "zero", "half-space"):
            raise ConfigError(f"unknown LLN functional {self.functional!r}")
        if not (0 < self.sigma and 0 <= self.beta):
            raise ConfigError("need beta >= 0 and sigma > 0")

    @property
    def alpha(self):
        return self.beta + self.sigma


@dataclass
class LlnResult:
    n: int
    fluctuations: np.ndarray
    h_sup: float
    h_bound: float
    good_fraction: float

    @property
    def median(self):
        return float(np.median(self.fluctuations))


class _PairAccumulator:
    """Streams the time integral of f(Y - Z) and the good-set encounter test."""

    def __init__(self, n_other, params, dt, steps, r_good, v_good):
        self.params = params
        self.weights = (dt, steps)
        self.integral = np.zeros((n_other, 3))
        self.dmin = np.full(n_other, np.inf)
        self.flag = np.zeros(n_other, dtype=bool)
        self.r_good, self.v_good = r_good, v_good

    def __call__(self, k, q, p):
        dt, steps = self.weights
        dq = q[0] - q[1:]
        w = 0.5 * dt if k in (0, steps) else dt
        self.integral += w * pair_force(dq, self.params)
        d = np.sqrt(np.einsum("ij,ij->i", dq, dq))
        dv = p[1:] - p[0]
        v = np.sqrt(np.einsum("ij,ij->i", dv, dv))
        in_band = v <= self.v_good
        new = d < self.dmin * (1 - TIE_REL)
        tie = ~new & (d <= self.dmin * (1 + TIE_REL))
        self.flag = np.where(new, in_band, self.flag | (tie & in_band))
        self.dmin = np.where(new, d, self.dmin)

    def good(self):
        return ~((self.dmin <= self.r_good) & self.flag)


def lln_samples(spec: LlnSpec, n: int, seeds, seed_offset=0):
    """h-values for every seed's N points plus the large reference sample."""
    prm = ModelParams.from_beta(n, spec.beta, sign=spec.sign, sigma=spec.sigma, horizon=spec.horizon)
    sched = schedule(n, spec.sigma)
    seeds = [int(s) + seed_offset for s in seeds]
    # one probe point for every N: its position sets the fluctuation scale, so it
    # must not change along an N sweep
    yq, yp = sample(SampleSpec(spec.density, 1, spec.probe_seed * 1_000_003))
    parts_q, parts_p = [yq], [yp]
    for s in seeds:
        q, p = sample(SampleSpec(spec.density, n, s))
        parts_q.append(q)
        parts_p.append(p)
    n_ref = spec.reference_factor * n
    rq, rp = sample(SampleSpec(spec.density, n_ref, 2 ** 63 + n))
    parts_q.append(rq)
    parts_p.append(rp)
    q0, p0 = np.concatenate(parts_q), np.concatenate(parts_p)

    if spec.functional == "zero":
        values = np.zeros((len(q0) - 1, 3))
        good = np.ones(len(q0) - 1, dtype=bool)
    elif spec.functional == "half-space":
        values = np.zeros((len(q0) - 1, 3))
        values[:, 0] = (q0[1:, 0] > 0).astype(float)
        good = np.ones(len(q0) - 1, dtype=bool)
    else:
        integ = IntegratorSpec(spec.horizon / spec.steps, spec.steps)
        engine = MeanFieldEngine("radial-shell", spec.mass_factor * n, 2 ** 62 + n, prm.cut_radius,
                                 spec.sign)
        acc = _PairAccumulator(len(q0) - 1, prm, integ.dt, integ.steps,
                               sched.good_radius_factor * sched.r_b, sched.v_b)
        evolve_lifted(engine, spec.density, (q0, p0), integ, record_stride=integ.steps, observer=acc)
        good = acc.good()
        values = float(n) ** spec.alpha * acc.integral * good[:, None]
    return values, good, len(seeds)


def lln_experiment(spec: LlnSpec, n_list, seeds, seed_offset=0):
    """Fluctuation |mean_j h(Y, X_j) - E h(Y, Z)| (max over components) per N and seed."""
    out = {}
    for n in n_list:
        values, good, count = lln_samples(spec, int(n), seeds, seed_offset)
        sample_vals = values[: count * n].reshape(count, n, 3)
        ref_mean = values[count * n:].mean(axis=0)
        fl = np.abs(sample_vals.mean(axis=1) - ref_mean).max(axis=1)
        h_sup = float(np.abs(values).max()) if len(values) else 0.0
        out[int(n)] = LlnResult(int(n), fl, h_sup, float(n) ** (1 - spec.sigma), float(good.mean()))
    return out


# ---------------------------------------------------------------- cardinality

@dataclass
class CardinalityStats:
    n: int
    seeds: int
    bad_counts: np.ndarray
    superbad_counts: np.ndarray
    bad_threshold: float
    superbad_threshold: float
    bad_exceedance: float
    superbad_exceedance: float
    predicted_bad: float
    predicted_superbad: float

    @property
    def mean_bad(self):
        return float(np.mean(self.bad_counts))

    @property
    def mean_superbad(self):
        return float(np.mean(self.superbad_counts))


def cardinality_stats(reports, sched: ThresholdSchedule, min_seeds=20):
    """Exceedance frequencies of the bad and superbad set sizes over seeds."""
    if len(reports) < min_seeds:
        raise ConfigError(f"need at least {min_seeds} seeds, got {len(reports)}")
    bad = np.array([r.counts[BAD] for r in reports])
    sb = np.array([r.counts[SUPERBAD] for r in reports])
    n = sched.n
    return CardinalityStats(
        n=n, seeds=len(reports), bad_counts=bad, superbad_counts=sb,
        bad_threshold=sched.bad_count_threshold, superbad_threshold=sched.superbad_count_threshold,
        bad_exceedance=float(np.mean(bad >= sched.bad_count_threshold)),
        superbad_exceedance=float(np.mean(sb >= sched.superbad_count_threshold)),
        predicted_bad=float(n) ** 2 * sched.r_b ** 2 * sched.v_b ** 4,
        predicted_superbad=float(n) ** 2 * sched.r_s ** 2 * sched.v_s ** 4)


# ------------------------------------------------------------- scaling fits

@dataclass
class ScalingFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    excluded: list = field(default_factory=list)

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def scaling_fit(x, y, min_points=3):
    """Least squares of ln y on ln x; nonpositive y are dropped with a warning."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ConfigError("x and y differ in length")
    keep = (y > 0) & np.isfinite(y) & (x > 0)
    excluded = [(float(a), float(b)) for a, b in zip(x[~keep], y[~keep])]
    if excluded:
        warnings.warn(f"excluded nonpositive samples {excluded}", RuntimeWarning, stacklevel=2)
    xs, ys = x[keep], y[keep]
    if len(np.unique(xs)) < min_points:
        raise ConfigError(f"need at least {min_points} distinct abscissae")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    if not math.isfinite(slope):
        raise ConfigError("non-finite slope")
    return ScalingFit(xs, ys, float(slope), float(intercept), resid, excluded)


# -------------------------------------------------------- cut-off convergence

def flow_distance(a: TrajectoryRecord, b: TrajectoryRecord):
    """Sup over points and times of the phase-space infinity-norm difference."""
    if a.q.shape != b.q.shape:
        raise ConfigError("records differ in shape")
    return float(max(np.abs(a.q - b.q).max(initial=0.0), np.abs(a.p - b.p).max(initial=0.0)))


def cutoff_paths(density, cut_radii, engine: MeanFieldEngine, tracers, integ, record_stride=1):
    """Tracer records for each cut radius with a fixed reference seed."""
    return {float(c): evolve_lifted(engine.with_cut(float(c)), density, tracers, integ, record_stride)[1]
            for c in sorted(set(float(c) for c in cut_radii))}


def cutoff_convergence(density, cut_radii, engine: MeanFieldEngine, tracers, integ,
                       baseline=None, record_stride=1):
    """Deviation of each cut-radius flow from the baseline (default: smallest radius).

    Returns (ScalingFit of deviation against cut radius, {c: deviation}).
    """
    radii = sorted(set(float(c) for c in cut_radii))
    base = radii[0] if baseline is None else float(baseline)
    paths = cutoff_paths(density, radii + [base], engine, tracers, integ, record_stride)
    devs = {c: flow_distance(paths[c], paths[base]) for c in radii if c != base}
    fit = scaling_fit(list(devs), list(devs.values()), min_points=2) if len(devs) >= 2 else None
    return fit, devs


def paired_cutoff_deviation(density, cut_radii, engine, tracers, integ, factor=4.0, record_stride=1):
    """Deviation between cut c and c/factor for each c (frozen-field ladder)."""
    out = {}
    for c in cut_radii:
        paths = cutoff_paths(density, [c, c / factor], engine, tracers, integ, record_stride)
        out[float(c)] = flow_distance(paths[float(c)], paths[float(c) / factor])
    return out
