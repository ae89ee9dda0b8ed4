"""Collision classes, good/bad/superbad labels, threshold schedules and stopping times.

A pair (Y, Z) belongs to the class ((r, R), (v, V)) on the window [t1, t2] when
the smallest grid distance of their tracer paths in the window lies in [r, R]
and the velocity difference at a time attaining that minimum lies in [v, V].
Grid times whose distance is within ``TIE_REL`` (relative) of the minimum all
count as attaining it; membership holds if any of them satisfies the velocity
band, and the first such time is the witness.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit, prange
from .dynamics import IntegratorSpec, MeanFieldEngine, TrajectoryRecord, evolve_tracers
from .errors import ConfigError, DomainError

TIE_REL = 1e-12
GOOD, BAD, SUPERBAD = "good", "bad", "superbad"
_LABELS = (GOOD, BAD, SUPERBAD)


@dataclass(frozen=True)
class CollisionClass:
    r_min: float
    r_max: float
    v_min: float
    v_max: float
    t1: float = 0.0
    t2: float = 1.0

    def __post_init__(self):
        if not (0 <= self.r_min <= self.r_max):
            raise ConfigError(f"need 0 <= r_min <= r_max, got ({self.r_min}, {self.r_max})")
        if not (0 <= self.v_min <= self.v_max):
            raise ConfigError(f"need 0 <= v_min <= v_max, got ({self.v_min}, {self.v_max})")
        if not (0 <= self.t1 <= self.t2):
            raise ConfigError(f"need 0 <= t1 <= t2, got ({self.t1}, {self.t2})")

    def check_horizon(self, horizon):
        if self.t2 > horizon * (1 + 1e-12):
            raise ConfigError(f"class window end {self.t2} exceeds horizon {horizon}")

    def lemma_bound(self):
        """R^2 V^4 (t2 - t1) + R^3 max(R, V)^3."""
        R, V = self.r_max, self.v_max
        if math.isinf(R) or math.isinf(V):
            return math.inf
        return R * R * V ** 4 * (self.t2 - self.t1) + R ** 3 * max(R, V) ** 3


@dataclass(frozen=True)
class ThresholdSchedule:
    n: int
    sigma: float
    r_b: float
    v_b: float
    r_s: float
    v_s: float
    delta_g: float
    delta_b: float
    delta_s: float
    good_radius_factor: float = 6.0

    def good_class(self, horizon):
        return CollisionClass(0.0, self.good_radius_factor * self.r_b, 0.0, self.v_b, 0.0, horizon)

    def superbad_class(self, horizon):
        return CollisionClass(0.0, self.r_s, 0.0, self.v_s, 0.0, horizon)

    @property
    def bad_count_threshold(self):
        return self.n ** (0.75 * (1 + self.sigma))

    @property
    def superbad_count_threshold(self):
        return self.n ** (2.0 / 9.0 * (1 + self.sigma))


SIGMA_MAX = 1.0 / 16.0  # largest sigma keeping delta_g < delta_b


def schedule(n, sigma):
    """Power-law thresholds for given N and sigma in (0, 1/16)."""
    if int(n) != n or n < 2:
        raise ConfigError(f"N must be an integer >= 2, got {n}")
    if not (0 < sigma < SIGMA_MAX):
        raise ConfigError(f"sigma must lie in (0, 1/16), got {sigma}")
    n = int(n)
    N = float(n)
    return ThresholdSchedule(
        n=n, sigma=sigma,
        r_b=N ** (-7 / 24 - sigma), v_b=N ** (-1 / 6),
        r_s=N ** (-1 / 3 - sigma), v_s=N ** (-5 / 18),
        delta_g=N ** (-5 / 12 + sigma), delta_b=N ** (-7 / 24 - sigma), delta_s=N ** (-1 / 6 - sigma))


def custom_schedule(n, sigma, r_b, v_b, r_s, v_s, good_radius_factor=6.0):
    """Schedule with explicit class thresholds (fixtures and degenerate cases)."""
    base = schedule(n, sigma)
    return ThresholdSchedule(n, sigma, r_b, v_b, r_s, v_s, base.delta_g, base.delta_b, base.delta_s,
                             good_radius_factor)


# --------------------------------------------------------------- pair windows

def window_indices(times, t1, t2):
    """Indices k with t1 <= times[k] <= t2 (grid tolerance 1e-9 of the spacing)."""
    times = np.asarray(times, dtype=float)
    tol = 1e-9 * (times[1] - times[0] if len(times) > 1 else 1.0)
    k1 = int(np.searchsorted(times, t1 - tol, side="left"))
    k2 = int(np.searchsorted(times, t2 + tol, side="right")) - 1
    if k1 > k2:
        raise ConfigError(f"class window [{t1}, {t2}] contains no grid time")
    return k1, k2


def window_membership(dq, dv, times, cls: CollisionClass):
    """Membership test on precomputed relative paths dq, dv of shape (K+1, 3)."""
    k1, k2 = window_indices(times, cls.t1, cls.t2)
    d = np.sqrt(np.sum(np.asarray(dq)[k1:k2 + 1] ** 2, axis=1))
    v = np.sqrt(np.sum(np.asarray(dv)[k1:k2 + 1] ** 2, axis=1))
    dmin = d.min()
    if not (cls.r_min <= dmin <= cls.r_max):
        return False, None
    for k in np.flatnonzero(d <= dmin * (1 + TIE_REL)):
        if cls.v_min <= v[k] <= cls.v_max:
            return True, float(times[k1 + k])
    return False, None


@dataclass(frozen=True)
class TracerFlow:
    """Context for evolving phase points along the mean-field tracer flow."""

    engine: MeanFieldEngine
    integ: IntegratorSpec
    reference: TrajectoryRecord | None = None
    record_stride: int = 1

    def paths(self, points):
        return evolve_tracers(self.engine, self.reference, points, self.integ, self.record_stride)


def _as_point(x):
    if hasattr(x, "q"):
        return np.concatenate([np.asarray(x.q, float), np.asarray(x.p, float)])
    return np.asarray(x, dtype=float).reshape(6)


def _pair_paths(Z, Y, flow):
    z, y = _as_point(Z), _as_point(Y)
    if np.array_equal(z, y):
        raise DomainError("class membership is undefined for Z = Y")
    if isinstance(flow, TrajectoryRecord):
        rec = flow
    else:
        rec = flow.paths(np.stack([y, z]))
    return rec.q[:, 1] - rec.q[:, 0], rec.p[:, 1] - rec.p[:, 0], rec.times


def class_membership(Z, Y, cls: CollisionClass, flow):
    """(member, witness time) for Z relative to Y.

    ``flow`` is a TracerFlow, or a two-point TrajectoryRecord holding the paths
    of (Y, Z) in that order.
    """
    dq, dv, times = _pair_paths(Z, Y, flow)
    cls.check_horizon(times[-1])
    return window_membership(dq, dv, times, cls)


def good_set_test(Y, Z, sched: ThresholdSchedule, flow):
    """True iff Z lies in the good set of Y (no slow close encounter)."""
    dq, dv, times = _pair_paths(Z, Y, flow)
    member, _ = window_membership(dq, dv, times, sched.good_class(times[-1]))
    return not member


# ------------------------------------------------------------- batched scans

@njit(parallel=True, cache=True)
def _pair_window_stats(dq, dv, tie):
    """Per pair: min distance, first argmin, tie count, speed at first argmin."""
    kk, n = dq.shape[0], dq.shape[1]
    dmin = np.empty(n)
    kmin = np.empty(n, dtype=np.int64)
    ntie = np.empty(n, dtype=np.int64)
    vmin = np.empty(n)
    for j in prange(n):
        best = np.inf
        for k in range(kk):
            d = math.sqrt(dq[k, j, 0] ** 2 + dq[k, j, 1] ** 2 + dq[k, j, 2] ** 2)
            if d < best:
                best = d
        lim = best * (1.0 + tie)
        first = -1
        count = 0
        for k in range(kk):
            d = math.sqrt(dq[k, j, 0] ** 2 + dq[k, j, 1] ** 2 + dq[k, j, 2] ** 2)
            if d <= lim:
                count += 1
                if first < 0:
                    first = k
        dmin[j] = best
        kmin[j] = first
        ntie[j] = count
        vmin[j] = math.sqrt(dv[first, j, 0] ** 2 + dv[first, j, 1] ** 2 + dv[first, j, 2] ** 2)
    return dmin, kmin, ntie, vmin


@dataclass
class PairEncounters:
    """Closest-approach data of many (Y, Z) pairs over one window."""

    dmin: np.ndarray
    kmin: np.ndarray
    ntie: np.ndarray
    vmin: np.ndarray
    dq: np.ndarray = field(repr=False)
    dv: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)

    def members(self, cls: CollisionClass):
        """Boolean membership of every pair (exact any-witness rule)."""
        hit = (self.dmin >= cls.r_min) & (self.dmin <= cls.r_max)
        single = hit & (self.ntie == 1)
        out = single & (self.vmin >= cls.v_min) & (self.vmin <= cls.v_max)
        for j in np.flatnonzero(hit & (self.ntie > 1)):
            out[j] = window_membership(self.dq[:, j], self.dv[:, j], self.times,
                                       CollisionClass(cls.r_min, cls.r_max, cls.v_min, cls.v_max,
                                                      self.times[0], self.times[-1]))[0]
        return out


def pair_encounters(rec_y: TrajectoryRecord, rec_z: TrajectoryRecord, t1=0.0, t2=None):
    """Closest approaches of pair j = (rec_y point j, rec_z point j) on [t1, t2]."""
    if rec_y.q.shape != rec_z.q.shape or rec_y.frame_dt != rec_z.frame_dt:
        raise ConfigError("pair records must share grid and size")
    times = rec_y.times
    t2 = times[-1] if t2 is None else t2
    k1, k2 = window_indices(times, t1, t2)
    dq = np.ascontiguousarray(rec_z.q[k1:k2 + 1] - rec_y.q[k1:k2 + 1])
    dv = np.ascontiguousarray(rec_z.p[k1:k2 + 1] - rec_y.p[k1:k2 + 1])
    dmin, kmin, ntie, vmin = _pair_window_stats(dq, dv, TIE_REL)
    return PairEncounters(dmin, kmin, ntie, vmin, dq, dv, times[k1:k2 + 1])


@njit(cache=True)
def _pair_scan(qi, pi, qj, pj, kk, tie, r_lo, r_hi, v_lo, v_hi):
    # returns first witness frame for the class, or -1
    best = np.inf
    for k in range(kk):
        d = (qi[k, 0] - qj[k, 0]) ** 2 + (qi[k, 1] - qj[k, 1]) ** 2 + (qi[k, 2] - qj[k, 2]) ** 2
        if d < best:
            best = d
    best = math.sqrt(best)
    if best < r_lo or best > r_hi:
        return -1
    lim = best * (1.0 + tie)
    for k in range(kk):
        d = math.sqrt((qi[k, 0] - qj[k, 0]) ** 2 + (qi[k, 1] - qj[k, 1]) ** 2 + (qi[k, 2] - qj[k, 2]) ** 2)
        if d <= lim:
            v = math.sqrt((pi[k, 0] - pj[k, 0]) ** 2 + (pi[k, 1] - pj[k, 1]) ** 2
                          + (pi[k, 2] - pj[k, 2]) ** 2)
            if v >= v_lo and v <= v_hi:
                return k
    return -1


@njit(parallel=True, cache=True)
def _classify_scan(q, p, coarse, vmax, r_s, v_s, r_g, v_g, tie):
    """q, p: (n, K, 3) per-particle paths.  Returns partner/frame for both classes."""
    n, kk = q.shape[0], q.shape[1]
    nc = coarse.shape[0]
    sb_j = np.full(n, -1, dtype=np.int64)
    sb_k = np.full(n, -1, dtype=np.int64)
    ng_j = np.full(n, -1, dtype=np.int64)
    ng_k = np.full(n, -1, dtype=np.int64)
    reach = max(r_s, r_g)
    for i in prange(n):
        for j in range(n):
            if j == i:
                continue
            # conservative reject: lower bound of the distance between coarse samples
            vrel = vmax[i] + vmax[j]
            lower = np.inf
            prev = -1.0
            for c in range(nc):
                k = coarse[c]
                d = math.sqrt((q[i, k, 0] - q[j, k, 0]) ** 2 + (q[i, k, 1] - q[j, k, 1]) ** 2
                              + (q[i, k, 2] - q[j, k, 2]) ** 2)
                if c > 0:
                    span = coarse[c] - coarse[c - 1]
                    lb = 0.5 * (prev + d - vrel * span)
                    if lb < lower:
                        lower = lb
                if d < lower:
                    lower = d
                prev = d
            if lower > reach:
                continue
            if ng_j[i] < 0:
                k = _pair_scan(q[i], p[i], q[j], p[j], kk, tie, 0.0, r_g, 0.0, v_g)
                if k >= 0:
                    ng_j[i] = j
                    ng_k[i] = k
            k = _pair_scan(q[i], p[i], q[j], p[j], kk, tie, 0.0, r_s, 0.0, v_s)
            if k >= 0:
                sb_j[i] = j
                sb_k[i] = k
                break
    return sb_j, sb_k, ng_j, ng_k


@dataclass
class TaxonomyReport:
    labels: list
    witnesses: dict
    times: np.ndarray = field(repr=False, default=None)

    @property
    def counts(self):
        return {name: int(sum(1 for x in self.labels if x == name)) for name in _LABELS}

    def indices(self, label):
        return np.array([i for i, x in enumerate(self.labels) if x == label], dtype=np.int64)

    def to_json(self):
        data = {"counts": self.counts, "labels": list(self.labels),
                "witnesses": {str(i): list(w) for i, w in sorted(self.witnesses.items())}}
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        wit = {int(i): tuple(w) for i, w in data["witnesses"].items()}
        return cls(list(data["labels"]), wit)


def classify_record(tracers: TrajectoryRecord, sched: ThresholdSchedule, coarse_every=8):
    """Label every tracer from its full-horizon encounters with all others."""
    q = np.ascontiguousarray(np.transpose(tracers.q, (1, 0, 2)))
    p = np.ascontiguousarray(np.transpose(tracers.p, (1, 0, 2)))
    n, kk = q.shape[0], q.shape[1]
    times = tracers.times
    if n == 0:
        return TaxonomyReport([], {}, times)
    coarse = np.unique(np.concatenate([np.arange(0, kk, coarse_every), [kk - 1]])).astype(np.int64)
    # largest recorded step of each path: the triangle inequality then bounds the
    # distance at every frame between two coarse samples
    vmax = np.sqrt(np.sum(np.diff(q, axis=1) ** 2, axis=2)).max(axis=1) if kk > 1 else np.zeros(n)
    vmax = vmax * (1 + 1e-12)
    sb_j, sb_k, ng_j, ng_k = _classify_scan(q, p, coarse, vmax, sched.r_s, sched.v_s,
                                            sched.good_radius_factor * sched.r_b, sched.v_b, TIE_REL)
    labels = []
    witnesses = {}
    for i in range(n):
        if sb_j[i] >= 0:
            labels.append(SUPERBAD)
            witnesses[i] = (i, int(sb_j[i]), float(times[sb_k[i]]))
        elif ng_j[i] >= 0:
            labels.append(BAD)
            witnesses[i] = (i, int(ng_j[i]), float(times[ng_k[i]]))
        else:
            labels.append(GOOD)
    return TaxonomyReport(labels, witnesses, times)


def classify(system, sched: ThresholdSchedule, flow):
    """Classify a particle system; ``flow`` is a TracerFlow or a precomputed tracer record."""
    if isinstance(flow, TrajectoryRecord):
        rec = flow
    else:
        rec = flow.paths((system.q, system.p))
    if rec.n_points != len(system.q):
        raise ConfigError("tracer record does not match the system size")
    return classify_record(rec, sched)


# ------------------------------------------------------------ stopping times

@dataclass(frozen=True)
class StoppingTimes:
    tau_g: float
    tau_b: float
    tau_s: float

    @property
    def tau(self):
        return min(self.tau_g, self.tau_b, self.tau_s)


def particle_deviation(micro: TrajectoryRecord, tracers: TrajectoryRecord):
    """(K+1, n) per-particle phase-space infinity-norm deviation."""
    if micro.q.shape != tracers.q.shape:
        raise ConfigError(f"record shapes differ: {micro.q.shape} vs {tracers.q.shape}")
    if micro.n_frames > 1 and abs(micro.frame_dt - tracers.frame_dt) > 1e-12 * micro.frame_dt:
        raise ConfigError("micro and tracer time grids differ")
    dq = np.abs(micro.q - tracers.q).max(axis=2)
    dp = np.abs(micro.p - tracers.p).max(axis=2)
    return np.maximum(dq, dp)


def stopping_times(micro, tracers, report: TaxonomyReport, sched: ThresholdSchedule):
    dev = particle_deviation(micro, tracers)
    times = micro.times
    if len(report.labels) != dev.shape[1]:
        raise ConfigError("report does not match the trajectory size")

    def last_compliant(label, limit):
        idx = report.indices(label)
        if len(idx) == 0:
            return float(times[-1])
        running = np.maximum.accumulate(dev[:, idx].max(axis=1))
        bad = np.flatnonzero(running > limit)
        if len(bad) == 0:
            return float(times[-1])
        return float(times[bad[0] - 1]) if bad[0] > 0 else 0.0

    return StoppingTimes(last_compliant(GOOD, sched.delta_g), last_compliant(BAD, sched.delta_b),
                         last_compliant(SUPERBAD, sched.delta_s))


# ------------------------------------------------------------- dyadic cover

def dyadic_cover(n, beta, delta, horizon=1.0):
    """Collision classes tiling phase space at base scale r = v = N^-beta.

    Distance bands [N^(k delta) r, N^((k+1) delta) r] and speed bands
    [N^(l delta) v, N^((l+1) delta) v] for 0 <= k, l <= floor(beta/delta),
    plus the core [0, r] x [0, v], the fast classes [1, inf) and the far class
    [N^-delta, inf) x [0, inf).
    """
    if not (beta > 0 and delta > 0):
        raise ConfigError("beta and delta must be positive")
    N = float(n)
    r = v = N ** (-beta)
    kmax = int(math.floor(beta / delta + 1e-9))
    edge = [N ** (k * delta) * r for k in range(kmax + 2)]
    out = [CollisionClass(0, r, 0, v, 0, horizon)]
    out += [CollisionClass(0, r, edge[l], edge[l + 1], 0, horizon) for l in range(kmax + 1)]
    out.append(CollisionClass(0, r, 1.0, math.inf, 0, horizon))
    out += [CollisionClass(edge[k], edge[k + 1], 0, v, 0, horizon) for k in range(kmax + 1)]
    out += [CollisionClass(edge[k], edge[k + 1], edge[l], edge[l + 1], 0, horizon)
            for k in range(kmax + 1) for l in range(kmax + 1)]
    out += [CollisionClass(edge[k], edge[k + 1], 1.0, math.inf, 0, horizon) for k in range(kmax + 1)]
    out.append(CollisionClass(N ** (-delta), math.inf, 0, math.inf, 0, horizon))
    return out
