"""Time evolution: the interacting N-body flow and the mean-field tracer flow.

All flows use kick-drift-kick leapfrog with a fixed step.  Tracers are moved
in the field generated by a reference ensemble and never act back on it, so a
set of tracers is exactly the product of one-particle flows.

Mean-field backends
-------------------
reference-ensemble  direct 1/M-weighted cut-off sum over the reference points
radial-shell        field of the spherically averaged reference cloud (each
                    point smeared over a shell about the centroid), O(log M)
                    per evaluation after an O(M log M) sort
free                no force (ballistic fixture)
frozen-ball         static uniform ball of unit mass and radius ``ball_radius``
"""
from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit, prange
from .ensemble import DensityModel, SampleSpec, sample
from .errors import ConfigError, NumericalAbort
from .kernels import ParticleSystem, force_from_sources, force_on_self

BACKENDS = ("reference-ensemble", "radial-shell", "free", "frozen-ball")
FLOW_KINDS = {"micro": 0, "tracer": 1, "reference": 2}
RESOLUTION = 1e-12


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float
    steps: int
    scheme: str = "leapfrog"

    def __post_init__(self):
        if self.scheme not in ("leapfrog", "velocity-verlet"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError(f"steps must be a nonnegative integer, got {self.steps}")

    @property
    def horizon(self):
        return self.dt * self.steps

    @classmethod
    def default(cls, horizon, cut_radius=0.0, v_max=0.0, base_steps=4096):
        """dt = min(T/base_steps, c/(10 v_max)), then shrunk so steps*dt = T."""
        dt = horizon / base_steps
        if cut_radius > 0 and v_max > 0:
            dt = min(dt, cut_radius / (10.0 * v_max))
        steps = int(math.ceil(horizon / dt - 1e-9))
        return cls(horizon / steps, steps)

    def check(self, cut_radius, v_max):
        """Warn when dt * v_max exceeds c/10; returns whether the bound holds."""
        ok = cut_radius <= 0 or self.dt * v_max <= cut_radius / 10.0 * (1 + 1e-12)
        if not ok:
            warnings.warn(f"dt*v_max = {self.dt * v_max:.3g} exceeds cut_radius/10 = {cut_radius / 10:.3g}",
                          RuntimeWarning, stacklevel=2)
        return ok


@dataclass(frozen=True)
class TrajectoryRecord:
    """Snapshots at times k*frame_dt, k = 0..K; q and p have shape (K+1, n, 3)."""

    q: np.ndarray
    p: np.ndarray
    frame_dt: float
    kind: str = "tracer"
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.ndim != 3 or q.shape[2] != 3 or q.shape != p.shape:
            raise ConfigError(f"record arrays must be (K+1, n, 3), got {q.shape} and {p.shape}")
        if self.kind not in FLOW_KINDS:
            raise ConfigError(f"unknown flow kind {self.kind!r}")
        if q.shape[0] > 1 and not self.frame_dt > 0:
            raise ConfigError("frame_dt must be positive")
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def times(self):
        return np.arange(self.q.shape[0]) * self.frame_dt

    @property
    def n_frames(self):
        return self.q.shape[0]

    @property
    def n_points(self):
        return self.q.shape[1]

    def frames(self):
        return [(self.q[k], self.p[k]) for k in range(self.n_frames)]

    def select(self, index):
        """Sub-record of the given point indices."""
        return TrajectoryRecord(self.q[:, index], self.p[:, index], self.frame_dt, self.kind,
                                dict(self.provenance))


@dataclass(frozen=True)
class MeanFieldEngine:
    backend: str = "radial-shell"
    reference_count: int = 4096
    reference_seed: int = 0
    cut_radius: float = 0.0
    sign: int = 1
    ball_radius: float = 1.0
    reference_stride: int = 1

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.reference_count < 1:
            raise ConfigError("reference_count must be >= 1")
        if self.cut_radius < 0:
            raise ConfigError("cut_radius must be >= 0")
        if self.sign not in (1, -1):
            raise ConfigError("sign must be +1 or -1")
        if self.backend == "reference-ensemble" and self.cut_radius == 0:
            raise ConfigError("the reference-ensemble backend needs cut_radius > 0")
        if self.reference_stride < 1:
            raise ConfigError("reference_stride must be >= 1")

    def with_cut(self, cut_radius):
        return MeanFieldEngine(self.backend, self.reference_count, self.reference_seed, cut_radius,
                               self.sign, self.ball_radius, self.reference_stride)

    @property
    def needs_reference(self):
        return self.backend in ("reference-ensemble", "radial-shell")


# ------------------------------------------------------------ radial-shell field
#
# A unit mass spread uniformly over a sphere of radius R about the origin,
# seen through the cut kernel at distance r, exerts the radial field a*S(r, R):
#   r + R <= c          S = r / c^3
#   |r - R| >= c        S = 1/r^2 if R < r else 0
#   otherwise           S = B(R) / (4 r^2 R),  B = b0 + b1 R + b2 R^2 + b4 R^4
# with the b_i below (polynomials in r and 1/c).  Sorting the radii turns the
# sum over all shells into prefix sums of 1, R, R^3 and suffix sums of 1/R.

@njit(cache=True)
def _bisect(a, v, right):
    lo = 0
    hi = a.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v or (right and a[mid] == v):
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _shell_coeffs(r, c):
    c3 = c * c * c
    r2 = r * r
    b0 = 1.5 * r2 / c - 0.75 * c - 0.75 * r2 * r2 / c3
    b1 = 2.0 + 2.0 * r2 * r / c3
    b2 = -1.5 / c - 1.5 * r2 / c3
    b4 = 0.25 / c3
    return b0, b1, b2, b4


@njit(cache=True)
def shell_field(r, R, c):
    """Radial field (per unit mass, sign +1) of a shell of radius R at radius r."""
    if r <= 0.0:
        return 0.0
    if c == 0.0:
        return 1.0 / (r * r) if R < r else 0.0
    if r + R <= c:
        return r / (c * c * c)
    if abs(r - R) >= c:
        return 1.0 / (r * r) if R < r else 0.0
    b0, b1, b2, b4 = _shell_coeffs(r, c)
    B = b0 + b1 * R + b2 * R * R + b4 * R * R * R * R
    return B / (4.0 * r * r * R)


@njit(cache=True)
def _radial_scalar(r, radii, pre1, pre3, suf_inv, c):
    m = radii.shape[0]
    if r <= RESOLUTION:
        return 0.0
    if c == 0.0:
        return _bisect(radii, r, False) / (r * r)
    if r >= c:
        n_in = _bisect(radii, r - c, False)
        n_core = 0
        lo = n_in
    else:
        n_in = 0
        n_core = _bisect(radii, c - r, True)
        lo = n_core
    hi = _bisect(radii, r + c, False)
    if hi > m:
        hi = m
    total = n_in / (r * r) + n_core * r / (c * c * c)
    if hi > lo:
        b0, b1, b2, b4 = _shell_coeffs(r, c)
        s_inv = suf_inv[lo] - suf_inv[hi]
        s1 = pre1[hi] - pre1[lo]
        s3 = pre3[hi] - pre3[lo]
        total += (b0 * s_inv + b1 * (hi - lo) + b2 * s1 + b4 * s3) / (4.0 * r * r)
    return total


@njit(parallel=True, cache=True)
def _radial_field(rel, radii, pre1, pre3, suf_inv, c, out):
    for j in prange(rel.shape[0]):
        x, y, z = rel[j, 0], rel[j, 1], rel[j, 2]
        r = math.sqrt(x * x + y * y + z * z)
        s = _radial_scalar(r, radii, pre1, pre3, suf_inv, c)
        if s != 0.0:
            s /= r
        out[j, 0] = s * x
        out[j, 1] = s * y
        out[j, 2] = s * z


class RadialProfile:
    """Spherically averaged field of a point cloud about its centroid."""

    def __init__(self, q, cut_radius, sign=1):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        if len(q) == 0:
            raise ConfigError("reference frame must be nonempty")
        self.mass = len(q)
        self.cut = float(cut_radius)
        self.sign = sign
        self.centroid = q.mean(axis=0)
        radii = np.sqrt(np.sum((q - self.centroid) ** 2, axis=1))
        self.order = np.argsort(radii, kind="stable")
        self.radii = np.ascontiguousarray(radii[self.order])
        zero = np.zeros(1)
        self.pre1 = np.concatenate([zero, np.cumsum(self.radii)])
        self.pre3 = np.concatenate([zero, np.cumsum(self.radii ** 3)])
        with np.errstate(divide="ignore"):
            inv = np.where(self.radii > 0, 1.0 / self.radii, 0.0)
        self.suf_inv = np.concatenate([np.cumsum(inv[::-1])[::-1], zero])

    def field(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        rel = np.ascontiguousarray(x.reshape(-1, 3) - self.centroid)
        out = np.empty_like(rel)
        _radial_field(rel, self.radii, self.pre1, self.pre3, self.suf_inv, self.cut, out)
        out *= self.sign / self.mass
        return out.reshape(shape)

    def self_field(self, q):
        """Field at the cloud's own points with each point's own shell removed."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        out = self.field(q) * self.mass
        if self.cut > 0:
            rel = q - self.centroid
            r = np.sqrt(np.sum(rel * rel, axis=1))
            own = np.array([shell_field(ri, ri, self.cut) for ri in r]) if len(r) < 64 else \
                _own_shell(r, self.cut)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > RESOLUTION, rel / r[:, None], 0.0)
            out -= self.sign * own[:, None] * unit
        return out / self.mass


@njit(parallel=True, cache=True)
def _own_shell(r, c):
    out = np.empty_like(r)
    for i in prange(r.shape[0]):
        out[i] = shell_field(r[i], r[i], c)
    return out


def radial_force(engine: MeanFieldEngine, reference_frame, x):
    """Mean-field force at x from the spherically averaged reference frame."""
    if engine.backend != "radial-shell":
        raise ConfigError("radial_force requires the radial-shell backend")
    q = _frame_positions(reference_frame)
    return RadialProfile(q, engine.cut_radius, engine.sign).field(x)


def _frame_positions(frame):
    if isinstance(frame, tuple):
        frame = frame[0]
    if isinstance(frame, (list,)) and frame and hasattr(frame[0], "q"):
        return np.array([pt.q for pt in frame])
    arr = np.asarray(frame, dtype=np.float64)
    return arr[:, :3] if arr.ndim == 2 and arr.shape[1] == 6 else arr.reshape(-1, 3)


# --------------------------------------------------------- frozen uniform ball

def ball_field(r, ball_radius, cut_radius):
    """Radial field (sign +1) at radius r of a unit-mass uniform ball seen through the cut kernel."""
    r = np.asarray(r, dtype=np.float64)
    R0, c = float(ball_radius), float(cut_radius)
    out = np.zeros_like(r)
    pos = r > RESOLUTION
    rr = r[pos]
    if c == 0:
        out[pos] = np.where(rr <= R0, rr / R0 ** 3, 1.0 / rr ** 2)
        return out
    cube = lambda v: np.clip(v, 0.0, R0) ** 3 / R0 ** 3  # noqa: E731
    val = cube(rr - c) / rr ** 2 + cube(c - rr) * rr / c ** 3
    lo = np.clip(np.abs(rr - c), 0.0, R0)
    hi = np.clip(rr + c, 0.0, R0)
    c3 = c ** 3
    b0 = 1.5 * rr ** 2 / c - 0.75 * c - 0.75 * rr ** 4 / c3
    b1 = 2.0 + 2.0 * rr ** 3 / c3
    b2 = -1.5 / c - 1.5 * rr ** 2 / c3
    b4 = 0.25 / c3

    def prim(R):
        return b0 * R ** 2 / 2 + b1 * R ** 3 / 3 + b2 * R ** 4 / 4 + b4 * R ** 6 / 6

    val = val + np.where(hi > lo, 3.0 / (4 * rr ** 2 * R0 ** 3) * (prim(hi) - prim(lo)), 0.0)
    out[pos] = val
    return out


def _ball_force(engine, x):
    r = np.sqrt(np.sum(x * x, axis=1))
    s = ball_field(r, engine.ball_radius, engine.cut_radius)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(r > RESOLUTION, s / r, 0.0)
    return engine.sign * s[:, None] * x


# ------------------------------------------------------------------ stepping

def _self_force(engine, q):
    m = len(q)
    if engine.backend == "reference-ensemble":
        return force_on_self(q, engine.cut_radius, engine.sign, 1.0 / m)
    if engine.backend == "radial-shell":
        return RadialProfile(q, engine.cut_radius, engine.sign).self_field(q)
    return np.zeros_like(q)


def _external_force(engine, ref_q, x):
    if engine.backend == "reference-ensemble":
        return force_from_sources(x, ref_q, engine.cut_radius, engine.sign, 1.0 / len(ref_q))
    if engine.backend == "radial-shell":
        return RadialProfile(ref_q, engine.cut_radius, engine.sign).field(x)
    if engine.backend == "frozen-ball":
        return _ball_force(engine, x)
    return np.zeros_like(x)


def _check_finite(q, p, k):
    if not (np.isfinite(q).all() and np.isfinite(p).all()):
        raise NumericalAbort("non-finite state during integration", k)


def _check_stride(integ, stride):
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"record_stride must be a positive integer, got {stride}")
    if integ.steps % stride:
        raise ConfigError(f"steps={integ.steps} is not a multiple of record_stride={stride}")


def _leapfrog(q, p, force, integ, stride):
    """Generic KDK loop; force(q, k) is the acceleration at grid step k."""
    dt = integ.dt
    frames_q = [q.copy()]
    frames_p = [p.copy()]
    _check_finite(q, p, 0)
    a = force(q, 0)
    for k in range(1, integ.steps + 1):
        p += 0.5 * dt * a
        q += dt * p
        a = force(q, k)
        p += 0.5 * dt * a
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise NumericalAbort("non-finite state during integration", k)
        if k % stride == 0:
            frames_q.append(q.copy())
            frames_p.append(p.copy())
    return np.array(frames_q), np.array(frames_p)


def evolve_micro(system: ParticleSystem, integ: IntegratorSpec, record_stride=1):
    """Leapfrog trajectory of the interacting N-body system."""
    prm = system.params
    if prm.cut_radius <= 0:
        raise ConfigError("microscopic dynamics requires cut_radius > 0")
    _check_stride(integ, record_stride)
    weight = 1.0 / prm.n_particles

    def force(q, k):
        return force_on_self(q, prm.cut_radius, prm.sign, weight)

    qs, ps = _leapfrog(system.q.copy(), system.p.copy(), force, integ, record_stride)
    prov = {"flow": "micro", "n": prm.n_particles, "cut_radius": prm.cut_radius, "sign": prm.sign,
            "dt": integ.dt, "steps": integ.steps, "stride": record_stride}
    return TrajectoryRecord(qs, ps, integ.dt * record_stride, "micro", prov)


def _reference_initial(engine, density, reference_floor=None):
    if reference_floor is not None and engine.reference_count < reference_floor:
        raise ConfigError(f"reference_count {engine.reference_count} below floor {reference_floor}")
    return sample(SampleSpec(density, engine.reference_count, engine.reference_seed))


def evolve_reference(engine: MeanFieldEngine, density: DensityModel, integ: IntegratorSpec,
                     record_stride=None, reference_floor=None):
    """Evolve M reference points under their own mean field.

    ``reference_floor`` (typically 16 N) is enforced when given.  The record
    stride defaults to the engine's ``reference_stride``.
    """
    stride = engine.reference_stride if record_stride is None else record_stride
    _check_stride(integ, stride)
    q, p = _reference_initial(engine, density, reference_floor)
    if engine.backend == "frozen-ball":
        qs = np.repeat(q[None], integ.steps // stride + 1, axis=0)
        ps = np.repeat(p[None], integ.steps // stride + 1, axis=0)
    else:
        qs, ps = _leapfrog(q, p, lambda x, k: _self_force(engine, x), integ, stride)
    prov = {"flow": "reference", "backend": engine.backend, "m": engine.reference_count,
            "seed": engine.reference_seed, "cut_radius": engine.cut_radius, "dt": integ.dt,
            "steps": integ.steps, "stride": stride}
    return TrajectoryRecord(qs, ps, integ.dt * stride, "reference", prov)


class _Interpolated:
    """Reference positions at tracer grid steps, linear in time between frames."""

    def __init__(self, reference: TrajectoryRecord, integ: IntegratorSpec):
        ratio = reference.frame_dt / integ.dt if reference.n_frames > 1 else 1.0
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9 * ratio:
            raise ConfigError(f"reference frame spacing {reference.frame_dt} is not a multiple "
                              f"of the tracer step {integ.dt}")
        if integ.steps > (reference.n_frames - 1) * m:
            raise ConfigError("tracer horizon exceeds the reference trajectory")
        self.ref = reference
        self.m = m

    def __call__(self, k):
        f, rem = divmod(k, self.m)
        if rem == 0:
            return self.ref.q[f]
        w = rem / self.m
        return (1.0 - w) * self.ref.q[f] + w * self.ref.q[f + 1]


def _tracer_arrays(tracers):
    if isinstance(tracers, tuple) and len(tracers) == 2:
        q, p = tracers
    elif isinstance(tracers, list) and tracers and hasattr(tracers[0], "q"):
        q = np.array([t.q for t in tracers])
        p = np.array([t.p for t in tracers])
    else:
        arr = np.asarray(tracers, dtype=np.float64).reshape(-1, 6)
        q, p = arr[:, :3], arr[:, 3:]
    q = np.array(q, dtype=np.float64).reshape(-1, 3)
    p = np.array(p, dtype=np.float64).reshape(-1, 3)
    if q.shape != p.shape:
        raise ConfigError("tracer positions and velocities differ in shape")
    return q, p


def evolve_tracers(engine: MeanFieldEngine, reference, tracers, integ: IntegratorSpec,
                   record_stride=1, observer=None):
    """Advance non-interacting tracers in the reference ensemble's field.

    ``reference`` is a reference TrajectoryRecord (ignored by the free and
    frozen-ball backends).  ``observer(k, q, p)``, if given, is called at every
    grid step, which lets callers accumulate time integrals without storing
    the full trajectory.
    """
    _check_stride(integ, record_stride)
    q, p = _tracer_arrays(tracers)
    if engine.needs_reference:
        if reference is None:
            raise ConfigError(f"backend {engine.backend} needs a reference trajectory")
        positions = _Interpolated(reference, integ)
    else:
        positions = lambda k: None  # noqa: E731

    def force(x, k):
        return _external_force(engine, positions(k), x)

    qs, ps = _run_tracers(q, p, force, integ, record_stride, observer)
    prov = {"flow": "tracer", "backend": engine.backend, "cut_radius": engine.cut_radius,
            "sign": engine.sign, "dt": integ.dt, "steps": integ.steps, "stride": record_stride}
    return TrajectoryRecord(qs, ps, integ.dt * record_stride, "tracer", prov)


def _run_tracers(q, p, force, integ, stride, observer):
    dt = integ.dt
    _check_finite(q, p, 0)
    frames_q = [q.copy()]
    frames_p = [p.copy()]
    if observer is not None:
        observer(0, q, p)
    a = force(q, 0)
    for k in range(1, integ.steps + 1):
        p += 0.5 * dt * a
        q += dt * p
        a = force(q, k)
        p += 0.5 * dt * a
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise NumericalAbort("non-finite tracer state", k)
        if observer is not None:
            observer(k, q, p)
        if k % stride == 0:
            frames_q.append(q.copy())
            frames_p.append(p.copy())
    return np.array(frames_q), np.array(frames_p)


def evolve_lifted(engine: MeanFieldEngine, density: DensityModel, tracers, integ: IntegratorSpec,
                  record_stride=1, reference_stride=None, observer=None):
    """Evolve the reference ensemble and passive tracers in lockstep.

    Equivalent to evolve_reference followed by evolve_tracers with stride 1
    reference frames, without storing every reference frame.  Returns
    (reference_record, tracer_record); the reference record is kept at
    ``reference_stride`` (default: only the first and last frame).
    """
    _check_stride(integ, record_stride)
    q, p = _tracer_arrays(tracers)
    if not engine.needs_reference:
        rec = evolve_tracers(engine, None, (q, p), integ, record_stride, observer)
        return None, rec
    rstride = integ.steps if reference_stride is None else reference_stride
    rstride = max(int(rstride), 1)
    _check_stride(integ, rstride)
    rq, rp = _reference_initial(engine, density)
    dt = integ.dt
    ref_q, ref_p = [rq.copy()], [rp.copy()]
    ra = _self_force(engine, rq)
    _check_finite(q, p, 0)
    frames_q, frames_p = [q.copy()], [p.copy()]
    if observer is not None:
        observer(0, q, p)
    a = _external_force(engine, rq, q)
    for k in range(1, integ.steps + 1):
        rp += 0.5 * dt * ra
        rq += dt * rp
        p += 0.5 * dt * a
        q += dt * p
        if engine.backend == "radial-shell":
            prof = RadialProfile(rq, engine.cut_radius, engine.sign)
            ra = prof.self_field(rq)
            a = prof.field(q)
        else:
            ra = _self_force(engine, rq)
            a = _external_force(engine, rq, q)
        rp += 0.5 * dt * ra
        p += 0.5 * dt * a
        if not (np.isfinite(rp).all() and np.isfinite(p).all() and np.isfinite(q).all()):
            raise NumericalAbort("non-finite state during lifted integration", k)
        if observer is not None:
            observer(k, q, p)
        if k % record_stride == 0:
            frames_q.append(q.copy())
            frames_p.append(p.copy())
        if k % rstride == 0:
            ref_q.append(rq.copy())
            ref_p.append(rp.copy())
    prov = {"backend": engine.backend, "cut_radius": engine.cut_radius, "sign": engine.sign,
            "dt": dt, "steps": integ.steps, "m": engine.reference_count, "seed": engine.reference_seed}
    ref = TrajectoryRecord(np.array(ref_q), np.array(ref_p), dt * rstride, "reference",
                           dict(prov, flow="reference", stride=rstride))
    rec = TrajectoryRecord(np.array(frames_q), np.array(frames_p), dt * record_stride, "tracer",
                           dict(prov, flow="tracer", stride=record_stride))
    return ref, rec


# ------------------------------------------------------------- snapshot files

HEADER = struct.Struct("<4sIBQQd")
MAGIC = b"VPCL"
VERSION = 1


def write_snapshot(target, record: TrajectoryRecord):
    """Binary snapshot: header, then per frame q (n*3 f64) followed by p (n*3 f64)."""
    n = record.n_points
    head = HEADER.pack(MAGIC, VERSION, FLOW_KINDS[record.kind], n, record.n_frames, record.frame_dt)
    body = np.concatenate([record.q.reshape(record.n_frames, -1), record.p.reshape(record.n_frames, -1)],
                          axis=1).astype("<f8", copy=False)
    if isinstance(target, io.IOBase):
        target.write(head)
        target.write(body.tobytes())
        return
    with open(target, "wb") as fh:
        fh.write(head)
        fh.write(body.tobytes())


def read_snapshot(source):
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if len(data) < HEADER.size:
        raise ConfigError("snapshot truncated before header end")
    magic, version, kind, n, frames, dt = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ConfigError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise ConfigError(f"unsupported snapshot version {version}")
    kinds = {v: k for k, v in FLOW_KINDS.items()}
    if kind not in kinds:
        raise ConfigError(f"unknown flow kind code {kind}")
    expected = HEADER.size + frames * n * 6 * 8
    if len(data) != expected:
        raise ConfigError(f"snapshot size {len(data)} does not match header ({expected})")
    body = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(frames, 2, n, 3)
    return TrajectoryRecord(body[:, 0].astype(np.float64), body[:, 1].astype(np.float64), dt, kinds[kind])
