import io
import math

import numpy as np
import pytest
from scipy import integrate

from vpcl import calibration
from vpcl.dynamics import (IntegratorSpec, MeanFieldEngine, RadialProfile, TrajectoryRecord, ball_field,
                           evolve_lifted, evolve_micro, evolve_reference, evolve_tracers, radial_force,
                           read_snapshot, shell_field, write_snapshot)
from vpcl.ensemble import DensityModel, SampleSpec, sample
from vpcl.errors import ConfigError, NumericalAbort
from vpcl.kernels import ModelParams, ParticleSystem, force_from_sources, total_energy

GAUSS = DensityModel()
BALL = DensityModel("uniform-ball-gaussian", 1.0, 1.0)


# ------------------------------------------------------------- integrator spec

def test_default_integrator():
    it = IntegratorSpec.default(1.0, 0.1, 1.0)
    assert it.steps == 4096 and it.dt == 1 / 4096
    it = IntegratorSpec.default(1.0, 0.01, 2.0)
    assert it.dt * 2.0 <= 0.01 / 10 * (1 + 1e-12)
    assert it.dt * it.steps == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        assert not IntegratorSpec(0.1, 10).check(0.01, 1.0)
    with pytest.raises(ConfigError):
        IntegratorSpec(0.0, 1)
    with pytest.raises(ConfigError):
        IntegratorSpec(0.1, -1)


# ------------------------------------------------------------------ micro flow

def test_harmonic_period_two_body():
    n, beta = 2, 0.25
    prm = ModelParams.from_beta(n, beta, sign=-1)
    c = prm.cut_radius
    q = np.array([[0.05 * c, 0, 0], [-0.05 * c, 0, 0]])
    omega = math.sqrt(2 * n ** (3 * beta) / n)
    period = 2 * math.pi / omega
    integ = IntegratorSpec(period / 4000, 4000 * 5)
    rec = evolve_micro(ParticleSystem(prm, q), integ)
    x = rec.q[:, 0, 0] - rec.q[:, 1, 0]
    assert np.abs(x).max() < c  # stays on the linear branch
    t = rec.times
    up = np.where((x[:-1] < 0) & (x[1:] >= 0))[0]
    cross = t[up] - x[up] * (t[up + 1] - t[up]) / (x[up + 1] - x[up])
    measured = np.mean(np.diff(cross))
    assert measured == pytest.approx(period, rel=1e-3)


def test_mirror_symmetry():
    prm = ModelParams.from_beta(6, 0.3)
    half = np.array([[0.3, 0.1, -0.2], [0.05, 0.4, 0.1], [0.2, -0.3, 0.25]])
    q = np.concatenate([half, -half])
    rec = evolve_micro(ParticleSystem(prm, q), IntegratorSpec(1e-3, 2000), 100)
    assert np.abs(rec.q[:, :3] + rec.q[:, 3:]).max() <= 1e-12
    assert np.abs(rec.p[:, :3] + rec.p[:, 3:]).max() <= 1e-12


def test_zero_steps_identity():
    rng = np.random.default_rng(0)
    prm = ModelParams.from_beta(10, 0.3)
    q, p = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    rec = evolve_micro(ParticleSystem(prm, q, p), IntegratorSpec(0.1, 0))
    assert rec.n_frames == 1
    assert np.array_equal(rec.q[0], q) and np.array_equal(rec.p[0], p)


def test_micro_requires_cut():
    with pytest.raises(ConfigError):
        evolve_micro(ParticleSystem(ModelParams.explicit(2, 0.0), np.eye(2, 3)), IntegratorSpec(0.1, 1))


def test_micro_stride_must_divide():
    prm = ModelParams.from_beta(4, 0.3)
    with pytest.raises(ConfigError):
        evolve_micro(ParticleSystem(prm, np.eye(4, 3)), IntegratorSpec(0.1, 10), 3)


def test_numerical_abort_reports_step():
    prm = ModelParams.from_beta(2, 0.3)
    sysm = ParticleSystem(prm, [[0, 0, 0], [1, 0, 0]], [[1e306, 0, 0], [0, 0, 0]])
    with pytest.raises(NumericalAbort) as info, np.errstate(all="ignore"):
        evolve_micro(sysm, IntegratorSpec(1e3, 5))
    assert info.value.frame_index >= 1


def test_momentum_and_energy():
    n = 256
    prm = ModelParams.from_beta(n, 1 / 3)
    q, p = sample(SampleSpec(GAUSS, n, 31))
    integ = IntegratorSpec.default(1.0, prm.cut_radius, float(np.linalg.norm(p, axis=1).max()))
    rec = evolve_micro(ParticleSystem(prm, q, p), integ, integ.steps)
    P0, P1 = rec.p[0].sum(axis=0), rec.p[-1].sum(axis=0)
    assert np.abs(P1 - P0).max() <= 1e-10 * n * np.abs(p).max()
    E0 = total_energy(rec.q[0], rec.p[0], prm)
    E1 = total_energy(rec.q[-1], rec.p[-1], prm)
    assert abs(E1 - E0) / abs(E0) <= 1e-4


def test_time_reversal():
    n = 128
    prm = ModelParams.from_beta(n, 1 / 3)
    q, p = sample(SampleSpec(GAUSS, n, 32))
    integ = IntegratorSpec.default(0.5, prm.cut_radius, float(np.linalg.norm(p, axis=1).max()))
    fwd = evolve_micro(ParticleSystem(prm, q, p), integ, integ.steps)
    back = evolve_micro(ParticleSystem(prm, fwd.q[-1], -fwd.p[-1]), integ, integ.steps)
    scale = np.abs(np.concatenate([q, p])).max()
    assert np.abs(back.q[-1] - q).max() <= 1e-6 * scale
    assert np.abs(-back.p[-1] - p).max() <= 1e-6 * scale


# ------------------------------------------------------------- reference flow

def test_single_reference_moves_ballistically():
    eng = MeanFieldEngine("reference-ensemble", 1, 3, 0.1)
    rec = evolve_reference(eng, GAUSS, IntegratorSpec(0.01, 100))
    q0, p0 = rec.q[0, 0], rec.p[0, 0]
    np.testing.assert_allclose(rec.q[-1, 0], q0 + p0, rtol=1e-12, atol=1e-12)
    assert np.array_equal(rec.p[-1, 0], p0)
    eng = MeanFieldEngine("radial-shell", 1, 3, 0.1)
    rec = evolve_reference(eng, GAUSS, IntegratorSpec(0.01, 100))
    assert np.array_equal(rec.p[-1, 0], rec.p[0, 0])


def test_reference_floor():
    eng = MeanFieldEngine("radial-shell", 100, 1, 0.1)
    with pytest.raises(ConfigError):
        evolve_reference(eng, GAUSS, IntegratorSpec(0.1, 1), reference_floor=16 * 10)


def test_reference_independent_of_tracers():
    integ = IntegratorSpec(1 / 64, 64)
    for backend in ("reference-ensemble", "radial-shell"):
        eng = MeanFieldEngine(backend, 2000, 9, 0.2)
        a = sample(SampleSpec(GAUSS, 5, 1))
        b = sample(SampleSpec(BALL, 50, 2))
        ra, _ = evolve_lifted(eng, GAUSS, a, integ, reference_stride=1)
        rb, _ = evolve_lifted(eng, GAUSS, b, integ, reference_stride=1)
        solo = evolve_reference(eng, GAUSS, integ, record_stride=1)
        assert np.array_equal(ra.q, rb.q) and np.array_equal(ra.q, solo.q)
        assert np.array_equal(ra.p, solo.p)


def test_lifted_equals_reference_then_tracers():
    integ = IntegratorSpec(1 / 64, 64)
    eng = MeanFieldEngine("radial-shell", 3000, 4, 0.15)
    tr = sample(SampleSpec(GAUSS, 20, 8))
    _, lifted = evolve_lifted(eng, GAUSS, tr, integ, record_stride=8)
    ref = evolve_reference(eng, GAUSS, integ, record_stride=1)
    direct = evolve_tracers(eng, ref, tr, integ, record_stride=8)
    np.testing.assert_allclose(lifted.q, direct.q, rtol=0, atol=1e-13)


def test_static_uniform_ball_field():
    m = 10 ** 5
    c = 0.2
    src, _ = sample(SampleSpec(BALL, m, 5))
    x, _ = sample(SampleSpec(BALL, 2000, 6))
    F = force_from_sources(x, src, c, 1, 1.0 / m)
    inner = np.linalg.norm(x, axis=1) <= 1 - c
    exact = x[inner]  # a x / R0^3 with R0 = 1
    rms = math.sqrt(np.mean(np.sum((F[inner] - exact) ** 2, axis=1)) / np.mean(np.sum(exact ** 2, axis=1)))
    assert rms <= 0.02
    # the whole ball against the analytic cut field
    r = np.linalg.norm(x, axis=1)
    model = (ball_field(r, 1.0, c) / r)[:, None] * x
    rms = math.sqrt(np.mean(np.sum((F - model) ** 2, axis=1)) / np.mean(np.sum(model ** 2, axis=1)))
    assert rms <= 0.02


def test_tracer_at_center_stays_at_rest():
    # frame noise at M = 1e5, then a short live run at smaller M against the same envelope
    m = 10 ** 5
    src, _ = sample(SampleSpec(GAUSS, m, 21))
    f0 = force_from_sources(np.zeros((1, 3)), src, 0.2, 1, 1.0 / m)
    assert np.linalg.norm(f0) <= 5 / math.sqrt(m)
    m = 20000
    eng = MeanFieldEngine("reference-ensemble", m, 22, 0.2)
    integ = IntegratorSpec(1 / 8, 8)
    _, rec = evolve_lifted(eng, GAUSS, (np.zeros((1, 3)), np.zeros((1, 3))), integ)
    # |p(T)| <= T * sup|F| and |q(T)| <= T^2/2 * sup|F| with T = 1
    assert np.linalg.norm(rec.p[-1]) <= 5 / math.sqrt(m)
    assert np.linalg.norm(rec.q[-1]) <= 2.5 / math.sqrt(m)


def test_permuting_tracers_permutes_outputs():
    integ = IntegratorSpec(1 / 32, 32)
    eng = MeanFieldEngine("radial-shell", 2000, 5, 0.2)
    ref = evolve_reference(eng, GAUSS, integ)
    q, p = sample(SampleSpec(GAUSS, 40, 6))
    perm = np.random.default_rng(1).permutation(40)
    a = evolve_tracers(eng, ref, (q, p), integ)
    b = evolve_tracers(eng, ref, (q[perm], p[perm]), integ)
    assert np.array_equal(a.q[:, perm], b.q) and np.array_equal(a.p[:, perm], b.p)


def test_tracers_do_not_interact():
    integ = IntegratorSpec(1 / 32, 32)
    eng = MeanFieldEngine("reference-ensemble", 500, 5, 0.2)
    ref = evolve_reference(eng, GAUSS, integ)
    q, p = sample(SampleSpec(GAUSS, 10, 7))
    both = evolve_tracers(eng, ref, (q, p), integ)
    one = evolve_tracers(eng, ref, (q[:1], p[:1]), integ)
    assert np.array_equal(both.q[:, :1], one.q)


def test_grid_mismatch():
    eng = MeanFieldEngine("radial-shell", 100, 5, 0.2)
    ref = evolve_reference(eng, GAUSS, IntegratorSpec(0.1, 10))
    tr = sample(SampleSpec(GAUSS, 3, 1))
    with pytest.raises(ConfigError):
        evolve_tracers(eng, ref, tr, IntegratorSpec(0.03, 30))
    with pytest.raises(ConfigError):
        evolve_tracers(eng, ref, tr, IntegratorSpec(0.05, 40))  # runs past the reference
    evolve_tracers(eng, ref, tr, IntegratorSpec(0.05, 20))
    with pytest.raises(ConfigError):
        evolve_tracers(eng, None, tr, IntegratorSpec(0.05, 20))


def test_interpolated_reference_is_linear():
    eng = MeanFieldEngine("radial-shell", 1000, 5, 0.2)
    ref = evolve_reference(eng, GAUSS, IntegratorSpec(0.25, 4))
    tr = sample(SampleSpec(GAUSS, 4, 2))
    coarse = evolve_tracers(eng, ref, tr, IntegratorSpec(1 / 64, 64))
    fine_ref = evolve_reference(eng, GAUSS, IntegratorSpec(1 / 64, 64))
    fine = evolve_tracers(eng, fine_ref, tr, IntegratorSpec(1 / 64, 64))
    assert np.abs(coarse.q[-1] - fine.q[-1]).max() < 1e-2


# ---------------------------------------------------------------- radial shell

def _shell_quadrature(r, R, c):
    # average of the cut kernel's radial component over a sphere of radius R
    def integrand(mu):
        d2 = r * r + R * R - 2 * r * R * mu
        return (r - R * mu) / max(d2, c * c) ** 1.5 * 0.5
    pts = [m for m in ((r * r + R * R - c * c) / (2 * r * R),) if -1 < m < 1]
    return integrate.quad(integrand, -1, 1, points=pts or None, epsabs=1e-13, epsrel=1e-11, limit=200)[0]


@pytest.mark.parametrize("r,R,c", [(0.3, 0.2, 0.25), (0.1, 0.05, 0.2), (1.0, 0.5, 0.1), (0.5, 1.0, 0.1),
                                   (0.4, 0.45, 0.3), (0.2, 0.3, 0.15), (2.0, 1.95, 0.2), (0.05, 0.9, 1.0)])
def test_shell_field_matches_quadrature(r, R, c):
    assert shell_field(r, R, c) == pytest.approx(_shell_quadrature(r, R, c), rel=1e-8, abs=1e-12)


def test_radial_profile_matches_direct_sum_of_shells():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(500, 3))
    q -= q.mean(axis=0)
    prof = RadialProfile(q, 0.3)
    x = rng.normal(size=(50, 3)) * 0.8
    radii = np.linalg.norm(q, axis=1)
    r = np.linalg.norm(x, axis=1)
    direct = np.array([sum(shell_field(ri, R, 0.3) for R in radii) / 500 for ri in r])
    np.testing.assert_allclose(prof.field(x), (direct / r)[:, None] * x, rtol=1e-10, atol=1e-14)


def test_radial_force_examples():
    eng = MeanFieldEngine("radial-shell", 10, 0, 0.0)
    origin = np.zeros((10, 3))
    np.testing.assert_allclose(radial_force(eng, origin, np.array([[2.0, 0, 0]])), [[0.25, 0, 0]])
    np.testing.assert_allclose(radial_force(eng, origin, np.array([[0, 2.0, 0]])), [[0, 0.25, 0]])
    # x/8 at |x| = 2
    x = np.array([[1.2, -1.6, 0.0]])
    np.testing.assert_allclose(radial_force(eng, origin, x), x / 8, rtol=1e-14)
    np.testing.assert_array_equal(radial_force(eng, origin, np.zeros((1, 3))), np.zeros((1, 3)))
    # a symmetric shell of radius 3 exerts nothing inside
    shell = np.array([[3, 0, 0], [-3, 0, 0], [0, 3, 0], [0, -3, 0], [0, 0, 3], [0, 0, -3.0]])
    eng = MeanFieldEngine("radial-shell", 6, 0, 0.5)
    np.testing.assert_array_equal(radial_force(eng, shell, np.array([[1.0, 0.5, 0]])), np.zeros((1, 3)))


def test_ball_field_matches_shell_integral():
    for c in (0.0, 0.1, 0.4):
        for r in (0.05, 0.3, 0.85, 1.0, 1.1, 1.6):
            ref = integrate.quad(lambda R: 3 * R * R * shell_field(r, R, c), 0, 1,
                                 points=[x for x in (abs(r - c), r + c) if 0 < x < 1] or None,
                                 epsabs=1e-13, epsrel=1e-11)[0]
            assert ball_field(np.array([r]), 1.0, c)[0] == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_radial_shell_self_field_skips_own_shell():
    c = 0.1
    q = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    q = np.concatenate([q, -q])
    prof = RadialProfile(q, c)
    own = prof.self_field(q)
    # at r = 1: the partner shell at R = 1 remains, the shells at R = 2 exert nothing
    np.testing.assert_allclose(own[0], [shell_field(1.0, 1.0, c) / 4, 0, 0], rtol=1e-14)
    # at r = 2: both R = 1 shells and the partner at R = 2
    expected = (2 * shell_field(2.0, 1.0, c) + shell_field(2.0, 2.0, c)) / 4
    np.testing.assert_allclose(own[1], [0, expected, 0], rtol=1e-14)
    full = prof.field(q)
    np.testing.assert_allclose(full[0] - own[0], [shell_field(1.0, 1.0, c) / 4, 0, 0], rtol=1e-14)


# ------------------------------------------------------------ flow properties

def test_flow_separation_bound():
    n = 256
    c = n ** (-1 / 3)
    eng = MeanFieldEngine("radial-shell", 16 * n, 3, c)
    integ = IntegratorSpec(1 / 256, 256)
    ref = evolve_reference(eng, GAUSS, integ)
    rng = np.random.default_rng(12)
    xq, xp = sample(SampleSpec(GAUSS, 1000, 13))
    eps = 10.0 ** rng.uniform(-4, -1, size=(1000, 1))
    dq, dp = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3))
    norm = np.sqrt(np.sum(dq * dq + dp * dp, axis=1, keepdims=True))
    yq, yp = xq + eps * dq / norm, xp + eps * dp / norm
    # empirical Lipschitz constant of the initial tracer force field
    h = 1e-5
    pts = np.concatenate([xq, yq])
    prof = RadialProfile(ref.q[0], c)
    lip = 0.0
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        lip = max(lip, np.linalg.norm(prof.field(pts + e) - prof.field(pts - e), axis=1).max() / (2 * h))
    rate = 1 + lip
    a = evolve_tracers(eng, ref, (xq, xp), integ)
    b = evolve_tracers(eng, ref, (yq, yp), integ)
    d = np.sqrt(np.sum((a.q - b.q) ** 2 + (a.p - b.p) ** 2, axis=2))
    ratio = d / d[0]
    envelope = np.exp(rate * a.times)[:, None]
    assert np.all(ratio <= envelope * (1 + 1e-9))


def test_integrated_force_bound_with_frozen_constant():
    const = calibration.load()["integrated_force_constant"]
    pilot = calibration.FORCE_PILOT
    ratios = calibration.integrated_force_ratios(pilot["n"], pilot["beta"], 1000, 4242, pilot["steps"])
    assert np.all(ratios <= const)


# ------------------------------------------------------------------- snapshots

def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rec = TrajectoryRecord(rng.normal(size=(4, 7, 3)), rng.normal(size=(4, 7, 3)), 0.125, "micro")
    path = tmp_path / "a.vpcl"
    write_snapshot(path, rec)
    back = read_snapshot(path)
    assert back.kind == "micro" and back.frame_dt == 0.125
    assert back.q.tobytes() == rec.q.tobytes() and back.p.tobytes() == rec.p.tobytes()
    raw = path.read_bytes()
    assert raw[:4] == b"VPCL" and len(raw) == 33 + 2 * 4 * 7 * 3 * 8
    buf = io.BytesIO()
    write_snapshot(buf, rec)
    assert buf.getvalue() == raw


def test_snapshot_rejects_corruption(tmp_path):
    rec = TrajectoryRecord(np.zeros((2, 3, 3)), np.zeros((2, 3, 3)), 0.5, "tracer")
    path = tmp_path / "b.vpcl"
    write_snapshot(path, rec)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.vpcl"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ConfigError):
        read_snapshot(bad)
    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(ConfigError):
        read_snapshot(bad)


def test_record_is_immutable():
    rec = TrajectoryRecord(np.zeros((2, 3, 3)), np.zeros((2, 3, 3)), 0.5)
    with pytest.raises(ValueError):
        rec.q[0, 0, 0] = 1.0
    np.testing.assert_array_equal(rec.times, [0, 0.5])
