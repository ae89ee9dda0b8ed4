"""Independent brute-force oracles shared by unit and acceptance tests."""
import numpy as np

FREE_DT = 1 / 64


def free_pair_fixtures(count, seed, horizon=4.0, dt=FREE_DT):
    """Straight-line pairs whose closest approach falls on the integrator grid.

    Returns y, z (count, 6) phase points and random windows (t1, t2) on the grid.
    """
    rng = np.random.default_rng(seed)
    steps = int(round(horizon / dt))
    y = np.concatenate([rng.normal(size=(count, 3)), rng.normal(size=(count, 3))], axis=1)
    rel_v = rng.normal(size=(count, 3)) * rng.choice([0.05, 0.3, 1.5], size=(count, 1))
    impact = rng.normal(size=(count, 3))
    impact -= (np.sum(impact * rel_v, axis=1) / np.sum(rel_v * rel_v, axis=1))[:, None] * rel_v
    impact *= (10.0 ** rng.uniform(-3, 0, size=count) / np.linalg.norm(impact, axis=1))[:, None]
    t_star = rng.integers(0, steps + 1, size=count) * dt
    z = y.copy()
    z[:, 3:] += rel_v
    z[:, :3] += impact - rel_v * t_star[:, None]
    a = rng.integers(0, steps, size=count)
    b = rng.integers(0, steps + 1, size=count)
    t1 = np.minimum(a, b) * dt
    t2 = np.maximum(np.maximum(a, b), np.minimum(a, b) + 1) * dt
    return y, z, t1, t2


def brute_force_membership(y, z, t1, t2, r_lo, r_hi, v_lo, v_hi, dt=FREE_DT, refine=10, tie=1e-12):
    """Membership by scanning analytic straight-line motion on a refined grid."""
    ts = np.arange(int(round(t1 / dt)) * refine, int(round(t2 / dt)) * refine + 1) * (dt / refine)
    dq = (z[:3] - y[:3])[None] + ts[:, None] * (z[3:] - y[3:])[None]
    d = np.sqrt(np.sum(dq * dq, axis=1))
    v = float(np.linalg.norm(z[3:] - y[3:]))
    dmin = d.min()
    if not (r_lo <= dmin <= r_hi):
        return False, None, dmin, v
    for k in np.flatnonzero(d <= dmin * (1 + tie)):
        if v_lo <= v <= v_hi:
            return True, float(ts[k]), dmin, v
    return False, None, dmin, v
