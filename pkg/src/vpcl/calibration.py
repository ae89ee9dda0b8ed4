"""Pilot calibration of the unnamed constants, frozen into data/calibration.json.

Run ``python -m vpcl.calibration`` to regenerate the file.  Pilot seeds are
disjoint from the seeds used by the tests and the acceptance suite.
"""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

DATA_FILE = "calibration.json"

# pilot settings for the class-probability constant
LEMMA_PILOT = {"n": [256, 1024, 4096], "beta": 1.0 / 3.0, "delta": 1.0 / 12.0, "pairs": 10000,
               "seeds": [900001], "steps": 1024, "record_stride": 4}
# pilot settings for the integrated-force constant
FORCE_PILOT = {"n": 1024, "beta": 1.0 / 3.0, "pairs": 10000, "seed": 900002, "steps": 2048}


def load():
    with resources.files("vpcl").joinpath("data", DATA_FILE).open("r") as fh:
        return json.load(fh)


def class_config(n_list, beta, delta, pairs, seeds, steps, record_stride, sigma=0.05):
    from .config import parse_config
    text = f"""
[experiment]
kind = class-probability
n = {", ".join(str(n) for n in n_list)}
seeds = {", ".join(str(s) for s in seeds)}
[model]
beta = {beta!r}
sigma = {sigma!r}
[classes]
delta = {delta!r}
pairs = {pairs}
steps = {steps}
record_stride = {record_stride}
"""
    return parse_config(text)


def lemma_constant(pilot=LEMMA_PILOT, progress=None):
    """Largest Wilson-upper / bound over pilot classes that registered hits."""
    from .runner import class_sweep
    cfg = class_config(pilot["n"], pilot["beta"], pilot["delta"], pilot["pairs"], pilot["seeds"],
                       pilot["steps"], pilot["record_stride"])
    worst = 0.0
    rows = []
    for n in pilot["n"]:
        for e in class_sweep(cfg, n, pilot["seeds"], progress):
            if e.hits > 0 and math.isfinite(e.bound):
                ratio = e.wilson_hi / e.bound
                worst = max(worst, ratio)
                rows.append((n, e.cls.r_max, e.cls.v_max, e.estimate, e.bound, ratio))
    return worst, rows


def integrated_force_ratios(n, beta, pairs, seed, steps, density=None, mass_factor=16):
    """Integral of |f(Z - Y)| over [0, T] divided by min(1/dr^2, 1/(c dv), 1/(dr dv))."""
    from .dynamics import IntegratorSpec, MeanFieldEngine, evolve_lifted
    from .ensemble import DensityModel, SampleSpec, sample
    from .kernels import ModelParams, pair_force

    density = density or DensityModel()
    prm = ModelParams.from_beta(n, beta)
    integ = IntegratorSpec(1.0 / steps, steps)
    q, p = sample(SampleSpec(density, 2 * pairs, seed))
    engine = MeanFieldEngine("radial-shell", mass_factor * n, seed + 1, prm.cut_radius)
    state = {"int": np.zeros(pairs), "dmin": np.full(pairs, np.inf), "v": np.zeros(pairs)}

    def observe(k, qq, pp):
        dq = qq[pairs:] - qq[:pairs]
        w = 0.5 * integ.dt if k in (0, steps) else integ.dt
        state["int"] += w * np.linalg.norm(pair_force(dq, prm), axis=1)
        d = np.linalg.norm(dq, axis=1)
        new = d < state["dmin"]
        state["dmin"] = np.where(new, d, state["dmin"])
        state["v"] = np.where(new, np.linalg.norm(pp[pairs:] - pp[:pairs], axis=1), state["v"])

    evolve_lifted(engine, density, (q, p), integ, record_stride=steps, observer=observe)
    dr, dv, c = state["dmin"], state["v"], prm.cut_radius
    bound = np.minimum(np.minimum(1.0 / dr ** 2, 1.0 / (c * dv)), 1.0 / (dr * dv))
    return state["int"] / bound


def main():
    out = Path(__file__).with_name("data") / DATA_FILE
    lemma, rows = lemma_constant(progress=print)
    f = FORCE_PILOT
    ratios = integrated_force_ratios(f["n"], f["beta"], f["pairs"], f["seed"], f["steps"])
    data = {
        "lemma_constant": float(lemma),
        "lemma_pilot": LEMMA_PILOT,
        "lemma_pilot_classes_with_hits": len(rows),
        "integrated_force_constant": float(ratios.max()),
        "integrated_force_pilot": f,
        "integrated_force_ratio_quantiles": {q: float(np.quantile(ratios, float(q)))
                                             for q in ("0.5", "0.99", "0.999")},
    }
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    print(json.dumps(data, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
