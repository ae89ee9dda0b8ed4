"""Experiment pipelines: sample -> evolve -> classify -> measure -> persist."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import calibration
from .config import ExperimentConfig, serialize
from .dynamics import (IntegratorSpec, MeanFieldEngine, TrajectoryRecord, evolve_lifted, evolve_micro,
                       write_snapshot)
from .ensemble import SampleSpec, sample, validate_horst
from .errors import ConfigError
from .kernels import ParticleSystem
from .stats import (LlnSpec, cardinality_stats, cutoff_convergence, deviation, estimate_classes,
                    lln_experiment, paired_cutoff_deviation, pair_paths, scaling_fit)
from .taxonomy import (BAD, GOOD, SUPERBAD, classify_record, dyadic_cover, pair_encounters, schedule,
                       stopping_times)

OUTPUT_ENV = "VPCL_OUTPUT_ROOT"
CSV_COLUMNS = ("experiment", "N", "seed", "statistic", "value")
RECORD_BUDGET = 400e6  # bytes of tracer frames held at once


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def add(self, experiment, n, seed, statistic, value):
        self.rows.append((experiment, str(n), "" if seed is None else str(seed), statistic, fmt(value)))

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks.values())

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(self.rows)
        return buf.getvalue()


def resolve_output(cfg: ExperimentConfig):
    out = Path(cfg.get("experiment", "output"))
    root = os.environ.get(OUTPUT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _seeds(cfg, offset):
    return [int(s) + int(offset) for s in cfg.seeds]


def _integrator(cfg, prm, v_max):
    it = cfg.values["integrator"]
    stride = it["record_stride"]
    T = prm.horizon
    if it["dt"] is None:
        base = IntegratorSpec.default(T, prm.cut_radius, v_max, it["base_steps"])
        steps = base.steps
    else:
        steps = int(math.ceil(T / it["dt"] - 1e-9))
    steps = int(math.ceil(steps / stride) * stride)
    integ = IntegratorSpec(T / steps, steps)
    integ.check(prm.cut_radius, v_max)
    return integ, stride


def _chunks(total_points, frames, per_seed):
    per = max(1, int(RECORD_BUDGET // max(frames * per_seed * 48, 1)))
    return per


def _tracer_runs(cfg, n, seeds, integ, stride, engine):
    """Tracer records of every seed's initial points, batched to bound memory."""
    density = cfg.density()
    frames = integ.steps // stride + 1
    per = _chunks(n * len(seeds), frames, n)
    out = {}
    for start in range(0, len(seeds), per):
        batch = seeds[start:start + per]
        qs, ps = zip(*(sample(SampleSpec(density, n, s)) for s in batch))
        _, rec = evolve_lifted(engine, density, (np.concatenate(qs), np.concatenate(ps)), integ, stride)
        for i, s in enumerate(batch):
            out[s] = rec.select(slice(i * n, (i + 1) * n))
    return out


def run_micro_vs_meanfield(cfg, offset=0, progress=None):
    res = RunResult()
    density = cfg.density()
    sigma = cfg.get("model", "sigma")
    seeds = _seeds(cfg, offset)
    medians, fractions, ns = [], {}, []
    res.summary["sigma"] = sigma
    snap_mode = cfg.get("experiment", "snapshots")
    for n in cfg.n_list:
        prm = cfg.model_params(n)
        sched = schedule(n, sigma)
        initial = {s: sample(SampleSpec(density, n, s)) for s in seeds}
        v_max = max(float(np.sqrt((p * p).sum(axis=1)).max()) for _, p in initial.values())
        integ, stride = _integrator(cfg, prm, v_max)
        engine = cfg.engine(n)
        tracer_recs = _tracer_runs(cfg, n, seeds, integ, stride, engine)
        sups, reports = [], []
        for s in seeds:
            q, p = initial[s]
            micro = evolve_micro(ParticleSystem(prm, q, p), integ, stride)
            tr = tracer_recs.pop(s)
            report = classify_record(tr, sched)
            dev = deviation(micro, tr, report)
            tau = stopping_times(micro, tr, report, sched)
            counts = report.counts
            res.add("micro-vs-meanfield", n, s, "sup_deviation", dev.sup)
            res.add("micro-vs-meanfield", n, s, "exceeds_threshold", dev.exceeds)
            for label in (GOOD, BAD, SUPERBAD):
                res.add("micro-vs-meanfield", n, s, f"count_{label}", counts[label])
                res.add("micro-vs-meanfield", n, s, f"sup_deviation_{label}", dev.class_sups[label])
            res.add("micro-vs-meanfield", n, s, "tau", tau.tau)
            sups.append(dev.sup)
            reports.append(report)
            if snap_mode == "all" or (snap_mode == "first" and s == seeds[0]):
                res.records.append((f"micro_N{n}_seed{s}.vpcl", micro))
                res.records.append((f"tracer_N{n}_seed{s}.vpcl", tr))
            if progress:
                progress(f"N={n} seed={s} sup={dev.sup:.4g}")
        med = float(np.median(sups))
        thr = float(n) ** (-1 / 6)
        frac = float(np.mean(np.array(sups) <= thr))
        ns.append(n)
        medians.append(med)
        fractions[n] = frac
        entry = {"median_sup_deviation": med, "threshold": thr, "fraction_within": frac,
                 "seeds": len(seeds), "dt": integ.dt, "steps": integ.steps,
                 "mean_bad": float(np.mean([r.counts[BAD] for r in reports])),
                 "mean_superbad": float(np.mean([r.counts[SUPERBAD] for r in reports])),
                 "bad_threshold": sched.bad_count_threshold,
                 "superbad_threshold": sched.superbad_count_threshold}
        res.summary.setdefault("per_n", {})[str(n)] = entry
        res.add("micro-vs-meanfield", n, None, "median_sup_deviation", med)
        res.add("micro-vs-meanfield", n, None, "fraction_within_threshold", frac)
    if len(set(ns)) >= 2:
        fit = scaling_fit(ns, medians, min_points=2)
        res.summary["fit"] = {"slope": fit.slope, "intercept": fit.intercept}
        res.checks["deviation_slope"] = {"passed": fit.slope < 0, "value": fit.slope, "limit": 0.0}
    top = max(ns)
    lim = cfg.get("check", "tail_fraction")
    res.checks["tail_fraction"] = {"passed": fractions[top] >= lim, "value": fractions[top], "limit": lim}
    return res


def run_cardinality(cfg, offset=0, progress=None):
    res = RunResult()
    sigma = cfg.get("model", "sigma")
    seeds = _seeds(cfg, offset)
    lim = cfg.get("check", "exceedance")
    density = cfg.density()
    res.summary["sigma"] = sigma
    for n in cfg.n_list:
        prm = cfg.model_params(n)
        sched = schedule(n, sigma)
        v_max = max(float(np.sqrt((sample(SampleSpec(density, n, s))[1] ** 2).sum(axis=1)).max())
                    for s in seeds)
        integ, stride = _integrator(cfg, prm, v_max)
        recs = _tracer_runs(cfg, n, seeds, integ, stride, cfg.engine(n))
        reports = []
        for s in seeds:
            rep = classify_record(recs.pop(s), sched)
            reports.append(rep)
            for label in (GOOD, BAD, SUPERBAD):
                res.add("cardinality", n, s, f"count_{label}", rep.counts[label])
        st = cardinality_stats(reports, sched)
        res.summary.setdefault("per_n", {})[str(n)] = {
            "bad_exceedance": st.bad_exceedance, "superbad_exceedance": st.superbad_exceedance,
            "mean_bad": st.mean_bad, "mean_superbad": st.mean_superbad,
            "bad_threshold": st.bad_threshold, "superbad_threshold": st.superbad_threshold,
            "predicted_bad": st.predicted_bad, "predicted_superbad": st.predicted_superbad}
        res.add("cardinality", n, None, "bad_exceedance", st.bad_exceedance)
        res.add("cardinality", n, None, "superbad_exceedance", st.superbad_exceedance)
        res.checks[f"bad_exceedance_N{n}"] = {"passed": st.bad_exceedance <= lim,
                                              "value": st.bad_exceedance, "limit": lim}
        res.checks[f"superbad_exceedance_N{n}"] = {"passed": st.superbad_exceedance <= lim,
                                                   "value": st.superbad_exceedance, "limit": lim}
        if progress:
            progress(f"N={n} bad>{st.bad_threshold:.1f}: {st.bad_exceedance}")
    return res


def class_sweep(cfg, n, seeds, progress=None):
    """Dyadic-cover class estimates at one N (pairs per seed, pooled)."""
    prm = cfg.model_params(n)
    if prm.beta is None:
        raise ConfigError("class-probability sweeps need beta mode")
    cl = cfg.values["classes"]
    integ = IntegratorSpec(prm.horizon / cl["steps"], cl["steps"])
    engine = cfg.engine(n, cut_radius=prm.cut_radius)
    classes = dyadic_cover(n, prm.beta, cl["delta"], prm.horizon)
    encs = []
    for s in seeds:
        ry, rz = pair_paths(cfg.density(), cl["pairs"], s, engine, integ, cl["record_stride"])
        encs.append(pair_encounters(ry, rz))
        if progress:
            progress(f"N={n} seed={s} pairs evolved")
    return estimate_classes(classes, encs)


def run_class_probability(cfg, offset=0, progress=None):
    res = RunResult()
    seeds = _seeds(cfg, offset)
    const = calibration.load()["lemma_constant"]
    lim = cfg.get("check", "class_fraction")
    within_all = []
    for n in cfg.n_list:
        ests = class_sweep(cfg, n, seeds, progress)
        for i, e in enumerate(ests):
            res.add("class-probability", n, None, f"class_{i:03d}_estimate", e.estimate)
            res.add("class-probability", n, None, f"class_{i:03d}_bound", e.bound)
            res.add("class-probability", n, None, f"class_{i:03d}_wilson_high", e.wilson_hi)
            within_all.append(e.within(const))
        frac = float(np.mean([e.within(const) for e in ests]))
        res.summary.setdefault("per_n", {})[str(n)] = {"classes": len(ests), "fraction_within": frac}
    frac = float(np.mean(within_all))
    res.summary["lemma_constant"] = const
    res.checks["class_fraction"] = {"passed": frac >= lim, "value": frac, "limit": lim}
    return res


def lln_spec(cfg):
    m, l = cfg.values["model"], cfg.values["lln"]
    if m["cut_radius"] is not None:
        raise ConfigError("the LLN experiment needs beta mode")
    return LlnSpec(beta=m["beta"], sigma=m["sigma"], functional=l["functional"],
                   reference_factor=l["reference_factor"], horizon=m["horizon"], steps=l["steps"],
                   sign=m["sign"], mass_factor=cfg.get("meanfield", "mass_factor"), density=cfg.density(),
                   probe_seed=l["probe_seed"])


def run_lln(cfg, offset=0, progress=None):
    res = RunResult()
    spec = lln_spec(cfg)
    results = lln_experiment(spec, cfg.n_list, cfg.seeds, offset)
    seeds = _seeds(cfg, offset)
    medians = []
    big = 0
    for n in cfg.n_list:
        r = results[int(n)]
        for s, f in zip(seeds, r.fluctuations):
            res.add("lln", n, s, "fluctuation", f)
        res.add("lln", n, None, "median_fluctuation", r.median)
        res.add("lln", n, None, "h_sup", r.h_sup)
        medians.append(r.median)
        big += int(np.sum(r.fluctuations >= 1))
        res.summary.setdefault("per_n", {})[str(n)] = {
            "median_fluctuation": r.median, "max_fluctuation": float(r.fluctuations.max()),
            "h_sup": r.h_sup, "h_sup_over_n_pow": r.h_sup / r.h_bound, "good_fraction": r.good_fraction}
        if progress:
            progress(f"N={n} median fluctuation {r.median:.4g}")
    res.checks["no_large_fluctuation"] = {"passed": big == 0, "value": big, "limit": 0}
    dec = bool(all(b < a for a, b in zip(medians, medians[1:])))
    res.checks["median_decreasing"] = {"passed": dec, "value": medians, "limit": "strictly decreasing"}
    return res


def run_cutoff(cfg, offset=0, progress=None):
    res = RunResult()
    cut = cfg.values["cutoff"]
    n = cfg.n_list[0]
    T = cfg.get("model", "horizon")
    density = cfg.density()
    integ = IntegratorSpec(T / cut["steps"], cut["steps"])
    engine = cfg.engine(n)
    tracers = sample(SampleSpec(density, cut["tracers"], cut["tracer_seed"] + offset))
    stride = max(1, cut["steps"] // 128)
    if cut["pairing"] == "ratio":
        devs = paired_cutoff_deviation(density, cut["radii"], engine, tracers, integ, cut["ratio"], stride)
        ordered = [devs[c] for c in sorted(devs, reverse=True)]
        mono = bool(all(b < a for a, b in zip(ordered, ordered[1:])))
        res.checks["monotone"] = {"passed": mono, "value": ordered, "limit": "strictly decreasing"}
    else:
        fit, devs = cutoff_convergence(density, cut["radii"], engine, tracers, integ, cut["baseline"], stride)
        lim = cfg.get("check", "min_slope")
        res.summary["fit"] = {"slope": fit.slope, "intercept": fit.intercept}
        res.checks["slope"] = {"passed": fit.slope >= lim, "value": fit.slope, "limit": lim}
    for c in sorted(devs, reverse=True):
        res.add("cutoff-convergence", n, None, f"deviation_c{c!r}", devs[c])
    res.summary["deviations"] = {repr(c): devs[c] for c in sorted(devs, reverse=True)}
    return res


RUNNERS = {
    "micro-vs-meanfield": run_micro_vs_meanfield,
    "cardinality": run_cardinality,
    "class-probability": run_class_probability,
    "lln": run_lln,
    "cutoff-convergence": run_cutoff,
}


def plan(cfg, offset=0):
    """Human-readable execution plan."""
    lines = [f"experiment {cfg.kind}", f"N sweep {list(cfg.n_list)}", f"seeds {_seeds(cfg, offset)}",
             f"density {cfg.get('density', 'kind')}", f"backend {cfg.get('meanfield', 'backend')}",
             f"output {resolve_output(cfg)}"]
    return "\n".join(lines)


def prepare_output(cfg, force=False):
    out = resolve_output(cfg)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_outputs(out: Path, cfg, res: RunResult, offset=0):
    (out / "stats.csv").write_text(res.csv_text())
    summary = {"experiment": cfg.kind, "summary": _jsonable(res.summary), "checks": _jsonable(res.checks),
               "passed": res.passed}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if res.records:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        for name, rec in res.records:
            write_snapshot(snap / name, rec)
    manifest = {"config_hash": cfg.digest(f"seed_offset={offset}"), "seeds": _seeds(cfg, offset),
                "seed_offset": offset, "config": serialize(cfg),
                "timestamp": datetime.now(timezone.utc).isoformat()}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def run_experiment(cfg, offset=0, force=False, write=True, progress=None):
    """Run the configured experiment; returns (RunResult, output directory or None)."""
    if cfg.kind in ("micro-vs-meanfield", "cardinality", "class-probability", "lln"):
        validate_horst(cfg.density(), moment_samples=1000)
    out = prepare_output(cfg, force) if write else None
    res = RUNNERS[cfg.kind](cfg, offset, progress)
    if write:
        write_outputs(out, cfg, res, offset)
    return res, out


# ------------------------------------------------------------------ plot data

PLOT_COLUMNS = ("series", "x", "y", "reference")


def emit_plotdata(summary):
    """Tidy CSV series from a summary dict (as written to summary.json)."""
    rows = []
    body = summary.get("summary", {}) if summary else {}
    kind = summary.get("experiment") if summary else None
    per_n = body.get("per_n", {})
    for n in sorted(per_n, key=int):
        e = per_n[n]
        N = int(n)
        if "median_sup_deviation" in e:
            rows.append(("deviation", N, e["median_sup_deviation"], float(N) ** (-1 / 6)))
        if "mean_bad" in e:
            sigma = body["sigma"]
            rows.append(("bad_count", N, e["mean_bad"], float(N) ** (0.75 * (1 + sigma))))
    if kind == "cutoff-convergence":
        for c, d in sorted(body.get("deviations", {}).items(), key=lambda kv: -float(kv[0])):
            rows.append(("cutoff", float(c), d, ""))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for series, x, y, ref in rows:
        w.writerow((series, fmt(x) if not isinstance(x, int) else str(x), fmt(y), "" if ref == "" else fmt(ref)))
    return buf.getvalue()


# ---------------------------------------------------------- sample / taxonomy

def write_samples(cfg, out: Path, offset=0):
    density = cfg.density()
    d = out / "samples"
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for n in cfg.n_list:
        for s in _seeds(cfg, offset):
            q, p = sample(SampleSpec(density, n, s))
            rec = TrajectoryRecord(q[None], p[None], 0.0, "micro")
            path = d / f"initial_N{n}_seed{s}.vpcl"
            write_snapshot(path, rec)
            written.append(path)
    return written


def write_taxonomy(cfg, out: Path, offset=0):
    d = out / "taxonomy"
    d.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(cfg, offset)
    density = cfg.density()
    written = []
    for n in cfg.n_list:
        prm = cfg.model_params(n)
        sched = schedule(n, cfg.get("model", "sigma"))
        v_max = max(float(np.sqrt((sample(SampleSpec(density, n, s))[1] ** 2).sum(axis=1)).max())
                    for s in seeds)
        integ, stride = _integrator(cfg, prm, v_max)
        recs = _tracer_runs(cfg, n, seeds, integ, stride, cfg.engine(n))
        for s in seeds:
            rep = classify_record(recs.pop(s), sched)
            path = d / f"taxonomy_N{n}_seed{s}.json"
            path.write_text(rep.to_json() + "\n")
            written.append(path)
    return written
