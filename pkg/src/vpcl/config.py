"""Experiment configuration: a small sectioned key = value format.

    # comment
    [experiment]
    kind = micro-vs-meanfield
    n = 256, 512, 1024
    seeds = 0-9

Every key is declared in SCHEMA with a type and default; unknown keys,
duplicates and bad values are reported with their line numbers.  ``serialize``
writes every key in schema order, so parse(serialize(c)) == c.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .errors import ConfigError

KINDS = ("micro-vs-meanfield", "class-probability", "lln", "cardinality", "cutoff-convergence")


def _int_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, "")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty range {part}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _float_list(text):
    out = tuple(float(x) for x in text.split(",") if x.strip())
    if not out:
        raise ValueError("empty list")
    return out


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    t = text.strip().lower()
    return None if t in ("auto", "none", "") else float(t)


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _fmt(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default); default None marks "auto" where allowed
SCHEMA = {
    "experiment": {
        "kind": (_choice(*KINDS), None),
        "n": (_int_list, None),
        "seeds": (_int_list, (0,)),
        "output": (str, "runs/experiment"),
        "snapshots": (_choice("none", "first", "all"), "first"),
    },
    "model": {
        "beta": (_optional_float, 1.0 / 3.0),
        "cut_radius": (_optional_float, None),
        "sign": (int, 1),
        "sigma": (float, 0.05),
        "horizon": (float, 1.0),
        "main_regime": (_bool, True),
    },
    "density": {
        "kind": (_choice("gaussian-isotropic", "uniform-ball-gaussian", "compact-smooth", "power-tail"),
                 "gaussian-isotropic"),
        "q_scale": (float, 1.0),
        "p_scale": (float, 1.0),
        "exponent": (float, 3.0),
    },
    "integrator": {
        "dt": (_optional_float, None),
        "base_steps": (int, 4096),
        "record_stride": (int, 16),
    },
    "meanfield": {
        "backend": (_choice("radial-shell", "reference-ensemble", "free", "frozen-ball"), "radial-shell"),
        "mass_factor": (int, 16),
        "reference_seed": (int, 1),
        "cut_radius": (float, 0.0),
        "ball_radius": (float, 1.0),
        "reference_stride": (int, 1),
    },
    "classes": {
        "delta": (float, 1.0 / 12.0),
        "pairs": (int, 10000),
        "steps": (int, 1024),
        "record_stride": (int, 4),
    },
    "lln": {
        "functional": (_choice("force", "zero", "half-space"), "force"),
        "reference_factor": (int, 100),
        "steps": (int, 1024),
        "probe_seed": (int, 7),
    },
    "cutoff": {
        "radii": (_float_list, (0.4, 0.2, 0.1, 0.05)),
        "baseline": (_optional_float, None),
        "pairing": (_choice("baseline", "ratio"), "baseline"),
        "ratio": (float, 4.0),
        "tracers": (int, 64),
        "tracer_seed": (int, 11),
        "steps": (int, 1024),
    },
    "check": {
        "min_slope": (float, 1.5),
        "tail_fraction": (float, 0.9),
        "exceedance": (float, 0.05),
        "class_fraction": (float, 0.99),
    },
}

REQUIRED = {("experiment", "kind"), ("experiment", "n")}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict, compare=False)

    def __getitem__(self, key):
        section, name = key.split(".", 1)
        return self.values[section][name]

    def get(self, section, name):
        return self.values[section][name]

    @property
    def kind(self):
        return self.values["experiment"]["kind"]

    @property
    def n_list(self):
        return self.values["experiment"]["n"]

    @property
    def seeds(self):
        return self.values["experiment"]["seeds"]

    def digest(self, extra=""):
        """SHA-256 of the canonical text plus any extra run inputs."""
        return hashlib.sha256((serialize(self) + extra).encode()).hexdigest()

    # builders ---------------------------------------------------------
    def model_params(self, n):
        from .kernels import ModelParams
        m = self.values["model"]
        common = dict(sign=m["sign"], sigma=m["sigma"], horizon=m["horizon"], main_regime=m["main_regime"])
        if m["cut_radius"] is not None:
            return ModelParams.explicit(n, m["cut_radius"], **common)
        return ModelParams.from_beta(n, m["beta"], **common)

    def density(self):
        from .ensemble import DensityModel
        d = self.values["density"]
        return DensityModel(d["kind"], d["q_scale"], d["p_scale"], d["exponent"])

    def engine(self, n, cut_radius=None):
        from .dynamics import MeanFieldEngine
        mf = self.values["meanfield"]
        cut = mf["cut_radius"] if cut_radius is None else cut_radius
        return MeanFieldEngine(mf["backend"], mf["mass_factor"] * n, mf["reference_seed"], cut,
                               self.values["model"]["sign"], mf["ball_radius"], mf["reference_stride"])


def _validate(values, lines):
    errors = []

    def err(section, key, msg):
        ln = lines.get((section, key))
        where = f"line {ln}: " if ln else ""
        errors.append(f"{where}[{section}] {key}: {msg}")

    m = values["model"]
    if m["sign"] not in (1, -1):
        err("model", "sign", "must be 1 or -1")
    if not (0 < m["sigma"] < 1 / 16):
        err("model", "sigma", "must lie in (0, 1/16)")
    if not (m["horizon"] > 0 and math.isfinite(m["horizon"])):
        err("model", "horizon", "must be positive")
    if m["cut_radius"] is None:
        beta = m["beta"]
        if beta is None:
            err("model", "beta", "give beta or cut_radius")
        elif not (0 <= beta < 5 / 12):
            err("model", "beta", "must lie in [0, 5/12)")
        elif m["main_regime"] and beta > 5 / 12 - m["sigma"]:
            err("model", "beta", f"beta <= 5/12 - sigma = {5 / 12 - m['sigma']:.6g} is required in the main regime")
    elif m["cut_radius"] < 0:
        err("model", "cut_radius", "must be >= 0")
    exp = values["experiment"]
    if exp["n"] is not None and any(n < 2 for n in exp["n"]):
        err("experiment", "n", "every N must be >= 2")
    if any(s < 0 or s >= 2 ** 63 for s in exp["seeds"]):
        err("experiment", "seeds", "seeds must be in [0, 2^63)")
    d = values["density"]
    for key in ("q_scale", "p_scale"):
        if not d[key] > 0:
            err("density", key, "must be positive")
    if d["kind"] == "power-tail" and d["exponent"] <= 3:
        err("density", "exponent", "power-tail exponent must exceed 3 to be normalisable")
    if d["kind"] == "compact-smooth" and d["exponent"] < 2:
        err("density", "exponent", "bump exponent must be >= 2")
    it = values["integrator"]
    if it["dt"] is not None and not it["dt"] > 0:
        err("integrator", "dt", "must be positive")
    for sec, key in (("integrator", "base_steps"), ("integrator", "record_stride"),
                     ("meanfield", "mass_factor"), ("meanfield", "reference_stride"),
                     ("classes", "pairs"), ("classes", "steps"), ("classes", "record_stride"),
                     ("lln", "reference_factor"), ("lln", "steps"), ("cutoff", "tracers"),
                     ("cutoff", "steps")):
        if values[sec][key] < 1:
            err(sec, key, "must be >= 1")
    mf = values["meanfield"]
    if mf["cut_radius"] < 0:
        err("meanfield", "cut_radius", "must be >= 0")
    if mf["backend"] == "reference-ensemble" and mf["cut_radius"] == 0 and exp["kind"] != "cutoff-convergence":
        err("meanfield", "cut_radius", "reference-ensemble backend needs cut_radius > 0")
    if not values["classes"]["delta"] > 0:
        err("classes", "delta", "must be positive")
    cut = values["cutoff"]
    if any(r <= 0 for r in cut["radii"]):
        err("cutoff", "radii", "radii must be positive")
    if cut["ratio"] <= 1:
        err("cutoff", "ratio", "must exceed 1")
    if exp["kind"] == "cardinality" and len(exp["seeds"]) < 20:
        err("experiment", "seeds", "cardinality statistics need at least 20 seeds")
    return errors


def parse_config(text):
    """Parse and validate configuration text; raises ConfigError listing every problem."""
    values = {sec: {} for sec in SCHEMA}
    lines = {}
    errors = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = "?"
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if section == "?":
            continue
        if key not in SCHEMA[section]:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        if (section, key) in lines:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}] "
                          f"(first set on line {lines[(section, key)]})")
            continue
        lines[(section, key)] = lineno
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(value)
        except (ValueError, TypeError) as exc:
            errors.append(f"line {lineno}: [{section}] {key}: invalid value {value!r} ({exc})")
    for sec, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if key not in values[sec]:
                if (sec, key) in REQUIRED:
                    errors.append(f"missing required key [{sec}] {key}")
                values[sec][key] = default
    if not errors:
        errors = _validate(values, lines)
    if errors:
        raise ConfigError("; ".join(errors), errors)
    return ExperimentConfig(values, lines)


def serialize(cfg: ExperimentConfig):
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key in keys:
            out.append(f"{key} = {_fmt(cfg.values[sec][key])}")
        out.append("")
    return "\n".join(out)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
