import csv
import io
import json

import pytest

from vpcl.cli import main
from vpcl.config import SCHEMA, parse_config, serialize
from vpcl.errors import ConfigError
from vpcl.runner import OUTPUT_ENV, emit_plotdata, run_experiment

MINIMAL = """
[experiment]
kind = micro-vs-meanfield
n = 256
"""


def _errors(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.errors


# -------------------------------------------------------------------- parser

def test_minimal_config_defaults_echoed():
    cfg = parse_config(MINIMAL)
    assert cfg.n_list == (256,) and cfg.seeds == (0,)
    assert cfg.get("density", "kind") == "gaussian-isotropic"
    assert cfg.get("model", "horizon") == 1.0
    text = serialize(cfg)
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"\n{key} = " in text
    assert parse_config(text) == cfg
    assert serialize(parse_config(text)) == text


def test_round_trip_nondefault_values():
    text = MINIMAL + """
seeds = 3-5, 9
[model]
beta = 0.3
sigma = 0.04
[cutoff]
radii = 0.3, 0.15
baseline = 0.01
[density]
kind = compact-smooth
exponent = 4
"""
    cfg = parse_config(text)
    assert cfg.seeds == (3, 4, 5, 9)
    again = parse_config(serialize(cfg))
    assert again == cfg and again.digest() == cfg.digest()


def test_main_regime_rejects_large_beta():
    errs = _errors(MINIMAL + "[model]\nbeta = 0.5\n")
    assert any("5/12" in e for e in errs)
    errs = _errors(MINIMAL + "[model]\nbeta = 0.4\nsigma = 0.05\n")
    assert any("beta <= 5/12 - sigma" in e and "line 6" in e for e in errs)
    parse_config(MINIMAL + "[model]\nbeta = 0.4\nsigma = 0.05\nmain_regime = false\n")


def test_duplicate_key_names_both_lines():
    errs = _errors(MINIMAL + "n = 512\n")
    assert len(errs) == 1 and "line 5" in errs[0] and "line 4" in errs[0]


def test_unknown_and_missing_and_bad_values():
    errs = _errors("[experiment]\nkind = lln\nbogus = 1\n[nowhere]\nx = 1\n")
    text = " | ".join(errs)
    assert "line 3" in text and "bogus" in text
    assert "line 4" in text and "nowhere" in text
    assert "missing required key [experiment] n" in text
    errs = _errors(MINIMAL + "[model]\nsigma = abc\n")
    assert "line 6" in errs[0]
    errs = _errors(MINIMAL + "[model]\nsigma = 0.2\n")
    assert "sigma" in errs[0]


def test_cardinality_needs_twenty_seeds():
    errs = _errors("[experiment]\nkind = cardinality\nn = 256\nseeds = 0-9\n")
    assert any("20 seeds" in e for e in errs)
    parse_config("[experiment]\nkind = cardinality\nn = 256\nseeds = 0-19\n")


def test_digest_changes_with_inputs():
    a = parse_config(MINIMAL)
    b = parse_config(MINIMAL + "seeds = 1\n")
    assert a.digest() != b.digest()
    assert a.digest("seed_offset=0") != a.digest("seed_offset=1")


# ------------------------------------------------------------------ plotdata

def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_plotdata_empty_and_single():
    assert _rows(emit_plotdata({})) == [["series", "x", "y", "reference"]]
    summary = {"experiment": "micro-vs-meanfield",
               "summary": {"sigma": 0.05, "per_n": {"256": {"median_sup_deviation": 0.1, "threshold": 256 ** (-1 / 6)}}}}
    rows = _rows(emit_plotdata(summary))
    assert len(rows) == 2
    assert rows[1][:3] == ["deviation", "256", "0.1"]
    assert float(rows[1][3]) == summary["summary"]["per_n"]["256"]["threshold"]


def test_plotdata_reference_matches_embedded_thresholds():
    per_n = {}
    for n in (256, 4096):
        per_n[str(n)] = {"median_sup_deviation": 0.05, "threshold": float(n) ** (-1 / 6),
                         "mean_bad": 10.0, "bad_threshold": n ** (0.75 * 1.05)}
    rows = _rows(emit_plotdata({"experiment": "micro-vs-meanfield", "summary": {"sigma": 0.05, "per_n": per_n}}))
    for series, x, _, ref in rows[1:]:
        key = "threshold" if series == "deviation" else "bad_threshold"
        assert float(ref) == per_n[x][key]
    cut = {"experiment": "cutoff-convergence", "summary": {"deviations": {"0.1": 1e-3, "0.4": 2e-2}}}
    rows = _rows(emit_plotdata(cut))
    assert [r[1] for r in rows[1:]] == ["0.4", "0.1"]


# ------------------------------------------------------------------- runs

SMOKE = """
[experiment]
kind = micro-vs-meanfield
n = 256
seeds = 0-3
output = {out}
snapshots = first
[integrator]
base_steps = 256
record_stride = 8
"""


def test_micro_vs_meanfield_smoke(tmp_path):
    cfg = parse_config(SMOKE.format(out=tmp_path / "run"))
    res, out = run_experiment(cfg)
    rows = list(csv.DictReader(io.StringIO(res.csv_text())))
    sups = [r for r in rows if r["statistic"] == "sup_deviation"]
    assert [r["seed"] for r in sups] == ["0", "1", "2", "3"]
    agg = [r for r in rows if r["seed"] == ""]
    assert {r["statistic"] for r in agg} == {"median_sup_deviation", "fraction_within_threshold"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["summary"]["per_n"]["256"]["seeds"] == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1, 2, 3] and manifest["config_hash"] == cfg.digest("seed_offset=0")
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == ["micro_N256_seed0.vpcl",
                                                                     "tracer_N256_seed0.vpcl"]
    # identical config: byte-identical statistics
    res2, _ = run_experiment(cfg, force=True)
    assert res2.csv_text() == res.csv_text()


def test_cli_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "dry"
    cfg_path = tmp_path / "a.cfg"
    cfg_path.write_text(SMOKE.format(out=out))
    assert main(["run", "--config", str(cfg_path), "--dry-run"]) == 0
    printed = capsys.readouterr().out
    assert "[experiment]" in printed and "plan" in printed and "decay: pass" in printed
    assert not out.exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nkind = nope\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.cfg")]) == 2
    good = tmp_path / "good.cfg"
    out = tmp_path / "occupied"
    out.mkdir()
    (out / "stats.csv").write_text("x\n")
    good.write_text(SMOKE.format(out=out))
    assert main(["run", "--config", str(good)]) == 1
    assert (out / "stats.csv").read_text() == "x\n"


def test_cli_run_check_and_stats(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMOKE.format(out="rel") + "[check]\ntail_fraction = 1.0\n")
    code = main(["run", "--config", str(cfg), "--check"])
    printed = capsys.readouterr().out
    assert (tmp_path / "rel" / "stats.csv").exists()
    assert "tail_fraction" in printed
    assert code in (0, 4) and (code == 4) == ("FAIL" in printed)
    assert main(["stats", "--config", str(cfg)]) == 0
    assert "sup_deviation,4," in capsys.readouterr().out
    assert main(["plotdata", "--config", str(cfg)]) == 0
    assert (tmp_path / "rel" / "plotdata.csv").read_text().startswith("series,x,y,reference")
    assert main(["plotdata", "--config", str(cfg)]) == 1
    assert main(["plotdata", "--config", str(cfg), "--force"]) == 0


def test_cli_sample_and_taxonomy(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SMOKE.format(out=tmp_path / "s").replace("seeds = 0-3", "seeds = 0-1"))
    assert main(["sample", "--config", str(cfg), "--seed-offset", "10"]) == 0
    names = sorted(p.name for p in (tmp_path / "s" / "samples").iterdir())
    assert names == ["initial_N256_seed10.vpcl", "initial_N256_seed11.vpcl"]
    assert main(["taxonomy", "--config", str(cfg), "--force"]) == 0
    data = json.loads((tmp_path / "s" / "taxonomy" / "taxonomy_N256_seed0.json").read_text())
    assert sum(data["counts"].values()) == 256 and len(data["labels"]) == 256
