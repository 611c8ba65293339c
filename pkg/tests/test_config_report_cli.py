import json
import math

import pytest

from bmchaos import cli
from bmchaos.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from bmchaos.experiments import run_experiment
from bmchaos.report import (ExperimentReport, Verdict, csv_text, fmt, read_manifest,
                            write_report)

SMALL_THICK = {"Ns": [8, 16, 32], "trials": 3, "top_N": 32, "pair": [8, 32],
               "origin_Ns": [8, 16, 32], "origin_trials": 20}


def _write_toml(path, params, seed=5):
    lines = ['experiment = "thickpoints"', f"seed = {seed}", "[params]"]
    for k, v in params.items():
        lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_unknown_field_rejected():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig("thickpoints", {"Ns": [8, 16, 32], "bogus": 1})
    assert exc.value.field == "params.bogus"
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"experiment": "thickpoints", "colour": "red"})
    assert exc.value.field == "colour"


def test_type_and_range_errors():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig("thickpoints", {"trials": "many"})
    assert exc.value.field == "params.trials"
    with pytest.raises(ConfigError):
        ExperimentConfig("thickpoints", seed=-1)
    with pytest.raises(ConfigError):
        ExperimentConfig("chaos-run", {"gamma": 2.5})
    with pytest.raises(ConfigError):
        ExperimentConfig("nothing")


def test_hash_ignores_seed_workers_out():
    a = ExperimentConfig("thickpoints", dict(SMALL_THICK), seed=1, workers=1, out="a")
    b = ExperimentConfig("thickpoints", dict(SMALL_THICK), seed=2, workers=4, out="b")
    c = ExperimentConfig("thickpoints", dict(SMALL_THICK, trials=4))
    assert a.hash() == b.hash() != c.hash()
    assert len(a.hash()) == 64


def test_toml_and_json_agree(tmp_path):
    t = load_config(_write_toml(tmp_path / "c.toml", SMALL_THICK))
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"experiment": "thickpoints", "seed": 5, "params": SMALL_THICK}))
    assert t.hash() == load_config(j).hash() and t.seed == 5
    bad = tmp_path / "bad.toml"
    bad.write_text("experiment = ")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(v)) == v
    assert fmt(math.nan) == "nan" and fmt(True) == "true" and fmt(None) == ""


def test_csv_uses_crlf():
    text = csv_text(["a", "b"], [[1, 0.5]])
    assert text == "a,b\r\n1,0.5\r\n"


def test_manifest_round_trip(tmp_path):
    v = Verdict("x", 1.0, 0.5, 1.5, 1.0, True, 10, runtime=3.0, note="n")
    rep = ExperimentReport("thickpoints", "h" * 64, 7, [v], {"t": (["c"], [[1]])})
    mp = write_report(rep, tmp_path / "out")
    back = read_manifest(mp)
    assert back.seed == 7 and back.verdicts[0].name == "x" and back.verdicts[0].runtime == 0.0
    assert sorted(back.artifacts) == ["t.csv", "verdicts.csv"]


def test_empty_verdict_list_passes(tmp_path):
    rep = ExperimentReport("thickpoints", "h", 0)
    assert rep.passed
    write_report(rep, tmp_path)
    assert (tmp_path / "verdicts.csv").read_bytes() == \
        b"name,estimate,ci_lo,ci_hi,target,pass,n,note\r\n"


def test_results_independent_of_workers(tmp_path):
    outs = {}
    for w in (1, 3):
        cfg = ExperimentConfig("thickpoints", dict(SMALL_THICK), seed=9, workers=w,
                               out=str(tmp_path / f"w{w}"))
        run_experiment(cfg)
        outs[w] = {p.name: p.read_bytes() for p in (tmp_path / f"w{w}").glob("*.csv")}
    assert outs[1] == outs[3]


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _write_toml(tmp_path / "c.toml", SMALL_THICK)
    code = cli.main(["thickpoints", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code in (0, 1)
    printed = capsys.readouterr().out
    assert "verdicts, config" in printed
    assert (tmp_path / "o" / "manifest.json").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text('experiment = "thickpoints"\n[params]\nwidth = 3\n')
    assert cli.main(["thickpoints", "--config", str(bad)]) == 2
    assert "params.width" in capsys.readouterr().err
    assert cli.main(["thickpoints", "--config", str(tmp_path / "missing.toml")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["thickpoints", "--seed", "-3"])


def test_cli_exit_code_tracks_verdicts(tmp_path):
    # 3 trials per size is below the 20 needed for a median verdict, so the run fails
    cfg = _write_toml(tmp_path / "c.toml", SMALL_THICK)
    assert cli.main(["thickpoints", "--config", str(cfg), "--quiet",
                     "--out", str(tmp_path / "q")]) == 1


def test_cli_config_for_other_experiment(tmp_path):
    cfg = _write_toml(tmp_path / "c.toml", SMALL_THICK)
    assert cli.main(["chaos", "--config", str(cfg)]) == 2
