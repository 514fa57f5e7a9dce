import json
import math
import os

import numpy as np
import pytest
import yaml

from critdrift.fields import ScalarField, write_table, read_table
from critdrift.reports import (RunConfig, ExperimentReport, run, emit_plotdata,
                               EXPERIMENTS, pmap, thread_pool_size)
from critdrift.cli import main as cli_main


def test_field_table_round_trip(box8, tmp_path):
    rng = np.random.default_rng(4)
    f = ScalarField(box8, rng.normal(size=box8.n_nodes), "f")
    path = tmp_path / "field.csv"
    write_table(f, path)
    coords, weights, values = read_table(path)
    assert np.array_equal(coords, box8.coords)
    assert np.array_equal(weights, box8.weights)
    assert np.array_equal(values[:, 0], f.values)


def test_minimal_norm_config(tmp_path):
    cfg = RunConfig(experiment="norm", h=1 / 8, output_dir=str(tmp_path),
                    fields={"f": "zero"})
    report = run(cfg)
    assert len(report.rows) == 1
    assert report.rows[0]["value"] == 0.0
    assert report.overall == "pass"


def test_report_determinism_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        cfg = RunConfig(experiment="scaling", h=1 / 8, output_dir=str(out))
        run(cfg)
    assert (out1 / "scaling.csv").read_bytes() == (out2 / "scaling.csv").read_bytes()


def test_report_round_trip_equality(tmp_path):
    cfg = RunConfig(experiment="scaling", h=1 / 8, output_dir=str(tmp_path))
    report = run(cfg)
    again = ExperimentReport.read(tmp_path, "scaling")
    assert report.equals(again)
    assert again.overall == report.overall


def test_example12_experiment_rows(tmp_path):
    cfg = RunConfig(experiment="example12", h=1 / 24, output_dir=str(tmp_path),
                    params={"r_list": [0.25, 0.125]})
    report = run(cfg)
    assert [row["r"] for row in report.rows] == [0.25, 0.125]
    for row in report.rows:
        assert {"r", "local_norm", "global_norm", "ratio"} <= set(row)
    assert report.verdicts["brackets"] == "pass"


def test_verdict_taxonomy_is_closed(tmp_path):
    cfg = RunConfig(experiment="scaling", h=1 / 8, output_dir=str(tmp_path))
    report = run(cfg)
    from critdrift.reports import VERDICTS
    assert all(v in VERDICTS for v in report.verdicts.values())


def test_unknown_experiment_rejected(tmp_path):
    with pytest.raises(ValueError, match="unknown experiment"):
        run(RunConfig(experiment="warp-drive", output_dir=str(tmp_path)))


def test_emit_plotdata_projections(tmp_path):
    cfg = RunConfig(experiment="example12", h=1 / 24, output_dir=str(tmp_path),
                    params={"r_list": [0.25, 0.125]})
    report = run(cfg)
    path = emit_plotdata(report, tmp_path)
    lines = open(path).read().splitlines()
    assert lines[0] == "log_r,log_global_norm,series"
    assert len(lines) == 3


def test_emit_plotdata_empty_report(tmp_path):
    report = ExperimentReport(experiment="norm", config={}, rows=[],
                              verdicts={}, summary={})
    path = emit_plotdata(report, tmp_path)
    lines = open(path).read().splitlines()
    assert len(lines) == 1  # header only


def test_yaml_config_and_overrides(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "experiment": "norm",
        "h": 0.125,
        "fields": {"f": "const(v=2)"},
        "exponents": {"p": 2.0},
        "output_dir": str(tmp_path),
    }))
    cfg = RunConfig.from_yaml(path)
    assert cfg.h == 0.125 and cfg.fields["f"] == "const(v=2)"
    # CLI overrides win over file values
    cfg.with_overrides(["h=0.25", "fields.f=zero", "exponents.p=3"])
    assert cfg.h == 0.25
    assert cfg.fields["f"] == "zero"
    assert cfg.exponents["p"] == 3


def test_pmap_preserves_order_and_env_cap(monkeypatch):
    monkeypatch.setenv("CRITDRIFT_THREADS", "2")
    assert thread_pool_size() == 2
    out = pmap(lambda x: x * x, range(7))
    assert out == [x * x for x in range(7)]


# ---------------------------------------------------------------------------
# CLI


def test_cli_norm_zero(capsys):
    rc = cli_main(["norm", "--field", "zero", "--h", "0.125"])
    out = capsys.readouterr().out.splitlines()
    assert rc == 0
    assert out[0] == "field_id,p,q,r,value"
    assert out[1].startswith("zero,3,inf,,0")


def test_cli_norm_small_scale(capsys):
    rc = cli_main(["norm", "--field", "const:v=1", "--h", "0.125",
                   "--p", "3", "--r", "0.25"])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    val = float(out[1].split(",")[-1])
    assert val == pytest.approx((4 * math.pi / 3) ** (1 / 3) * 0.25, rel=0.06)


def test_cli_field_writes_table(tmp_path, capsys):
    dest = tmp_path / "b.csv"
    rc = cli_main(["field", "--field", "radial:M=1", "--h", "0.125",
                   "--out", str(dest)])
    assert rc == 0 and dest.exists()
    coords, weights, values = read_table(dest)
    assert values.shape[1] == 3


def test_cli_solve_json_record(capsys):
    rc = cli_main(["solve", "--kind", "dual", "--domain", "annulus:r0=0.25,R=1",
                   "--radial", "--field", "radial:M=0.4", "--rhs", "const:v=1",
                   "--h", "0.002"])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    assert record["params"]["kind"] == "dual"
    assert record["residual"] <= 1e-10
    assert record["sigma_min"] is not None
    assert not record["near_singular"]


def test_cli_solve_near_singular_is_signal(capsys):
    rc = cli_main(["solve", "--kind", "dual", "--domain", "ball:R=1",
                   "--radial", "--field", "radial:M=2", "--rhs", "zero",
                   "--h", "0.001"])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    assert record["near_singular"] is True


def test_cli_lab_and_report(tmp_path, capsys):
    rc = cli_main(["lab", "scaling", "--out", str(tmp_path), "--set", "h=0.125"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "overall=pass" in out
    rc = cli_main(["report", "scaling", "--dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "scaling.plot.csv").exists()


def test_cli_lab_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "experiment": "norm", "h": 0.125,
        "fields": {"f": "zero"}, "output_dir": str(tmp_path),
    }))
    rc = cli_main(["lab", "--config", str(path)])
    assert rc == 0
    assert (tmp_path / "norm.csv").exists()
