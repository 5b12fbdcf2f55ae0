import csv

import pytest

from metaband import cli
from metaband.config import REFERENCE_TEXT
from metaband.errors import ConfigError
from metaband.pipeline import EXIT_CONFIG, EXIT_NUMERIC, fmt, resolve_stages, run_pipeline
from metaband.config import default_config

COARSE = REFERENCE_TEXT + "[numerics]\nh = 0.03125\n[sweep]\ntau_points = 6\n[series]\netas = 0.02 0.04 0.08\n"


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "coarse.cfg"
    p.write_text(COARSE, encoding="utf-8")
    return p


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, cfg_path):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["oracle", "--config", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    return out


def _rows(path):
    lines = path.read_text(encoding="utf-8").split("\n")
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    return lines[:3], list(csv.DictReader(body))


def test_resolve_stages():
    assert resolve_stages(["series"]) == ["spectra", "effective", "bands", "series"]
    assert resolve_stages(["validate"]) == ["validate"]
    assert resolve_stages(["all"])[-1] == "validate"
    with pytest.raises(ConfigError):
        resolve_stages(["nope"])


def test_float_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(float("inf")) == "inf" and fmt(True) == "true" and fmt(3) == "3"


def test_outputs_written(run_dir):
    for name in ("dirichlet.csv", "electrostatic.csv", "effective_k0.csv", "registry_k0.csv", "bands_k0.csv",
                 "intervals_k0.csv", "series.csv", "oracle.csv", "diagnostics.csv", "config.resolved", "run.log"):
        assert (run_dir / name).exists(), name


def test_csv_headers(run_dir):
    cfg_hash = default_config(h=0.03125, tau_points=6).with_values(series__etas="0.02 0.04 0.08").digest()
    head, rows = _rows(run_dir / "series.csv")
    assert head[0] == "# metaband series"
    assert head[1] == f"# config_hash: {cfg_hash}"
    assert head[2].startswith("# units: ")
    assert float(rows[0]["xi_re"]) == pytest.approx(2.8360953733, abs=1e-9)
    assert len(rows) == 5
    _, bands = _rows(run_dir / "bands_k0.csv")
    assert bands and all(0 < float(r["eta"]) < 1 for r in bands)


def test_diagnostics_and_log(run_dir):
    _, rows = _rows(run_dir / "diagnostics.csv")
    diag = {(r["stage"], r["name"]): r["value"] for r in rows}
    assert float(diag[("series", "realness")]) < 1e-8
    assert float(diag[("oracle", "slope_M2")]) > 2.7
    assert int(diag[("bands", "k0.failures")]) == 0
    assert "mesh cache miss" in (run_dir / "run.log").read_text()


def test_rerun_is_deterministic_and_hits_cache(tmp_path, run_dir, cfg_path):
    out = tmp_path / "again"
    code = cli.main(["bands", "--config", str(cfg_path), "--out", str(out), "--cache", str(run_dir / "cache"),
                     "--threads", "2"])
    assert code == 0
    assert "mesh cache hit" in (out / "run.log").read_text()
    for name in ("dirichlet.csv", "effective_k0.csv", "bands_k0.csv", "intervals_k0.csv"):
        assert (out / name).read_bytes() == (run_dir / name).read_bytes()


def test_config_errors_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(REFERENCE_TEXT + "[numerics]\nh = -1\n", encoding="utf-8")
    assert cli.main(["spectra", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert cli.main(["spectra", "--config", str(tmp_path / "none.cfg")]) == EXIT_CONFIG
    assert cli.main(["spectra", "--threads", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert run_pipeline(default_config(), ["bogus"], out_dir=tmp_path / "o") == EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path):
    cfg = default_config(h=0.0625, tau_points=2).with_values(series__interval="9999")
    assert run_pipeline(cfg, ["series"], out_dir=tmp_path, quiet=True) == EXIT_NUMERIC
    assert "numerical failure" in (tmp_path / "run.log").read_text()


def test_artifact_selection(tmp_path):
    cfg = default_config(h=0.0625).with_values(outputs__artifacts="effective")
    assert run_pipeline(cfg, ["effective"], out_dir=tmp_path, quiet=True) == 0
    assert (tmp_path / "effective_k0.csv").exists()
    assert not (tmp_path / "dirichlet.csv").exists()
