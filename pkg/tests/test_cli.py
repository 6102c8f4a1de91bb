import json

import numpy as np
import pytest

from spdc_forge import cli, interference


def run(tmp_path, *argv, out="out"):
    code = cli.main([*argv, "--out", str(tmp_path / out)])
    return code, tmp_path / out


def write_config(tmp_path, name="cfg.json", **fields):
    p = tmp_path / name
    p.write_text(json.dumps(fields))
    return p


def report(out):
    return json.loads((out / "report.json").read_text())


def test_budget_success_and_report(tmp_path, capsys):
    code, out = run(tmp_path, "tpi", "budget")
    assert code == 0
    rep = report(out)
    assert rep["results"]["visibility"] == pytest.approx(0.9984 * 0.9974 * 0.99698)
    assert rep["config_hash"] == json.loads(capsys.readouterr().out)["config_hash"]


def test_every_csv_is_stamped(tmp_path):
    code, out = run(tmp_path, "tpi", "multipair", "--power-mw", "1", "3", "5.8", "--pmax", "5")
    assert code == 0
    h = report(out)["config_hash"]
    csvs = sorted(out.glob("*.csv"))
    assert csvs
    for p in csvs:
        assert p.read_text().splitlines()[0] == f"# config_hash={h}"
    assert [p.name for p in csvs] == sorted(report(out)["files"])


def test_hash_depends_on_config_and_arguments(tmp_path):
    a = write_config(tmp_path, "a.json", sigma_ratio=1 / 6.04)
    b = write_config(tmp_path, "b.json", sigma_ratio=1 / 6.5)
    run(tmp_path, "tpi", "budget", "--config", str(a), out="a")
    run(tmp_path, "tpi", "budget", "--config", str(b), out="b")
    run(tmp_path, "tpi", "budget", "--config", str(a), "--factors", "0.99", out="c")
    hashes = {report(tmp_path / k)["config_hash"] for k in "abc"}
    assert len(hashes) == 3


def test_hash_ignores_output_dir_and_workers(tmp_path):
    run(tmp_path, "tpi", "budget", out="a")
    run(tmp_path, "tpi", "budget", "--workers", "3", out="b")
    assert report(tmp_path / "a")["config_hash"] == report(tmp_path / "b")["config_hash"]


def test_seeded_rerun_is_identical(tmp_path):
    args = ("tpi", "fringe-mc", "--trials", "2000", "--seed", "5")
    run(tmp_path, *args, out="a")
    run(tmp_path, *args, out="b")
    assert (tmp_path / "a" / "fringe_mc.csv").read_bytes() == (tmp_path / "b" / "fringe_mc.csv").read_bytes()
    run(tmp_path, "tpi", "fringe-mc", "--trials", "2000", "--seed", "6", out="c")
    assert (tmp_path / "a" / "fringe_mc.csv").read_bytes() != (tmp_path / "c" / "fringe_mc.csv").read_bytes()


def test_numeric_failure_exit_3(tmp_path, capsys):
    code, _ = run(tmp_path, "tpi", "fringe-mc", "--i-avg", "0.1", "--sigma-eps", "1.0", "--trials", "100")
    assert code == cli.EXIT_NUMERIC
    assert "numerical error" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path):
    bad = write_config(tmp_path, colour="blue")
    code, _ = run(tmp_path, "tpi", "budget", "--config", str(bad))
    assert code == cli.EXIT_CONFIG
    code, _ = run(tmp_path, "tpi", "budget", "--config", str(tmp_path / "missing.json"))
    assert code == cli.EXIT_CONFIG
    (tmp_path / "broken.json").write_text("{not json")
    code, _ = run(tmp_path, "tpi", "budget", "--config", str(tmp_path / "broken.json"))
    assert code == cli.EXIT_CONFIG


def test_missing_material_exit_2(tmp_path):
    code, _ = run(tmp_path, "validate", "--material", str(tmp_path / "nope.json"))
    assert code == cli.EXIT_CONFIG


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["reproduce", "fig99"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["poling", "teleport"])
    assert exc.value.code == 2


def test_validate_clean_default(tmp_path):
    code, out = run(tmp_path, "validate")
    assert code == 0
    assert report(out)["results"]["diagnostics"] == []


def test_validate_crystal_shorter_than_coherence_length(tmp_path, capsys):
    cfg = write_config(tmp_path, crystal={"length_mm": 0.01})
    code, _ = run(tmp_path, "validate", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG
    assert "coherence length" in capsys.readouterr().err


def test_validate_wavelength_outside_window(tmp_path):
    cfg = write_config(tmp_path, crystal={"lambda_pump_nm": 200.0, "lambda_signal_nm": 400.0,
                                          "lambda_idler_nm": 400.0})
    code, _ = run(tmp_path, "validate", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG


def test_validate_coverage_warning(tmp_path):
    cfg = write_config(tmp_path, grid={"n": 512, "half_width_nm": 0.6})
    code, out = run(tmp_path, "validate", "--config", str(cfg))
    assert code == 0
    diags = report(out)["results"]["diagnostics"]
    assert [d["level"] for d in diags] == ["warning"]
    assert "cover" in diags[0]["message"]


def test_validate_min_width(tmp_path):
    cfg = write_config(tmp_path, generator="sub-fixed", min_width_um=40.0)
    code, _ = run(tmp_path, "validate", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG


def test_reproduce_table1(tmp_path):
    code, out = run(tmp_path, "reproduce", "tableI")
    assert code == 0
    rep = report(out)
    assert rep["passed"]
    assert set(rep["checks"]) == {"tau", "rho", "visibility"}


def test_reproduce_table2(tmp_path):
    code, out = run(tmp_path, "reproduce", "tableII", "--fast")
    assert code == 0
    assert report(out)["checks"]["budget"]["pass"]


def test_splitter_counts_argument(tmp_path):
    code, out = run(tmp_path, "tpi", "splitter", "--counts", "1000", "1000", "1000", "1000")
    assert code == 0
    assert report(out)["results"]["tau"] == pytest.approx(0.5)


def test_fit_command(tmp_path):
    data = interference.synthetic_dip(seed=3)
    p = tmp_path / "dip.csv"
    data.to_csv(p)
    code, out = run(tmp_path, "tpi", "fit", "--data", str(p), "--bootstrap", "20")
    assert code == 0
    rep = report(out)
    assert 0.9 < rep["results"]["visibility"] < 1.0
    assert (out / "dip_fit.csv").read_text().startswith("# config_hash=")


def test_poling_then_jsa_pipeline(tmp_path):
    code, out = run(tmp_path, "poling", "engineer", "--fast")
    assert code == 0
    layout = next(out.glob("*layout*.csv"))
    code, out2 = run(tmp_path, "jsa", "build", "--fast", "--layout", str(layout), out="jsa")
    assert code == 0
    mats = [p for p in out2.glob("*.csv")]
    assert mats
    jsa_csv = next(p for p in mats if "jsa" in p.name and "jsi" not in p.name)
    code, out3 = run(tmp_path, "jsa", "purity", str(jsa_csv), out="pur")
    assert code == 0
    assert report(out3)["results"]["purity"] == pytest.approx(report(out2)["results"]["purity"], abs=1e-10)


def test_calibrate_shaper_sign(tmp_path):
    _, a = run(tmp_path, "calibrate", "shaper", "--delta-mm", "1.0", out="a")
    _, b = run(tmp_path, "calibrate", "shaper", "--delta-mm", "-1.0", out="b")
    ga = report(a)["results"]["gdd_ps2"]
    gb = report(b)["results"]["gdd_ps2"]
    assert np.sign(ga) == -np.sign(gb) and ga == pytest.approx(-gb)
