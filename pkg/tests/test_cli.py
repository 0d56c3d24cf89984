import json

import pytest

from greenwalk.cli import main


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_green_stdout(capsys):
    code, report = run_json(capsys, ["green"])
    assert code == 0
    assert report["command"] == "green"
    assert abs(report["green_at_e"] - 1.5) < 1e-6
    assert report["radius"] == 8


def test_green_series_method(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"method": "series", "radius": 5})
    code, report = run_json(capsys, ["green", "--config", cfg])
    assert code == 0 and report["method"] == "series"


def test_unknown_config_key_names_field(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"radius": 4, "bogus": 1})
    code = main(["green", "--config", cfg])
    assert code == 64
    err = capsys.readouterr().err
    assert "bogus" in err and "green" in err


def test_malformed_config_reports_position(capsys, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"radius": 4,,}')
    code = main(["green", "--config", str(path)])
    assert code == 64
    assert "line 1" in capsys.readouterr().err


def test_missing_config_file(capsys, tmp_path):
    code = main(["green", "--config", str(tmp_path / "absent.json")])
    assert code == 64


def test_unknown_flag_exits_usage():
    with pytest.raises(SystemExit) as exc:
        main(["green", "--frobnicate"])
    assert exc.value.code == 64


def test_unknown_subcommand_exits_usage():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 64


def test_invalid_walk_name(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"walk": "levy-flight:2"})
    assert main(["green", "--config", cfg]) == 64


def test_flag_overrides_config(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"seed": 3, "samples": 2000,
                                            "depth": 1})
    code, report = run_json(capsys, ["harmonic", "--config", cfg,
                                     "--seed", "12"])
    assert code == 0 and report["seed"] == 12


def test_martin_end_kernel(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"g": "a", "end": "end:b"})
    code, report = run_json(capsys, ["martin", "--config", cfg])
    assert code == 0
    assert report["kernel"] == pytest.approx(1 / 3, abs=1e-12)
    assert report["error"] == 0.0


def test_martin_requires_target(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"g": "a"})
    assert main(["martin", "--config", cfg]) == 64


def test_spine_scan_drift(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"walk": "drift-z:0.7"})
    code, report = run_json(capsys, ["spine-scan", "--config", cfg])
    assert code == 0
    assert report["best"]["label"] == "+inf"
    assert report["best"]["isSpine"] is True


def test_kms_beta2_fails_verdict(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json",
                       {"beta": 2.0, "samples": 2000, "depth": 2,
                        "g1": "b", "f1": "a"})
    code, report = run_json(capsys, ["kms", "--config", cfg])
    assert code == 2
    assert report["z"] > 3.0
    assert report["residual"] == pytest.approx(0.5, abs=0.1)


def test_kms_beta1_passes(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json",
                       {"beta": 1.0, "samples": 20_000, "depth": 2,
                        "g1": "b", "f1": "a"})
    code, report = run_json(capsys, ["kms", "--config", cfg])
    assert code == 0 and report["z"] < 3.0


def test_kms_needs_free_walk(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"walk": "drift-z:0.7"})
    assert main(["kms", "--config", cfg]) == 64


def test_out_file_and_meta(tmp_path, capsys):
    out = tmp_path / "nested" / "report.json"
    code = main(["green", "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["command"] == "green"
    meta = json.loads((tmp_path / "nested" / "report.json.meta.json")
                      .read_text())
    assert meta["command"] == "green"
    assert "created_utc" in meta and meta["seed"] == 7
    # stdout stays quiet when writing to a file
    assert capsys.readouterr().out == ""


def test_same_seed_reports_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, "c.json", {"samples": 2000, "depth": 2})
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(["conformal", "--config", cfg, "--seed", "5",
                 "--out", str(a)]) == 0
    assert main(["conformal", "--config", cfg, "--seed", "5",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert report["verdict"] == "C"
    assert report["evidence_set"] == [1]


def test_csv_format(capsys):
    code = main(["green", "--format", "csv"])
    assert code == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0] == "key,value"
    assert any(line.startswith("green_at_e,") for line in lines)


def test_phi_exact_measure(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json",
                       {"measure": "exact", "depth": 2,
                        "grid": [0.0, 0.5, 1.0]})
    code, report = run_json(capsys, ["phi", "--config", cfg])
    assert code == 0
    assert report["values"][0] == pytest.approx(1.0, abs=1e-12)
    assert report["values"][1] == pytest.approx(3 ** 0.5 / 2, abs=1e-12)
    assert report["convex_within_error"] is True


def test_phi_rejects_bad_measure(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json", {"measure": "imaginary"})
    assert main(["phi", "--config", cfg]) == 64


def test_product_report(capsys, tmp_path):
    cfg = write_config(tmp_path, "c.json",
                       {"samples": 2000, "depth": 2, "radius": 4})
    code, report = run_json(capsys, ["product", "--config", cfg])
    assert code == 0
    assert report["mass_gap"] <= 1e-12
    assert report["generation"]["covered"] is True
    push = report["pushforward"]
    assert push["conformality_worst_z"] < 3.0
    assert push["equivariance_max_residual"] < 1e-9


def test_suite_small(tmp_path, capsys):
    out = tmp_path / "suite.json"
    cfg = write_config(tmp_path, "c.json", {"samples": 20_000})
    code = main(["suite", "--config", cfg, "--out", str(out)])
    printed = capsys.readouterr().out
    assert code == 0
    assert printed.count("PASS") == 13
    report = json.loads(out.read_text())
    assert report["passed"] is True
    assert len(report["checks"]) == 13
    meta = json.loads((tmp_path / "suite.json.meta.json").read_text())
    assert "timings_s" in meta and "total_s" in meta
