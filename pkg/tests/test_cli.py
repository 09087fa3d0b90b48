import json

import numpy as np
import pytest
import yaml

from ghostsim.cli import (OUTPUT_ENV, bundled_config, compare, load_config, main, run)
from ghostsim.errors import ConfigError, GridMismatch
from ghostsim.grid import GridSpec, RealField, read_csv


def _write(tmp_path, name, raw):
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def _bundled(name):
    return yaml.safe_load(bundled_config(name).read_text())


def test_bundled_configs_load():
    for name in ("setA-disk", "setA-point", "setB-slm", "setB-doubleslit", "section",
                 "validate-setA", "validate-setB"):
        raw = load_config(name)
        assert raw["name"] == name


def test_missing_key_exits_1_and_names_it(tmp_path, capsys):
    raw = _bundled("setA-disk")
    del raw["source"]["a0"]
    code = main(["pseudothermal", str(_write(tmp_path, "bad", raw)), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "source.a0" in capsys.readouterr().err


def test_wrongly_typed_value_names_the_key(tmp_path):
    raw = _bundled("setB-slm")
    raw["acquisition"]["frames"] = "many"
    with pytest.raises(ConfigError) as err:
        run(_write(tmp_path, "bad", raw), "slm", str(tmp_path / "o"))
    assert "acquisition.frames" in str(err.value)
    assert (tmp_path / "o" / "manifest.json").exists()


def test_unparseable_yaml_exits_1(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("a: [1, 2\n")
    assert main(["slm", str(p), "--out", str(tmp_path / "o")]) == 1


def test_far_field_violation_exits_2_with_value(tmp_path, capsys):
    raw = _bundled("setA-disk")
    raw["L"] = 1.0
    code = main(["pseudothermal", str(_write(tmp_path, "near", raw)), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "far-field factor" in err and "0.3142" in err
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "error" and man["failed_stage"] == "config"


def test_set_a_disk_fwhm(tmp_path):
    out = tmp_path / "disk"
    code = main(["pseudothermal", "setA-disk", "--out", str(out)])
    metrics = json.loads((out / "metrics.json").read_text())
    fx, fy = metrics["image"]["fwhm_x"], metrics["image"]["fwhm_y"]
    assert 0.5 * (fx + fy) == pytest.approx(5.30e-3, rel=0.10)
    assert code == 0
    for f in ("image.pgm", "image.csv", "image.json", "image_profile.csv", "predicted.csv",
              "config.yaml", "manifest.txt"):
        assert (out / f).exists()


def test_double_slit_two_lobes_background_free(tmp_path):
    out = tmp_path / "ds"
    code = main(["computational", "setB-doubleslit", "--out", str(out)])
    assert code == 0
    img = read_csv(out / "image.csv")
    row = img.values[img.grid.n // 2]
    x = img.grid.x
    left, right = row[x < 0].max(), row[x > 0].max()
    centre = row[np.abs(x) < 4e-3].max()
    assert min(left, right) > 3 * centre
    assert x[np.argmax(np.where(x < 0, row, -np.inf))] == pytest.approx(-0.02, abs=8e-3)
    man = json.loads((out / "manifest.json").read_text())
    bg = [c for c in man["checks"] if c["name"] == "background_free_pixels_within_3sigma"]
    assert bg and bg[0]["passed"]
    assert (out / "schedule.csv").exists()


def test_rerun_from_snapshot_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["slm", "setB-slm", "--frames", "300", "--out", str(a)]) in (0, 3)
    assert main(["slm", str(a / "config.yaml"), "--out", str(b)]) in (0, 3)
    assert (a / "image.csv").read_bytes() == (b / "image.csv").read_bytes()
    assert yaml.safe_load((b / "config.yaml").read_text())["acquisition"]["frames"] == 300


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "runs"))
    assert main(["validate", "validate-setB"]) == 0
    man = json.loads((tmp_path / "runs" / "validate-setB-validate" / "manifest.json").read_text())
    assert man["status"] == "passed" and man["seed"] == 0
    assert man["checks"] and all(c["passed"] for c in man["checks"])
    assert man["wall_clock_s"] > 0 and "config" in man


def test_compare_identical_and_scaled(tmp_path, capsys):
    g = GridSpec(8, 1e-3)
    v = np.random.default_rng(0).random((8, 8)) + 0.5
    a = RealField(g, v)
    assert compare(a, a, 0.0).passed
    rep = compare(RealField(g, 2 * v), a, 0.1)
    assert not rep.passed
    assert rep.max_rel_diff == pytest.approx(1.0)      # doubling is a 100% deviation
    with pytest.raises(GridMismatch):
        compare(a, RealField(GridSpec(8, 2e-3), v), 0.1)
    from ghostsim.grid import export_csv
    pa = export_csv(a, tmp_path / "a.csv")
    pb = export_csv(RealField(g, 2 * v), tmp_path / "b.csv")
    assert main(["compare", str(pa), str(pa)]) == 0
    assert main(["compare", str(pb), str(pa), "--tolerance", "0.5"]) == 3
    assert "FAIL compare" in capsys.readouterr().out
