import csv
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from l1heat import cli
from l1heat.config import ConfigError, ExperimentConfig, build_initial_data
from l1heat.field import GridSpec, load, norm

BASE = {
    "grid": {"dim": 1, "half_width": 20.0, "points": 256},
    "nonlinearity": {"builtin": "power", "params": {"p": 1.5}},
    "initial_data": [{"shape": "gaussian", "mass": 0.3, "width": 1.0, "center": [0.0]}],
    "numerics": {"steps": 16},
}


def write_config(tmp_path, **overrides):
    doc = json.loads(json.dumps(BASE))
    doc.update(overrides)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- config ---------------------------------------------------------------------------------------

def test_round_trip_through_manifest(tmp_path):
    cfg = ExperimentConfig.from_dict({**BASE, "experiment": "solve", "seed": 7,
                                      "second_data": [{"shape": "bump", "amplitude": 0.1, "radius": 1.0}]})
    doc = cli.manifest(cfg, [])
    again = cli.config_from_manifest(json.loads(json.dumps(doc)))
    assert again == cfg
    assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg


@given(p=st.floats(1.01, 5.0), points=st.sampled_from([8, 64, 512]), seed=st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_round_trip_property(p, points, seed):
    raw = {**BASE, "grid": {"dim": 1, "half_width": 10.0, "points": points},
           "nonlinearity": {"builtin": "power", "params": {"p": p}}, "seed": seed}
    cfg = ExperimentConfig.from_dict(raw)
    assert cli.config_from_manifest(json.loads(json.dumps(cli.manifest(cfg, [])))) == cfg


@pytest.mark.parametrize("path, value, field", [
    ("grid.points", 100, "grid.points"),
    ("grid.dim", 4, "grid.dim"),
    ("grid.half_width", -1.0, "grid.half_width"),
    ("numerics.tol", 2.0, "numerics.tol"),
    ("numerics.steps", 1, "numerics.steps"),
    ("numerics.bogus", 1, "numerics.bogus"),
    ("experiment", "fly", "experiment"),
    ("global_envelope.amplification", 0.5, "global_envelope.amplification"),
])
def test_validation_names_field(path, value, field):
    raw = json.loads(json.dumps(BASE))
    node = raw
    *head, last = path.split(".")
    for key in head:
        node = node.setdefault(key, {})
    node[last] = value
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(raw)
    assert info.value.field == field and f"'{field}'" in str(info.value)


@pytest.mark.parametrize("nl", [{"builtin": "nope"}, {"expr": "u +* 2"}, {}])
def test_bad_nonlinearity(nl):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({**BASE, "nonlinearity": nl})
    assert info.value.field == "nonlinearity"


def test_unknown_shape_and_missing_second_data():
    with pytest.raises(ConfigError, match=r"initial_data\[0\]\.shape"):
        ExperimentConfig.from_dict({**BASE, "initial_data": [{"shape": "square"}]})
    with pytest.raises(ConfigError, match="second_data"):
        ExperimentConfig.from_dict({**BASE, "experiment": "compare"})


@pytest.mark.parametrize("dim", [1, 2])
def test_gaussian_mass_and_sign(dim):
    spec = GridSpec(dim, 10.0, 64)
    f = build_initial_data(spec, [{"shape": "gaussian", "mass": 0.7, "width": 0.5, "center": [-4.0] * dim},
                                  {"shape": "gaussian", "mass": 0.2, "width": 0.5, "sign": -1,
                                   "center": [4.0] * dim}])
    assert f.integral() == pytest.approx(0.5, rel=1e-8)
    assert norm(f, 1) == pytest.approx(0.9, rel=1e-6)


def test_random_shape_is_seeded():
    spec = GridSpec(1, 10.0, 128)
    terms = [{"shape": "random", "mass": 1.0, "components": 4}]
    a, b = build_initial_data(spec, terms, seed=3), build_initial_data(spec, terms, seed=3)
    c = build_initial_data(spec, terms, seed=4)
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    assert norm(a, 1) == pytest.approx(1.0, rel=1e-8)


def test_spike_concentrates_mass():
    spec = GridSpec(1, 10.0, 128)
    f = build_initial_data(spec, [{"shape": "spike", "mass": 2.0}])
    assert np.count_nonzero(f.values) == 1 and f.integral() == pytest.approx(2.0)


# -- CLI ------------------------------------------------------------------------------------------

def test_classify_power_two_dimensions(tmp_path):
    path = write_config(tmp_path, grid={"dim": 2, "half_width": 10.0, "points": 32},
                        initial_data=[{"shape": "gaussian", "mass": 0.3, "width": 1.0}])
    assert cli.main(["classify", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["verdicts"]["I1"]["verdict"] == "convergent"
    assert report["classification"] == "well_posed_L1"
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert {"config", "seed", "versions", "outputs"} <= set(manifest)


def test_solve_zero_nonlinearity_conserves_mass(tmp_path):
    path = write_config(tmp_path, nonlinearity={"builtin": "zero"}, numerics={"steps": 16, "t_end": 1.0})
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", str(path), "--out", str(out)]) == 0
    rows = read_csv(out / "norms.csv")
    l1 = np.array([float(r["l1"]) for r in rows])
    assert len(rows) == 17 and np.allclose(l1, l1[0], rtol=1e-12)
    assert rows[-1]["status"] in ("converged", "horizon_reached")
    assert all(r["status"] == "running" for r in rows[:-1])
    assert (out / "norms.dat").read_text().startswith("#")
    final = load(out / "norms_final.field")
    assert final.values.shape == (256,)


def test_rerun_is_byte_identical(tmp_path):
    path = write_config(tmp_path, initial_data=[{"shape": "random", "mass": 0.3, "components": 3}])
    for name in ("a", "b"):
        assert cli.main(["solve", "--config", str(path), "--out", str(tmp_path / name), "--seed", "11"]) == 0
    for artifact in ("norms.csv", "norms.dat", "phi.field", "norms_final.field"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_manifest_reruns(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["solve", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    doc = json.loads((tmp_path / "a" / "manifest.json").read_text())
    cfg = cli.config_from_manifest(doc)
    assert cli.run(cfg, tmp_path / "b") == 0
    assert (tmp_path / "a" / "norms.csv").read_bytes() == (tmp_path / "b" / "norms.csv").read_bytes()


def sweep_config(tmp_path):
    values = [1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0, 3.2]
    return write_config(tmp_path, sweep={"parameter": "p", "values": values, "experiment": "classify"})


@pytest.mark.parametrize("workers", [1, 2])
def test_sweep_flips_at_critical_exponent(tmp_path, workers):
    out = tmp_path / "sweep"
    code = cli.main(["sweep", "--config", str(sweep_config(tmp_path)), "--out", str(out),
                     "--workers", str(workers)])
    assert code == 0
    rows = read_csv(out / "sweep.csv")
    verdicts = {float(r["p"]): r["I1"] for r in rows}
    assert all(v == "convergent" for p, v in verdicts.items() if p < 3)
    assert all(v == "divergent" for p, v in verdicts.items() if p >= 3)
    assert (out / "000_p=1.2" / "report.json").exists()


def test_sweep_workers_agree(tmp_path):
    path = sweep_config(tmp_path)
    for w in ("1", "2"):
        assert cli.main(["sweep", "--config", str(path), "--out", str(tmp_path / w), "--workers", w]) == 0
    assert (tmp_path / "1" / "sweep.csv").read_bytes() == (tmp_path / "2" / "sweep.csv").read_bytes()


def test_dry_run_prints_plan(tmp_path, capsys):
    out = tmp_path / "never"
    assert cli.main(["sweep", "--config", str(sweep_config(tmp_path)), "--out", str(out), "--dry-run"]) == 0
    text = capsys.readouterr().out
    assert "experiment: sweep" in text and "010_p=3.2" in text
    assert not out.exists()


def test_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, grid={"dim": 1, "half_width": 20.0, "points": 100})
    assert cli.main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "grid.points" in capsys.readouterr().err


def test_set_override(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli.main(["classify", "--config", str(path), "--set", "grid.dim=4", "--dry-run"]) == 2
    assert "grid.dim" in capsys.readouterr().err
    assert cli.main(["classify", "--config", str(path), "--set", "nonlinearity.params.p=3.5", "--dry-run"]) == 0
    assert "3.5" in capsys.readouterr().out


def test_missing_config_file(tmp_path):
    assert cli.main(["classify", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_compare_and_cdep(tmp_path):
    second = [{"shape": "gaussian", "mass": 0.3, "width": 1.0, "center": [0.0]},
              {"shape": "bump", "amplitude": 0.01, "radius": 1.0}]
    path = write_config(tmp_path, second_data=second)
    for cmd in ("compare", "cdep"):
        out = tmp_path / cmd
        assert cli.main([cmd, "--config", str(path), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["passed"] is True


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a supercritical source with large data: the guaranteed horizon collapses under continuation
    path = write_config(tmp_path, nonlinearity={"builtin": "power", "params": {"p": 2.0}},
                        initial_data=[{"shape": "gaussian", "mass": 5.0, "width": 1.0}],
                        global_envelope={"amplification": 2.0, "smallness": 10.0, "horizon": 1.0})
    code = cli.main(["global", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == 3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "error" in report and "witness" in report
    assert "numerical failure" in capsys.readouterr().err


CONFIG_DIR = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert cli.main(["solve", "--config", str(path), "--dry-run"]) == 0
    ExperimentConfig.load(path)
