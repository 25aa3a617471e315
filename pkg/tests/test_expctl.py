import copy
import json
import subprocess
import sys

import pytest
import yaml

from endolab import cli
from endolab.config import (
    DEFAULT_THRESHOLDS,
    RUN_DEFAULTS,
    config_hash,
    default_document,
    load_config,
    parse_config,
)
from endolab.errors import ConfigError, OracleMismatch
from endolab.fixtures import regenerate_fixtures
from endolab.scenarios import SCENARIOS, run_scenario

SMALL_RUN = dict(orbits=4, steps=5000, periods=[1, 2, 3], grids=[8, 16], points=4, seeds=[0, 1], chains=4,
                 leaf_length=10.0, bootstrap=100, density_samples=5000, density_bins=4)


def write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def linear_doc(**run):
    return default_document({"family": "linear"}, seed=7, **{**SMALL_RUN, **run})


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d.pop("seed"), "seed"),
        (lambda d: d.update(seed=-1), "seed"),
        (lambda d: d.update(seed=1.5), "seed"),
        (lambda d: d["thresholds"].pop("spectrum_tol"), "thresholds.spectrum_tol"),
        (lambda d: d["thresholds"].update(frame_tol=0), "thresholds.frame_tol"),
        (lambda d: d["thresholds"].update(bogus=1.0), "thresholds.bogus"),
        (lambda d: d["thresholds"].update(density_level=1.0), "thresholds.density_level"),
        (lambda d: d["run"].update(orbits=-3), "run.orbits"),
        (lambda d: d["run"].update(steps=10.5), "run.steps"),
        (lambda d: d["run"].update(grids=[]), "run.grids"),
        (lambda d: d["run"].update(periods=[1, "x"]), "run.periods[1]"),
        (lambda d: d["run"].update(nonsense=1), "run.nonsense"),
        (lambda d: d.update(model={"family": "nope"}), "model.family"),
        (lambda d: d.update(model={"family": "cross_shear", "params": {"eps_a": 0.1}}), "model.params.eps_b"),
        (lambda d: d.update(model={"matrix": [[1, 2, 3]]}), "model.matrix"),
        (lambda d: d.update(output={"formats": ["xml"]}), "output.formats"),
        (lambda d: d.update(extra=1), "extra"),
    ],
)
def test_config_errors_name_the_field(mutate, path):
    doc = linear_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == path


def test_run_defaults_and_hash():
    cfg = parse_config(default_document({"family": "linear"}, seed=3))
    assert cfg.run == RUN_DEFAULTS
    assert cfg.output == {"directory": "out", "formats": ["csv", "json"]}
    assert cfg.hash == config_hash(default_document({"family": "linear"}, seed=3))
    assert cfg.with_overrides(seed=4).hash != cfg.hash
    assert cfg.with_overrides(out="elsewhere").hash == cfg.hash


def test_matrix_and_perturbation_form():
    doc = linear_doc()
    doc["model"] = {"matrix": [[3, 1], [1, 1]]}
    assert parse_config(doc).build_model().degree == 2
    doc["model"] = {"family": "cross_shear", "params": {"eps_a": 0.5, "eps_b": 0.5}}
    model = parse_config(doc).build_model()
    doc["model"] = model.to_dict()
    assert parse_config(doc).build_model().to_dict() == model.to_dict()


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    js = tmp_path / "cfg.json"
    js.write_text(json.dumps(linear_doc()))
    assert load_config(str(js)).seed == 7


def test_exit_code_4_on_config_error(tmp_path, capsys):
    doc = linear_doc()
    doc["thresholds"].pop("exact_tol")
    assert cli.main(["spectrum", "--config", write(tmp_path, doc)]) == 4
    assert "thresholds.exact_tol" in capsys.readouterr().err
    assert cli.main(["spectrum", "--config", write(tmp_path, linear_doc()), "--workers", "0"]) == 4


def test_linear_model_passes_every_scenario(tmp_path, capsys):
    cfg = write(tmp_path, linear_doc())
    out = tmp_path / "out"
    for name in SCENARIOS:
        code = cli.main([name, "--config", cfg, "--out", str(out)])
        assert code == 0, capsys.readouterr().out
    man = json.loads((out / "report.manifest.json").read_text())
    assert man["passed"]
    assert {c["name"] for c in man["checks"]} >= {"spectrum", "periodic", "holonomy", "manifests_found"}


def test_exit_code_2_on_failed_assertion(tmp_path, capsys):
    doc = linear_doc()
    doc["thresholds"]["spectrum_tol"] = 1e-30
    doc["thresholds"]["telescope_tol"] = 1e-30
    doc["model"] = {"family": "cross_shear", "params": {"eps_a": 0.5, "eps_b": 0.5}}
    # impossible tolerance on the degree identity
    doc["thresholds"]["degree_tol"] = 1e-300
    assert cli.main(["spectrum", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "[FAIL]" in capsys.readouterr().out


def test_exit_code_3_on_numerical_failure(tmp_path, capsys):
    doc = linear_doc()
    doc["model"] = {"family": "generic_displacement", "params": {"eps": 3.0}}
    assert cli.main(["specialness", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3
    assert "NewtonDivergence" in capsys.readouterr().err


def test_unsupported_model_exits_4(tmp_path):
    doc = linear_doc()
    doc["model"] = {"family": "manufactured_conjugacy", "params": {"eps": 0.01}, "matrix": [[3, 1], [1, 1]]}
    assert cli.main(["holonomy", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 4


def _tree(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_outputs_independent_of_worker_count(tmp_path):
    doc = linear_doc()
    doc["model"] = {"family": "cross_shear", "params": {"eps_a": 0.5, "eps_b": 0.5}}
    cfg = write(tmp_path, doc)
    for workers in (1, 3):
        assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / f"w{workers}"),
                         "--workers", str(workers)]) == 0
    assert _tree(tmp_path / "w1") == _tree(tmp_path / "w3")


def test_csv_rows_carry_provenance(tmp_path):
    cfg = load_config(write(tmp_path, linear_doc())).with_overrides(out=str(tmp_path / "o"))
    run_scenario("periodic", cfg)
    lines = (tmp_path / "o" / "periodic.csv").read_text().splitlines()
    assert lines[0].startswith("scenario,config_hash,")
    assert all(line.startswith(f"periodic,{cfg.hash},") for line in lines[1:])


def test_seed_override_changes_hash(tmp_path):
    cfg = write(tmp_path, linear_doc())
    cli.main(["periodic", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "11"])
    man = json.loads((tmp_path / "a" / "periodic.manifest.json").read_text())
    assert man["seed"] == 11
    assert man["config_hash"] == config_hash({**linear_doc(), "seed": 11})


def test_fixtures_byte_identical_and_mismatch(tmp_path):
    doc = linear_doc()
    cfg = parse_config(copy.deepcopy(doc)).with_overrides(out=str(tmp_path / "fx"))
    path = regenerate_fixtures(cfg)
    first = open(path, "rb").read()
    regenerate_fixtures(cfg)
    assert open(path, "rb").read() == first
    entries = json.loads(first)["entries"]
    assert all(e["ok"] for e in entries)
    assert {e["oracle"] for e in entries} == {"closed-form roots", "lattice enumeration", "log eigen-modulus"}
    # tamper with the stored manifest: the next regeneration reports drift
    tampered = json.loads(first)
    tampered["entries"][0]["value"] += 1e-6
    open(path, "w").write(json.dumps(tampered))
    with pytest.raises(OracleMismatch):
        regenerate_fixtures(cfg)
    assert (tmp_path / "fx" / "fixtures.new.json").read_bytes() == first


def test_fixtures_cli_exit_codes(tmp_path):
    cfg = write(tmp_path, linear_doc())
    out = tmp_path / "fx"
    assert cli.main(["fixtures", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads((out / "fixtures.json").read_text())
    doc["entries"][-1]["value"] = -1.0
    (out / "fixtures.json").write_text(json.dumps(doc))
    assert cli.main(["fixtures", "--config", cfg, "--out", str(out)]) == 2


def test_console_script_runs(tmp_path):
    cfg = write(tmp_path, linear_doc())
    proc = subprocess.run([sys.executable, "-m", "endolab.cli", "periodic", "--config", cfg, "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "periodic: passed" in proc.stdout


def test_thresholds_all_present_in_defaults():
    assert set(DEFAULT_THRESHOLDS) == set(linear_doc()["thresholds"])
