import json
import warnings

import pytest

from probode import cli
from probode.presets import PRESETS, Preset, build_registry
from smoke import SMALL, small_config

EXPECTED_PRESETS = {
    "fn-forward",
    "fn-calibrate",
    "fn-posterior-det",
    "fn-posterior-rand",
    "linear-conjugate",
    "strong-order",
    "weak-order-linear",
    "fem-rates",
    "elliptic-inverse",
}


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return str(path)


def test_preset_registry_contents():
    assert set(PRESETS) == EXPECTED_PRESETS
    assert set(SMALL) == EXPECTED_PRESETS


def test_registry_rejects_empty_and_duplicates():
    with pytest.raises(ValueError):
        build_registry([])
    p = PRESETS["strong-order"]
    with pytest.raises(ValueError):
        build_registry([p, Preset(p.name, "x", "y", p.config)])


def test_presets_command_lists_all(capsys):
    assert cli.main(["presets"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert all(name in out for name in EXPECTED_PRESETS)


def test_fn_presets_use_stated_constants():
    fwd = PRESETS["fn-forward"].config.experiment
    assert (fwd.problem.a, fwd.problem.b, fwd.problem.c, fwd.problem.V0, fwd.problem.R0) == (0.2, 0.2, 3.0, -1.0, 1.0)
    assert fwd.h_values == [0.005, 0.01, 0.02, 0.05, 0.1] and fwd.sigma == 0.1 and fwd.n_samples == 100
    post = PRESETS["fn-posterior-det"].config.experiment
    assert post.obs_times == [float(t) for t in range(1, 41)] and post.noise_var == 1e-3
    assert PRESETS["fn-posterior-rand"].config.experiment.sigma == "calibrate"
    ell = PRESETS["elliptic-inverse"].config.experiment
    assert ell.x_obs == pytest.approx([0.1 * i for i in range(1, 10)]) and ell.noise_var == 1e-5


def test_validate_resolves_defaults(capsys):
    assert cli.main(["validate", "strong-order", "--seed", "5"]) == cli.EXIT_OK
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["experiment"]["seed"] == 5
    assert resolved["name"] == "strong-order"


def test_unknown_source_is_config_error(capsys):
    assert cli.main(["run", "no-such-preset"]) == cli.EXIT_CONFIG
    assert "no such file or preset" in capsys.readouterr().err


def test_invalid_json_reports_position(tmp_path, capsys):
    path = _write(tmp_path, "bad.json", '{"name": "x",\n "experiment": }')
    assert cli.main(["validate", path]) == cli.EXIT_CONFIG
    assert "bad.json:2:" in capsys.readouterr().err


def test_field_errors_are_named(tmp_path, capsys):
    cfg = small_config("strong-order").model_dump(mode="json")
    cfg["experiment"]["M"] = -1
    cfg["experiment"]["bogus"] = 1
    assert cli.main(["run", _write(tmp_path, "c.json", cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "strong-order.M" in err and "bogus" in err


def test_step_not_dividing_horizon_rejected(tmp_path, capsys):
    cfg = small_config("fn-forward").model_dump(mode="json")
    cfg["experiment"]["h_values"] = [0.3]
    assert cli.main(["validate", _write(tmp_path, "c.json", cfg)]) == cli.EXIT_CONFIG
    assert "step size 0.3 does not divide" in capsys.readouterr().err


def test_negative_seed_rejected(capsys):
    assert cli.main(["validate", "strong-order", "--seed", "-1"]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = {
        "name": "blowup",
        "experiment": {
            "kind": "forward",
            "problem": {"kind": "linear", "lam": 1e300, "u0": 1.0, "T": 1.0},
            "h_values": [0.1],
            "sigma": 1.0,
            "n_samples": 2,
            "reference_h": 0.1,
            "seed": 4,
        },
    }
    out = tmp_path / "out"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        code = cli.main(["run", _write(tmp_path, "c.json", cfg), "--out", str(out)])
    assert code == cli.EXIT_NUMERICAL
    failure = json.loads((out / "failure.json").read_text())
    assert failure["seed"] == 4
    assert "seed=4" in capsys.readouterr().err


@pytest.mark.parametrize("name", sorted(EXPECTED_PRESETS))
def test_manifest_lists_every_file_once(name, tmp_path):
    out = tmp_path / name
    manifest = cli.execute(small_config(name), out)
    assert manifest["schema_version"] == cli.SCHEMA_VERSION and manifest["name"] == name
    assert manifest["config"]["experiment"]["kind"] == small_config(name).experiment.kind
    paths = [f["path"] for f in manifest["files"]]
    assert len(paths) == len(set(paths)) and paths
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert on_disk == set(paths)
    assert all(len(f["sha256"]) == 64 for f in manifest["files"])


def test_run_through_main_with_seed_and_out(tmp_path, capsys):
    cfg = _write(tmp_path, "c.json", small_config("strong-order").model_dump(mode="json"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", cfg, "--seed", "9", "--out", str(a)]) == cli.EXIT_OK
    assert cli.main(["run", cfg, "--seed", "9", "--out", str(b)]) == cli.EXIT_OK
    ma = json.loads((a / "manifest.json").read_text())
    assert ma["seed"] == 9
    assert ma["files"] == json.loads((b / "manifest.json").read_text())["files"]


def test_different_seed_changes_output(tmp_path):
    cfg = small_config("fn-forward")
    m1 = cli.execute(cli.with_seed(cfg, 1), tmp_path / "s1")
    m2 = cli.execute(cli.with_seed(cfg, 2), tmp_path / "s2")
    ens = [f for f in m1["files"] if f["path"].startswith("ensemble")]
    assert ens and all(f not in m2["files"] for f in ens)
