import numpy as np
import pytest

from ecsupg.cases import resting_slice
from ecsupg.cli import (
    ConfigError,
    config_from_dict,
    main,
    parse_config,
    perturbed_state,
    read_diagnostics,
    read_snapshot,
    sample_fields,
    verify_suite,
    write_diagnostics,
    write_snapshot,
)
from ecsupg.diagnostics import DiagnosticsRecord
from ecsupg.timestepping import RunConfig, SchemeKind, run

REST = "case: rest\nnx: 3\nnz: 3\nn_steps: 2\npicard_iters: 2\n"


def test_minimal_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(REST)
    setup, cfg, overrides, spc = parse_config(path)
    assert setup.name == "rest" and (setup.disc.mesh.nx, setup.disc.mesh.nz) == (3, 3)
    assert cfg.n_steps == 2 and cfg.tau_value == 0.5 * cfg.dt
    assert overrides == {} and spc == 2


def test_config_overrides():
    setup, cfg, overrides, _ = config_from_dict(
        {"case": "rest", "dt": 4.0, "tau": 0.5, "scheme": "nec_direct", "constants": {"g": 9.81}, "sample_per_cell": 3}
    )
    assert cfg.dt == 4.0 and cfg.tau_value == 0.5 and cfg.scheme is SchemeKind.NEC_DIRECT
    assert setup.constants.g == 9.81 and overrides == {"g": 9.81}


@pytest.mark.parametrize(
    "data",
    [
        {"case": "nowhere"},
        {"case": "rest", "dt": -1.0},
        {"case": "rest", "picard_iters": 0},
        {"case": "rest", "resolution": 100.0},
        {"case": "rest", "bogus": 1},
        {"case": "rest", "constants": {"mu": 1.0}},
        {"case": "rest", "constants": [1, 2]},
        {"case": "rest", "sample_per_cell": 0},
        {"case": "rest", "scheme": "unknown"},
        {"case": "straka", "resolution": 333.0},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_yaml_error_reports_position(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("case: rest\nnx: [1, 2\n")
    with pytest.raises(ConfigError, match="line"):
        parse_config(path)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "list.yaml")


def _records():
    case = resting_slice(3, 3)
    records, _, _ = run(case, RunConfig(dt=2.0, n_steps=2, picard_iters=1))
    return records


def test_diagnostics_roundtrip(tmp_path):
    records = _records()
    path = tmp_path / "d.csv"
    write_diagnostics(records, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0].decode() == ",".join(DiagnosticsRecord.columns())
    assert read_diagnostics(path) == records


def test_diagnostics_header_checked(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_diagnostics(path)


def test_snapshot_roundtrip(tmp_path):
    case = resting_slice(3, 2, Lx=3000.0, Lz=2000.0)
    z = perturbed_state(case, np.random.default_rng(1))
    z.time = 0.1
    path = tmp_path / "s.bin"
    write_snapshot(z, path)
    back = read_snapshot(path, case.disc)
    for a, b in ((z.u, back.u), (z.rho, back.rho), (z.theta, back.theta)):
        np.testing.assert_array_equal(a, b)
    assert back.time == 0.1
    fresh = read_snapshot(path)
    assert fresh.disc.model == "euler" and fresh.disc.mesh.Lz == 2000.0


def test_snapshot_mismatch_rejected(tmp_path):
    case = resting_slice(3, 2)
    path = tmp_path / "s.bin"
    write_snapshot(case.state, path)
    with pytest.raises(ValueError):
        read_snapshot(path, resting_slice(3, 3).disc)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_snapshot(path)
    (tmp_path / "junk.bin").write_bytes(b"hello")
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "junk.bin")


def test_sampled_fields_reproduce_linear_data():
    case = resting_slice(2, 2, Lx=2.0, Lz=2.0)
    s = sample_fields(case.state, per_cell=3)
    assert len(s["x"]) == 4 * 9
    np.testing.assert_allclose(s["theta"], 300.0)
    assert set(s) == {"x", "z", "u_x", "u_z", "rho", "theta"}
    assert np.all((s["x"] > 0) & (s["x"] < 2.0))


def test_main_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(REST + "output_every: 2\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output-dir", str(out), "--picard", "1"]) == 0
    assert "rel_energy_err" in capsys.readouterr().out
    assert len(read_diagnostics(out / "diagnostics.csv")) == 3
    names = sorted(p.name for p in (out / "snapshots").iterdir())
    assert names == ["step_000000.bin", "step_000000.csv", "step_000002.bin", "step_000002.csv"]


def test_main_runs_are_deterministic(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(REST)
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert (tmp_path / "a/snapshots/step_000002.bin").read_bytes() == (tmp_path / "b/snapshots/step_000002.bin").read_bytes()


def test_main_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("case: rest\nwhat: 1\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_verify_suite_passes():
    results = verify_suite(0)
    assert len(results) == 6
    assert all(passed for *_, passed in results)
