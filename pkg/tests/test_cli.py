import json

import numpy as np
import pytest

import unimap as um
from unimap import cli
from unimap.errors import ConfigError


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def small_demo_config(**overrides):
    cfg = {
        "basis": {"kind": "spatial", "N": 80},
        "horizon": 8,
        "measurement": {"M": 2000, "seed": 11},
    }
    cfg.update(overrides)
    return cfg


# ---------------------------------------------------------------------------
# config validation

def test_defaults_mirror_demo_setup():
    cfg = cli.validate_config({}, "evolve")
    assert cfg.map_family == "quadratic"
    assert cfg.map_params == {"A": 0.25123, "B": 0.60123, "C": -0.10123}
    assert cfg.domain == (-1.0, 1.0)
    assert cfg.N == 200
    assert cfg.epsilon == 0.1
    assert cfg.kappa == 0.1
    assert cfg.init.center == 0.5


def test_negative_epsilon_rejected():
    with pytest.raises(ConfigError) as err:
        cli.validate_config({"epsilon": -1}, "build")
    assert err.value.key == "epsilon"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        cli.validate_config({"epsilonn": 0.1}, "build")
    assert err.value.key == "epsilonn"
    with pytest.raises(ConfigError):
        cli.validate_config({"basis": {"kind": "spatial", "M": 3}}, "build")


def test_bad_values_rejected():
    for payload, key in [
        ({"unitarization": "qr"}, "unitarization"),
        ({"kappa": 0.0}, "kappa"),
        ({"kappa": 1.5}, "kappa"),
        ({"horizon": 0}, "horizon"),
        ({"quad_order": 2}, "quad_order"),
        ({"basis": {"kind": "wavelet", "N": 10}}, "basis.kind"),
        ({"map": {"family": "cubic", "params": {}}}, "map.family"),
        ({"measurement": {"M": 0, "seed": 1}}, "measurement.M"),
        ({"domain": [1, -1]}, "domain"),
    ]:
        with pytest.raises(ConfigError) as err:
            cli.validate_config(payload, "evolve")
        assert err.value.key == key


def test_fourier_only_for_build():
    cli.validate_config({"basis": {"kind": "fourier", "N": 32}}, "build")
    with pytest.raises(ConfigError):
        cli.validate_config({"basis": {"kind": "fourier", "N": 32}}, "evolve")


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, {"epsilon": -1})
    assert cli.main(["build", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "epsilon" in capsys.readouterr().err
    missing = str(tmp_path / "nope.json")
    assert cli.main(["build", "--config", missing]) == 2


# ---------------------------------------------------------------------------
# pipelines

def test_build_command(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["build", "--config", cfgp, "--out", str(out)]) == 0
    for name in ("matrix_spatial_truncated.txt", "matrix_spatial_filtered.txt",
                 "matrix_spatial_block_polar.txt", "manifest.txt"):
        assert (out / name).exists()
    entries, fields = um.read_matrix_dump(out / "matrix_spatial_block_polar.txt")
    assert fields["stage"] == "unitarized(block_polar)"
    U = entries
    assert np.max(np.abs(U.conj().T @ U - np.eye(80))) < 1e-10


def test_evolve_command_and_artifacts(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["evolve", "--config", cfgp, "--out", str(out)]) == 0
    diag = (out / "diagnostics.csv").read_text().splitlines()
    assert diag[0].startswith("t,mean_x,")
    assert len(diag) == 10  # header + t = 0..8
    dist = (out / "distributions.csv").read_text().splitlines()
    assert dist[0] == "t,a,x,F"
    assert len(dist) == 1 + 9 * 80
    orbit = (out / "classical_orbit.csv").read_text().splitlines()
    assert orbit[0] == "t,x"
    assert len(orbit) == 10


def test_echo_scan_command(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["echo-scan", "--config", cfgp, "--out", str(out)]) == 0
    report = json.loads((out / "echo_report.json").read_text())
    assert report["verdict"] == "echo_found"
    assert isinstance(report["t_c"], int)


def test_attractors_command(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config(horizon=12))
    out = tmp_path / "out"
    assert cli.main(["attractors", "--config", cfgp, "--out", str(out)]) == 0
    lines = (out / "attractors.csv").read_text().splitlines()
    assert lines[0] == "location,fwhm"
    assert len(lines) == 2  # a single attractor for the demo map


def test_sparsity_sweep_command(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["sparsity-sweep", "--config", cfgp, "--out", str(out)]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "epsilon,nnz,max_row_nnz,max_col_nnz,n_blocks,median_block_width"
    widths = [float(r.split(",")[-1]) for r in rows[1:]]
    assert widths == sorted(widths, reverse=True)


def test_cascade_compare_command(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config(horizon=6))
    out = tmp_path / "out"
    assert cli.main(["cascade-compare", "--config", cfgp, "--out", str(out)]) == 0
    rows = (out / "cascade_errors.csv").read_text().splitlines()
    assert rows[0] == "t,global_rel_err,max_local_rel_err,unitary_vs_cascade_gap"
    assert len(rows) == 7


def test_reproduce_paper_command(tmp_path):
    import time
    out = tmp_path / "out"
    start = time.monotonic()
    assert cli.main(["reproduce-paper", "--out", str(out)]) == 0
    assert time.monotonic() - start < 300  # the full bundle stays desk-scale
    expected = {
        "diagnostics.csv", "distributions.csv", "classical_orbit.csv",
        "matrix_spatial_truncated.txt", "matrix_spatial_global_polar.txt",
        "matrix_spatial_block_polar.txt", "matrix_fourier_truncated.txt",
        "matrix_fourier_global_polar.txt", "echo_report.json",
        "attractors.csv", "manifest.txt",
    }
    assert {p.name for p in out.iterdir()} == expected
    # distributions carry the six snapshot times
    rows = (out / "distributions.csv").read_text().splitlines()[1:]
    times = sorted({int(r.split(",")[0]) for r in rows})
    assert times == [0, 2, 4, 6, 8, 10]


def test_byte_identical_reruns(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["evolve", "--config", cfgp, "--out", str(out1)]) == 0
    assert cli.main(["evolve", "--config", cfgp, "--out", str(out2)]) == 0
    for p in out1.iterdir():
        assert (out2 / p.name).read_bytes() == p.read_bytes()


def test_workers_do_not_change_output(tmp_path):
    # matrices must be bitwise identical for any worker count; the manifest
    # records the differing worker hint and is excluded
    cfgp = write_config(tmp_path, small_demo_config())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["build", "--config", cfgp, "--out", str(out1)]) == 0
    assert cli.main(["build", "--config", cfgp, "--out", str(out2), "--workers", "4"]) == 0
    for p in out1.iterdir():
        if p.name != "manifest.txt":
            assert (out2 / p.name).read_bytes() == p.read_bytes()


# ---------------------------------------------------------------------------
# manifest

def test_manifest_checksums(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["evolve", "--config", cfgp, "--out", str(out)]) == 0
    manifest = out / "manifest.txt"
    assert cli.verify_manifest(manifest) == []
    keys = [ln.split(" = ")[0] for ln in manifest.read_text().splitlines()]
    assert keys == sorted(keys)
    assert "config.epsilon" in keys
    assert "config.measurement.seed" in keys
    assert "version" in keys


def test_manifest_detects_tampering(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config())
    out = tmp_path / "out"
    assert cli.main(["evolve", "--config", cfgp, "--out", str(out)]) == 0
    target = out / "diagnostics.csv"
    target.write_text(target.read_text() + "tampered\n")
    assert cli.verify_manifest(out / "manifest.txt") == ["diagnostics.csv"]


def test_polynomial_family_and_generator_route(tmp_path):
    # a near-identity cubic through the generator route end to end
    payload = {
        "map": {"family": "polynomial", "params": {"coeffs": [0.0, 0.9999, 0.0, 1e-4]}},
        "basis": {"kind": "spatial", "N": 50},
        "unitarization": "generator",
        "epsilon": 0.0,
    }
    cfgp = write_config(tmp_path, payload)
    out = tmp_path / "out"
    assert cli.main(["build", "--config", cfgp, "--out", str(out)]) == 0
    entries, fields = um.read_matrix_dump(out / "matrix_spatial_generator.txt")
    assert fields["stage"] == "unitarized(generator)"
    assert np.max(np.abs(entries.conj().T @ entries - np.eye(50))) < 1e-10


def test_generator_route_rejects_far_from_identity(tmp_path):
    cfgp = write_config(tmp_path, small_demo_config(unitarization="generator"))
    rc = cli.main(["build", "--config", cfgp, "--out", str(tmp_path / "out")])
    assert rc == 1  # NotNearIdentityError surfaces as a pipeline failure


def test_gradient_descent_family(tmp_path):
    payload = {
        "map": {"family": "gradient_descent",
                "params": {"eta": 0.3, "grad_coeffs": [0.0, -1.0, 0.0, 4.0]}},
        "domain": [-0.55, 0.55],
        "basis": {"kind": "spatial", "N": 100},
        "horizon": 10,
    }
    cfgp = write_config(tmp_path, payload)
    out = tmp_path / "out"
    assert cli.main(["attractors", "--config", cfgp, "--out", str(out)]) == 0
    lines = (out / "attractors.csv").read_text().splitlines()
    assert len(lines) == 3  # two wells
