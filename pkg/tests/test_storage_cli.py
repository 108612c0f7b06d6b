import json
import struct

import numpy as np
import pytest

from fnls.cli import main
from fnls.config import ConfigError, RunConfig
from fnls.domain import Field, Grid
from fnls.storage import (
    SnapshotError,
    decode_field,
    encode_field,
    read_snapshot,
    write_csv,
    write_json,
    write_snapshot,
)

# a sweep reduced to the default cell, for end-to-end runs of verify
SMALL_VERIFY = {
    "sweep_s": [1.0],
    "sweep_alpha": [2.0],
    "sweep_lambda": [1.0],
    "sweep_deltas": [1e-3],
    "T": 5.0,
    "smoke_2d": False,
}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# ---------------------------------------------------------------- snapshots


@pytest.mark.parametrize("complex_", [False, True])
def test_snapshot_roundtrip(tmp_path, rng, complex_):
    g = Grid(2, 3.0, 16)
    vals = rng.standard_normal(g.shape)
    if complex_:
        vals = vals + 1j * rng.standard_normal(g.shape)
    f = Field(g, vals)
    path = write_snapshot(tmp_path / "f.fnls", f)
    back = read_snapshot(path)
    assert back.grid == g
    assert np.array_equal(back.values, vals)


def test_snapshot_rejects_corruption(grid):
    data = encode_field(Field(grid, np.ones(grid.N)))
    with pytest.raises(SnapshotError, match="magic"):
        decode_field(b"XXXX" + data[4:])
    with pytest.raises(SnapshotError):
        decode_field(data[:-8])
    with pytest.raises(SnapshotError):
        decode_field(data[:10])
    bad_version = data[:4] + struct.pack("<I", 99) + data[8:]
    with pytest.raises(SnapshotError, match="version"):
        decode_field(bad_version)


def test_report_writers_are_deterministic(tmp_path):
    obj = {"b": np.float64(0.1), "a": [np.int64(3), np.bool_(True)], "nan": float("nan")}
    p1 = write_json(tmp_path / "a.json", obj)
    p2 = write_json(tmp_path / "b.json", obj)
    assert p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text()) == {"a": [3, True], "b": 0.1, "nan": None}
    c = write_csv(tmp_path / "c.csv", {"t": np.array([0.0, 0.1]), "d": np.array([1e-3, 2e-3])})
    assert c.read_text().splitlines() == ["t,d", "0.0,0.001", "0.1,0.002"]


# ---------------------------------------------------------------- config


def test_config_defaults():
    cfg = RunConfig()
    assert cfg.p == 3.0 and cfg.N == 512
    assert RunConfig(n=2).N == 128 and RunConfig(n=2).p == 2.0
    assert RunConfig(s=0.5).p == 2.0


@pytest.mark.parametrize("data,needle", [
    ({"p": 5}, "mass-subcritical"),
    ({"N": 511}, "even"),
    ({"s": 0}, "s must"),
    ({"tol": -1.0}, "tol"),
    ({"dt": 0.0}, "dt"),
    ({"sectors": ["diagonal"]}, "sectors"),
    ({"colour": "red"}, "unknown config keys"),
])
def test_config_rejections(data, needle):
    with pytest.raises(ConfigError, match=needle):
        RunConfig.from_dict(data)


def test_config_lambda_key_roundtrip():
    cfg = RunConfig.from_dict({"lambda": 2.0})
    assert cfg.lam == 2.0
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


# ---------------------------------------------------------------- CLI


def test_cli_groundstate_default(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["groundstate", "--out", str(out)]) == 0
    rep = json.loads((out / "groundstate.json").read_text())
    assert rep["groundstate"]["el_residual"] <= 1e-8
    assert all(rep["invariants"].values())
    for name in ("groundstate.fnls", "groundstate.csv", "groundstate.png"):
        assert (out / name).exists()


def test_global_flag_before_subcommand(tmp_path):
    out = tmp_path / "g"
    assert main(["--out", str(out), "groundstate"]) == 0
    assert (out / "groundstate.json").exists()


def test_cli_supercritical_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"p": 5, "s": 1, "n": 1})
    assert main(["groundstate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "mass-subcritical" in capsys.readouterr().err


def test_cli_odd_grid_exits_2(tmp_path):
    cfg = write_config(tmp_path, {"N": 511})
    assert main(["groundstate", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cli_unreadable_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["groundstate", "--config", str(bad)]) == 2


def test_cli_solver_failure_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {"max_iter": 1})
    assert main(["groundstate", "--config", cfg, "--out", str(tmp_path)]) == 3


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solved")
    assert main(["groundstate", "--out", str(out)]) == 0
    return out


def test_cli_spectrum_default(solved, capsys):
    assert main(["spectrum", "--out", str(solved)]) == 0
    rep = json.loads((solved / "spectrum.json").read_text())
    assert rep["certificates"]["indices"]["n_plus"] == 1
    assert rep["certificates"]["indices"]["ker_plus_dim"] == 0
    assert rep["certificates"]["sturm"]["passed"]
    lines = (solved / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "operator,sector,index,eigenvalue,residual,sign_changes"


def test_cli_spectrum_odd_only(solved, tmp_path):
    out = tmp_path / "odd"
    snap = solved / "groundstate.fnls"
    assert main(["spectrum", "--out", str(out), "--groundstate", str(snap), "--sectors", "odd"]) == 0
    rep = json.loads((out / "spectrum.json").read_text())
    assert {s["sector"] for s in rep["spectra"]} == {"odd"}
    assert set(rep["certificates"]) == {"sector_relation"}


def test_cli_spectrum_corrupted_snapshot(solved, tmp_path):
    bad = tmp_path / "bad.fnls"
    data = (solved / "groundstate.fnls").read_bytes()
    bad.write_bytes(b"JUNK" + data[4:])
    assert main(["spectrum", "--out", str(tmp_path), "--groundstate", str(bad)]) == 2


def test_cli_spectrum_grid_mismatch(solved, tmp_path):
    cfg = write_config(tmp_path, {"N": 256})
    snap = str(solved / "groundstate.fnls")
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path), "--groundstate", snap]) == 2


def test_cli_stability_default(solved, tmp_path):
    out = tmp_path / "stab"
    snap = str(solved / "groundstate.fnls")
    assert main(["stability", "--out", str(out), "--groundstate", snap, "--delta", "1e-3"]) == 0
    header = (out / "stability.csv").read_text().splitlines()[0]
    assert header == "t,d,theta,mu,eta_norm,zeta_norm,E_drift,P_drift"
    meta = json.loads((out / "stability.meta.json").read_text())
    assert "timestamp" in meta
    assert "timestamp" not in json.loads((out / "stability.json").read_text())
    assert (out / "stability.png").exists()


def test_cli_stability_unperturbed(solved, tmp_path):
    snap = str(solved / "groundstate.fnls")
    assert main(["stability", "--out", str(tmp_path), "--groundstate", snap,
                 "--delta", "0", "--T", "10"]) == 0
    d = np.loadtxt(tmp_path / "stability.csv", delimiter=",", skiprows=1)[:, 1]
    assert d.max() <= 1e-5


def test_cli_stability_coarse_step_aborts(solved, tmp_path, capsys):
    snap = str(solved / "groundstate.fnls")
    assert main(["stability", "--out", str(tmp_path), "--groundstate", snap, "--dt", "1"]) == 4
    assert "conservation" in capsys.readouterr().err


def test_cli_evolve(solved, tmp_path):
    snap = str(solved / "groundstate.fnls")
    assert main(["evolve", "--out", str(tmp_path), "--groundstate", snap, "--T", "1"]) == 0
    assert read_snapshot(tmp_path / "final.fnls").grid == Grid(1, 12.0, 512)
    rep = json.loads((tmp_path / "evolution.json").read_text())
    assert rep["max_P_drift"] <= 1e-10


def test_cli_verify_fault_injection(solved, tmp_path, capsys):
    # hand-edit the stored wave so that the power constraint fails
    phi = read_snapshot(solved / "groundstate.fnls")
    bad = write_snapshot(tmp_path / "edited.fnls", Field(phi.grid, 1.2 * phi.values))
    cfg = write_config(tmp_path, SMALL_VERIFY)
    code = main(["verify", "--config", cfg, "--out", str(tmp_path / "v"), "--groundstate", str(bad)])
    assert code == 1
    rep = json.loads((tmp_path / "v" / "verify.json").read_text())
    failed = [r for r in rep["rows"] if not r["passed"]]
    assert [r["claim"] for r in failed] == ["groundstate-snapshot"]
    assert "constraint" in failed[0]["measured"]["failed"]
    assert "groundstate-snapshot" in capsys.readouterr().err


def test_cli_verify_fractional_sweep(tmp_path):
    cfg = write_config(tmp_path, {**SMALL_VERIFY, "sweep_s": [0.5], "sweep_alpha": [2.0, 4.0]})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    rep = json.loads((tmp_path / "v" / "verify.json").read_text())
    cells = {r["case"] for r in rep["rows"] if r["claim"] == "sector-identity"}
    assert cells == {"s=0.5,V=|x|^2,lambda=1", "s=0.5,V=|x|^4,lambda=1"}
