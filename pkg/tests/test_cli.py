import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rhfpt.cli import main
from rhfpt.deg_pt import expand_degenerate
from rhfpt.errors import InputError, PreconditionError
from rhfpt.experiments import config_from_dict, fd_oracle, load_config, random_potential
from rhfpt.nondeg_pt import expand

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _cfg(**extra):
    data = {"schema_version": 1, "system": {"kind": "ring", "n_sites": 8, "n_electrons": 2}}
    data.update(extra)
    return data


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---- config ------------------------------------------------------------------------


def test_minimal_config():
    cfg = config_from_dict(_cfg())
    assert cfg.mode == "nondeg" and cfg.perturbation["seed"] == 0


def test_unknown_keys_rejected():
    for extra in ({"colour": 1}, {"perturbation": {"seed": 0, "sede": 1}}, {"scf": {"maxiter": 5}}, {"tolerances": {"slope": 1}}):
        with pytest.raises(InputError):
            config_from_dict(_cfg(**extra))


def test_schema_version_checked():
    with pytest.raises(InputError):
        config_from_dict(_cfg(schema_version=2))


def test_beta_grid_validation():
    with pytest.raises(InputError):
        config_from_dict(_cfg(beta_grid=[0.1, 0.2]))
    with pytest.raises(InputError):
        config_from_dict(_cfg(mode="wigner", beta_grid=[0.1, 0.05, 0.01]))
    config_from_dict(_cfg(mode="wigner", beta_grid=[0.1, 0.05, 0.01, 0.005]))


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputError):
        load_config(bad)


def test_shipped_configs_load():
    for p in CONFIGS.glob("*.json"):
        load_config(p)


# ---- verbs ---------------------------------------------------------------------------


def test_ground_state_verb(tmp_path, capsys):
    assert main(["ground-state", "--config", str(CONFIGS / "ring_nondeg.json"), "--out", str(tmp_path)]) == 0
    for name in ("manifest.json", "eigenvalues.csv", "summary.txt"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "ground_state").is_dir()
    assert "CHECK scf_certificate PASS" in capsys.readouterr().out


def test_expand_verb(tmp_path):
    assert main(["expand", "--config", str(CONFIGS / "ring_nondeg.json"), "--out", str(tmp_path), "--order", "3"]) == 0
    rows = _rows(tmp_path / "energy_k.csv")
    assert len(rows) == 5 and rows[0] == ["order", "energy"]
    assert (tmp_path / "gamma_3.csv").exists()
    assert len(_rows(tmp_path / "rho_k.csv")[0]) == 5


def test_expand_mo(tmp_path):
    assert main(["expand", "--config", str(CONFIGS / "double_well_mo.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "eps_k.csv").exists()


@pytest.mark.parametrize("name,order", [("ring_nondeg.json", 1), ("ring_deg.json", 1)])
def test_wigner_verb(tmp_path, name, order):
    args = ["wigner", "--config", str(CONFIGS / name), "--out", str(tmp_path), "--order", str(order)]
    assert main(args) == 0
    rows = _rows(tmp_path / f"slope_report_n{order}.csv")
    used = [r for r in rows[1:] if r[2] == "1"]
    assert len(used) >= 4


def test_fd_check_verb(tmp_path):
    assert main(["fd-check", "--config", str(CONFIGS / "ring_deg.json"), "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "fd_check.csv")) == 3


def test_wrong_mode_exits_2(tmp_path, capsys):
    code = main(["expand", "--config", str(CONFIGS / "ring_deg.json"), "--out", str(tmp_path), "--mode", "nondeg"])
    assert code == 2
    record = json.loads((tmp_path / "error.json").read_text())
    assert record["error"] == "PreconditionError" and record["diagnostics"]["classification"] == "Degenerate"
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1]) == record


def test_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["expand", "--config", str(CONFIGS / "ring_deg.json"), "--out", str(d), "--order", "2"]) == 0
    assert (a / "summary.txt").read_text() == (b / "summary.txt").read_text()
    assert (a / "energy_k.csv").read_text() == (b / "energy_k.csv").read_text()


def test_manifest_roundtrip(tmp_path):
    main(["ground-state", "--config", str(CONFIGS / "ring_deg.json"), "--out", str(tmp_path), "--seed", "9"])
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    cfg = config_from_dict(manifest["config"])
    assert cfg.to_dict() == manifest["config"] and cfg.perturbation["seed"] == 9
    assert set(manifest["versions"]) == {"python", "numpy", "scipy"}


# ---- finite-difference oracle ---------------------------------------------------------------


def test_fd_zero_potential(ring_nd):
    sys, gs = ring_nd
    assert fd_oracle(sys, gs, np.zeros(sys.n_sites)) == {"d1": 0.0, "d1_err": 0.0, "d2": 0.0, "d2_err": 0.0}


def test_fd_step_range(ring_nd):
    sys, gs = ring_nd
    w = random_potential(sys, 0)
    with pytest.raises(PreconditionError):
        fd_oracle(sys, gs, w, step=1.0)


def test_fd_against_series(ring_nd, ring_deg):
    sys, gs = ring_nd
    w = random_potential(sys, 11)
    fd = fd_oracle(sys, gs, w)
    s = expand(gs, w, 2)
    assert abs(fd["d1"] - gs.rho0 @ w) <= 1e-6 * abs(gs.rho0 @ w)
    assert abs(fd["d2"] - s.energy_k[2]) <= 1e-5 * abs(s.energy_k[2])
    sys, gs = ring_deg
    w = random_potential(sys, 11)
    fd = fd_oracle(sys, gs, w)
    s = expand_degenerate(gs, w, 2)
    assert abs(fd["d2"] - s.energy_k[2]) <= 1e-5 * abs(s.energy_k[2])
