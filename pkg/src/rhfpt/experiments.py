"""Experiment configs, pipelines and the finite-difference energy oracle."""

from __future__ import annotations

import copy
import json
import os
import platform
from dataclasses import dataclass

import numpy as np
import scipy

from .errors import InputError, PreconditionError
from .ground_state import DEGENERATE, NONDEGENERATE, classify, solve_scf
from .model import check_potential, ring_symmetry_group, system_from_spec
from .wigner import energy_change

SCHEMA_VERSION = 1
MODES = ("nondeg", "deg", "mo", "wigner", "validate")

_TOP_KEYS = {"schema_version", "system", "perturbation", "mode", "order", "beta_grid", "tolerances", "scf", "output", "fd_step"}
_PERT_KEYS = {"seed", "norm", "vector"}
_TOL_KEYS = {"slope_tol", "tol_residual", "tol_lin", "tol_cluster", "tol_q"}
_SCF_KEYS = {"symmetrizer", "max_iter"}


@dataclass
class ExperimentConfig:
    system: dict
    perturbation: dict
    mode: str = "nondeg"
    order: int = 1
    beta_grid: tuple = ()
    tolerances: dict = None
    scf: dict = None
    output: str = "out"
    fd_step: float = 1e-3
    base_dir: str = "."

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "system": self.system,
            "perturbation": self.perturbation,
            "mode": self.mode,
            "order": self.order,
            "beta_grid": list(self.beta_grid),
            "tolerances": self.tolerances or {},
            "scf": self.scf or {},
            "output": self.output,
            "fd_step": self.fd_step,
        }


def _unknown(keys, allowed, where):
    extra = set(keys) - allowed
    if extra:
        raise InputError(f"unknown keys in {where}: {sorted(extra)}", "cli.load_config", keys=sorted(extra))


def config_from_dict(data: dict, base_dir=".") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise InputError("config must be a mapping", "cli.load_config")
    _unknown(data, _TOP_KEYS, "config")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InputError(
            f"unsupported schema_version {data.get('schema_version')!r}",
            "cli.load_config",
            expected=SCHEMA_VERSION,
        )
    if "system" not in data:
        raise InputError("config needs a system table", "cli.load_config")
    pert = dict(data.get("perturbation", {"seed": 0, "norm": 1.0}))
    _unknown(pert, _PERT_KEYS, "perturbation")
    tol = dict(data.get("tolerances", {}))
    _unknown(tol, _TOL_KEYS, "tolerances")
    scf = dict(data.get("scf", {}))
    _unknown(scf, _SCF_KEYS, "scf")
    cfg = ExperimentConfig(
        system=dict(data["system"]),
        perturbation=pert,
        mode=data.get("mode", "nondeg"),
        order=int(data.get("order", 1)),
        beta_grid=tuple(float(b) for b in data.get("beta_grid", ())),
        tolerances=tol,
        scf=scf,
        output=data.get("output", "out"),
        fd_step=float(data.get("fd_step", 1e-3)),
        base_dir=base_dir,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    if cfg.mode not in MODES:
        raise InputError(f"unknown mode {cfg.mode!r}", "cli.load_config", allowed=list(MODES))
    if cfg.order < 0:
        raise InputError("order must be non-negative", "cli.load_config")
    b = np.asarray(cfg.beta_grid, dtype=float)
    if cfg.mode == "wigner" and len(b) < 4:
        raise InputError("wigner mode needs a beta_grid with at least 4 entries", "cli.load_config")
    if len(b) and (np.any(b <= 0) or np.any(np.diff(b) >= 0)):
        raise InputError("beta_grid must be strictly decreasing and positive", "cli.load_config")
    if "vector" not in cfg.perturbation and "seed" not in cfg.perturbation:
        raise InputError("perturbation needs a seed or an explicit vector", "cli.load_config")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}", "cli.load_config") from exc
    return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def build_system(cfg: ExperimentConfig):
    return system_from_spec(cfg.system, cfg.base_dir)


def symmetrizer_for(cfg: ExperimentConfig, sys):
    sym = (cfg.scf or {}).get("symmetrizer")
    if sym is None:
        return None
    if sym == "ring":
        if cfg.system.get("kind") != "ring":
            raise InputError("ring symmetrizer needs a ring system", "cli.run")
        return ring_symmetry_group(sys.n_sites)
    raise InputError(f"unknown symmetrizer {sym!r}", "cli.run")


def random_potential(sys, seed, norm=1.0):
    """Seeded Gaussian potential scaled to the requested dual norm."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(sys.n_sites)
    return norm * w / sys.dual_norm(w)


def build_perturbation(cfg: ExperimentConfig, sys):
    p = cfg.perturbation
    if "vector" in p:
        return check_potential(sys, np.asarray(p["vector"], dtype=float))
    return random_potential(sys, int(p["seed"]), float(p.get("norm", 1.0)))


def ground_state_for(cfg: ExperimentConfig, sys):
    scf = cfg.scf or {}
    tol = cfg.tolerances or {}
    return solve_scf(
        sys,
        max_iter=int(scf.get("max_iter", 2000)),
        tol_residual=tol.get("tol_residual"),
        tol_cluster=tol.get("tol_cluster"),
        symmetrizer=symmetrizer_for(cfg, sys),
    )


def versions():
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def with_overrides(cfg: ExperimentConfig, order=None, mode=None, seed=None, out=None):
    cfg = copy.deepcopy(cfg)
    if order is not None:
        cfg.order = int(order)
    if mode is not None:
        cfg.mode = mode
    if seed is not None:
        cfg.perturbation = {k: v for k, v in cfg.perturbation.items() if k != "vector"}
        cfg.perturbation["seed"] = int(seed)
    if out is not None:
        cfg.output = out
    validate_config(cfg)
    return cfg


# --------------------------------------------------------------------------
# finite-difference oracle


def fd_oracle(sys, gs, w, step=1e-3, order=2, workers=1):
    """Central-difference estimates of ``dE/dbeta`` and ``1/2 d^2E/dbeta^2`` at 0.

    ``E(beta)`` is the SCF ground-state energy in ``beta * w``.  Two step
    sizes ``h`` and ``h/2`` are combined by Richardson extrapolation; the
    error estimate is the change produced by the extrapolation.  Returns a
    dict with ``d1``, ``d1_err`` and (order 2) ``d2``, ``d2_err``.
    """
    if order not in (1, 2):
        raise InputError("derivative order must be 1 or 2", "cli.fd_oracle")
    w = check_potential(sys, w)
    out = {"d1": 0.0, "d1_err": 0.0}
    if order == 2:
        out.update({"d2": 0.0, "d2_err": 0.0})
    if not np.any(w):
        return out
    wn = sys.dual_norm(w)
    if not (1e-6 <= step * wn <= 1e-2):
        raise PreconditionError("step out of range [1e-6, 1e-2] / |w|", "cli.fd_oracle", step=step, w_norm=wn)
    structure = (gs.n_full, gs.n_partial) if classify(gs) == DEGENERATE else None
    betas = [step, -step, step / 2, -step / 2]

    def dE(beta):
        g = solve_scf(sys, w=beta * w, gamma_init=gs.gamma0, structure=structure)
        return energy_change(gs, g.gamma0, beta * w)

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = dict(zip(betas, ex.map(dE, betas)))
    else:
        vals = {b: dE(b) for b in betas}
    h = step
    d1_h = (vals[h] - vals[-h]) / (2 * h)
    d1_h2 = (vals[h / 2] - vals[-h / 2]) / h
    d1 = (4 * d1_h2 - d1_h) / 3
    out["d1"], out["d1_err"] = float(d1), float(abs(d1 - d1_h2))
    if order == 2:
        d2_h = (vals[h] + vals[-h]) / (2 * h * h)
        d2_h2 = (vals[h / 2] + vals[-h / 2]) / (2 * (h / 2) ** 2)
        d2 = (4 * d2_h2 - d2_h) / 3
        out["d2"], out["d2_err"] = float(d2), float(abs(d2 - d2_h2))
    return out


def mode_for(gs):
    kind = classify(gs)
    return {NONDEGENERATE: "nondeg", DEGENERATE: "deg"}.get(kind, kind)
