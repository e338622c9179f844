"""Command-line front end: ``rhfpt <verb> --config PATH [options]``.

Every run writes ``manifest.json`` (config echo, versions, tolerances),
its result tables as CSV, and ``summary.txt`` with one ``CHECK`` line per
check.  The exit status is 0 iff every check passes, 1 if a check fails
and 2 on an error, in which case ``error.json`` holds the error record.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys
import warnings

import numpy as np

from .errors import InputError, RHFError
from .experiments import (
    MODES,
    build_perturbation,
    build_system,
    fd_oracle,
    ground_state_for,
    load_config,
    mode_for,
    versions,
    with_overrides,
)
from .ground_state import certificate, classify, save_ground_state
from .validation import Check, _ge, _le, _slope

VERBS = ("ground-state", "expand", "wigner", "validate", "fd-check")


class Writer:
    """Collects tables and checks; all files are written from here."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.checks = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def table(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([_fmt(x) for x in r])

    def json(self, name, data):
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)

    def add(self, checks):
        self.checks.extend(checks)

    def summary(self):
        lines = [c.line() for c in self.checks]
        with open(self.path("summary.txt"), "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        return lines


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# --------------------------------------------------------------------------
# verbs


def _ground_state(cfg, out, workers):
    sys = build_system(cfg)
    gs = ground_state_for(cfg, sys)
    save_ground_state(gs, out.path("ground_state"))
    out.table(
        "eigenvalues.csv",
        ["index", "eigenvalue", "occupation"],
        [(i, e, o) for i, (e, o) in enumerate(zip(gs.eigvals, np.diag(gs.eigvecs.T @ gs.gamma0 @ gs.eigvecs)))],
    )
    scale = max(1.0, float(np.abs(gs.h0).max()))
    out.add(
        [
            _le("scf_certificate", certificate(sys, gs.gamma0) / scale, 1e-10),
            _le("scf_trace", abs(np.trace(gs.gamma0) - sys.n_electrons), 1e-9),
        ]
    )
    return sys, gs


def _expand(cfg, out, workers, sys=None, gs=None):
    from .deg_pt import expand_degenerate, naive_energy
    from .mo_pt import mo_expand, orthogonality_defects
    from .nondeg_pt import expand, hellmann_feynman_defects

    if gs is None:
        sys, gs = _ground_state(cfg, out, workers)
    w = build_perturbation(cfg, sys)
    n = max(cfg.order, 1)
    mode = cfg.mode if cfg.mode in ("nondeg", "deg", "mo") else mode_for(gs)
    if mode == "nondeg":
        series = expand(gs, w, n)
        out.add([_le("hellmann_feynman", max(hellmann_feynman_defects(series)), 1e-9)])
        energies = series.energy_k
    elif mode == "deg":
        series = expand_degenerate(gs, w, n)
        gap = max(abs(series.energy_k[k] - naive_energy(series, k)) for k in range(1, n + 1))
        out.add([_le("energy_formulations", gap, 1e-9)])
        energies = series.energy_k
    elif mode == "mo":
        series = mo_expand(gs, w, n)
        out.add([_le("orthogonality", max(orthogonality_defects(series)), 1e-9)])
        out.table("eps_k.csv", ["order"] + [f"eps_{i}" for i in range(sys.n_electrons)], [[k, *e] for k, e in enumerate(series.eps_k)])
        gam = [series.gamma_k(k) for k in range(n + 1)]
        series.rho_k = [np.diag(g).copy() for g in gam]
        series.gamma_k_list = gam
        energies = None
    else:
        raise InputError(f"expand cannot run in mode {mode!r}", "cli.run")
    gammas = series.gamma_k_list if mode == "mo" else series.gamma_k
    out.add([_le("trace_gamma_k", max(abs(np.trace(g)) for g in gammas[1:]), 1e-10)])
    out.table("rho_k.csv", ["site"] + [f"rho_{k}" for k in range(n + 1)], [[i, *r] for i, r in enumerate(np.array(series.rho_k).T)])
    for k in range(1, n + 1):
        out.table(f"gamma_{k}.csv", [f"c{j}" for j in range(sys.n_sites)], gammas[k])
    if energies is not None:
        out.table("energy_k.csv", ["order", "energy"], list(enumerate(energies)))
    return sys, gs, w, series, mode


def _wigner(cfg, out, workers):
    from .deg_pt import expand_degenerate
    from .nondeg_pt import expand
    from .wigner import wigner_check_deg, wigner_check_nondeg

    sys, gs = _ground_state(cfg, out, workers)
    w = build_perturbation(cfg, sys)
    n = cfg.order
    tol = float((cfg.tolerances or {}).get("slope_tol", 0.35))
    mode = mode_for(gs)
    if mode == "nondeg":
        series = expand(gs, w, max(n, 1))
        rep = wigner_check_nondeg(gs, series, n, cfg.beta_grid, slope_tol=tol, workers=workers)
    elif mode == "deg":
        if n < 1:
            raise InputError("the degenerate check needs order >= 1", "cli.run")
        series = expand_degenerate(gs, w, n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = wigner_check_deg(gs, series, n, cfg.beta_grid, slope_tol=tol, workers=workers)
    else:
        raise InputError(f"no Wigner check for a {mode} ground state", "cli.run", classification=mode)
    rows = [(b, e, u) for b, e, u in rep.rows()]
    header = ["beta", "error", "used"]
    if "series_errors" in rep.extra:
        header.append("series_error")
        rows = [r + (s,) for r, s in zip(rows, rep.extra["series_errors"])]
    out.table(f"slope_report_n{n}.csv", header, rows)
    out.add(
        [
            _slope(f"wigner_slope_n{n}", rep.fitted_slope, rep.expected_slope, tol),
            _ge(f"wigner_min_difference_n{n}", rep.errors.min(), -1e-12),
        ]
    )
    if "series_slope" in rep.extra:
        out.add([_slope(f"energy_series_slope_n{n}", rep.extra["series_slope"], rep.expected_slope, tol)])


def _fd_check(cfg, out, workers):
    from .deg_pt import expand_degenerate
    from .nondeg_pt import expand

    sys, gs = _ground_state(cfg, out, workers)
    w = build_perturbation(cfg, sys)
    series = expand(gs, w, 2) if mode_for(gs) == "nondeg" else expand_degenerate(gs, w, 2)
    fd = fd_oracle(sys, gs, w, step=cfg.fd_step, order=2, workers=workers)
    e1, e2 = series.energy_k[1], series.energy_k[2]
    out.table(
        "fd_check.csv",
        ["order", "series", "finite_difference", "fd_error_estimate"],
        [(1, e1, fd["d1"], fd["d1_err"]), (2, e2, fd["d2"], fd["d2_err"])],
    )
    out.add(
        [
            _le("fd_first_order", abs(e1 - fd["d1"]) / max(abs(e1), 1e-300), 1e-6),
            _le("fd_second_order", abs(e2 - fd["d2"]) / max(abs(e2), 1e-300), 1e-5),
        ]
    )


def _validate(cfg, out, workers):
    from .validation import run_all

    rows = []
    for i, checks, dt in run_all(workers=workers):
        out.add(checks)
        rows.append((i, all(c.passed for c in checks), dt))
    out.table("criteria.csv", ["criterion", "passed", "seconds"], rows)


def run(cfg, verb, workers=1):
    """Execute ``verb`` for ``cfg``; returns ``(exit_code, summary_lines)``."""
    os.makedirs(cfg.output, exist_ok=True)
    out = Writer(cfg.output)
    out.json(
        "manifest.json",
        {
            "verb": verb,
            "config": cfg.to_dict(),
            "versions": versions(),
            "tolerances": cfg.tolerances or {},
            "workers": workers,
        },
    )
    handlers = {
        "ground-state": _ground_state,
        "expand": _expand,
        "wigner": _wigner,
        "fd-check": _fd_check,
        "validate": _validate,
    }
    handlers[verb](cfg, out, workers)
    lines = out.summary()
    return (0 if all(c.passed for c in out.checks) else 1), lines


def build_parser():
    p = argparse.ArgumentParser(prog="rhfpt", description="Perturbation theory for lattice rHF ground states.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="seed of the random perturbation")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        cfg = with_overrides(load_config(args.config), order=args.order, mode=args.mode, seed=args.seed, out=args.out)
        out_dir = cfg.output
        if args.workers < 1:
            raise InputError("--workers must be >= 1", "cli.main")
        code, lines = run(cfg, args.verb, workers=args.workers)
    except RHFError as exc:
        record = exc.record()
        print(json.dumps(record, sort_keys=True), file=_sys.stderr)
        if out_dir:
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "error.json"), "w") as fh:
                    json.dump(record, fh, indent=2, sort_keys=True)
            except OSError:
                pass
        return 2
    for line in lines:
        print(line)
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
