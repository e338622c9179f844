"""Checks of the (2n+1) rule and of the projector identities behind it.

Energy differences are evaluated through the exact quadratic expansion of
the functional around the reference minimizer,

    E(g) - E(g_ref) = Tr(H_ref (g - g_ref)) + 1/2 D(rho_g - rho_ref, rho_g - rho_ref),

which avoids cancelling two large totals and lowers the noise floor of the
slope fits by one to two decades.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, ConvergenceError, DomainError, PreconditionError, RHFError
from .ground_state import DEGENERATE, NONDEGENERATE, classify, solve_scf
from .model import density_of, mean_field


@dataclass
class SlopeReport:
    beta_grid: np.ndarray
    errors: np.ndarray
    fitted_slope: float
    expected_slope: float
    passed: bool
    used: np.ndarray
    slope_tol: float = 0.35
    extra: dict = field(default_factory=dict)

    def rows(self):
        return [(float(b), float(e), bool(u)) for b, e, u in zip(self.beta_grid, self.errors, self.used)]


def pi_project(t, n_electrons=None, tau_half=1e-8):
    """Orthogonal projector onto the eigenvectors of ``t`` with eigenvalue >= 1/2."""
    t = np.asarray(t, dtype=float)
    t = 0.5 * (t + t.T)
    lam, V = np.linalg.eigh(t)
    if np.any(np.abs(lam - 0.5) <= tau_half):
        raise DomainError("eigenvalue at 1/2: nearest projector is not unique", "wigner.pi_project", eigenvalues=lam)
    keep = lam > 0.5
    if n_electrons is not None and int(keep.sum()) != n_electrons:
        raise DomainError(
            "matrix is not within distance 1/2 of the rank-N projectors",
            "wigner.pi_project",
            rank=int(keep.sum()),
            expected=n_electrons,
        )
    P = V[:, keep] @ V[:, keep].T
    return 0.5 * (P + P.T)


def energy_above(sys, gamma, gamma_ref, w=None):
    """``E(gamma, w) - E(gamma_ref, w)`` from the exact quadratic expansion around ``gamma_ref``."""
    h_ref = mean_field(sys, density_of(gamma_ref), w)
    d = np.asarray(gamma) - gamma_ref
    drho = density_of(d)
    return float(np.sum(h_ref * d) + 0.5 * drho @ sys.kernel @ drho)


def energy_change(gs, gamma, w):
    """``E(gamma, w) - E(gamma0, 0)`` without forming either total."""
    sys = gs.system
    d = np.asarray(gamma) - gs.gamma0
    drho = density_of(d)
    return float(np.sum(gs.h0 * d) + 0.5 * drho @ sys.kernel @ drho + w @ density_of(gamma))


def fit_slope(betas, errors, floor, discard_largest=True, min_points=3):
    """Least-squares slope of ``log(error)`` vs ``log(beta)`` above the noise floor.

    Returns ``(slope, used_mask)``; the slope is NaN if fewer than
    ``min_points`` survive.
    """
    betas = np.asarray(betas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    used = errors > floor
    if discard_largest:
        used &= betas < betas.max()
    if used.sum() < min_points:
        return float("nan"), used
    slope = np.polyfit(np.log(betas[used]), np.log(errors[used]), 1)[0]
    return float(slope), used


def _check_grid(beta_grid):
    b = np.asarray(beta_grid, dtype=float)
    if b.ndim != 1 or len(b) < 2 or np.any(b <= 0) or np.any(np.diff(b) >= 0):
        raise PreconditionError("beta grid must be strictly decreasing and positive", "wigner.check_grid")
    return b


def reference_states(gs, w, beta_grid, structure=None, guesses=None, workers=1, skip_failures=False, **scf_opts):
    """Fully converged ground states in ``beta * w`` for every beta on the grid.

    With ``skip_failures`` a point whose SCF fails yields ``None`` instead
    of raising.
    """
    sys = gs.system

    def one(i):
        beta = beta_grid[i]
        init = None if guesses is None else guesses[i]
        try:
            return solve_scf(sys, w=beta * np.asarray(w), gamma_init=init, structure=structure, **scf_opts)
        except ConvergenceError:
            if skip_failures:
                return None
            raise
        except RHFError as exc:
            exc.diagnostics["beta"] = float(beta)
            raise

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, range(len(beta_grid))))
    return [one(i) for i in range(len(beta_grid))]


def default_floor(refs):
    """Noise floor: 100 x the worst SCF certificate, at least 1e-14 relative to the energy scale."""
    res = max(r.residual for r in refs)
    scale = max(max(abs(r.energy) for r in refs), 1.0)
    return 100 * max(res, 1e-16 * scale)


def wigner_check_nondeg(gs, series, n, beta_grid, refs=None, slope_tol=0.35, floor=None, workers=1):
    """Energy error of ``Pi(gamma0 + sum_{k<=n} beta^k gamma^(k))``; expected slope ``2n + 2``."""
    if classify(gs) != NONDEGENERATE:
        raise PreconditionError("Wigner check needs a non-degenerate ground state", "wigner.wigner_check_nondeg")
    if n > series.order:
        raise PreconditionError("series too short", "wigner.wigner_check_nondeg", order=series.order, n=n)
    betas = _check_grid(beta_grid)
    N = gs.system.n_electrons
    trials = [pi_project(series.gamma_sum(b, n), N) for b in betas]
    if refs is None:
        refs = reference_states(gs, series.w, betas, guesses=trials, workers=workers)
    errors = np.array([energy_above(gs.system, t, r.gamma0, b * series.w) for t, r, b in zip(trials, refs, betas)])
    floor = default_floor(refs) if floor is None else floor
    slope, used = fit_slope(betas, errors, floor)
    expected = 2 * n + 2
    passed = bool(np.isfinite(slope) and abs(slope - expected) <= slope_tol and errors.min() >= -1e-12)
    return SlopeReport(betas, errors, slope, expected, passed, used, slope_tol, {"floor": floor})


def wigner_check_deg(gs, series, n, beta_grid, refs=None, slope_tol=0.35, floor=None, workers=1):
    """Energy error of ``Gamma(sum_{k<=n} beta^k A^(k))`` and of the energy series to order ``2n + 1``."""
    from .deg_pt import gamma_of

    if classify(gs) != DEGENERATE:
        raise PreconditionError("Wigner check needs a degenerate ground state", "wigner.wigner_check_deg")
    if n > series.order:
        raise PreconditionError("series too short", "wigner.wigner_check_deg", order=series.order, n=n)
    betas = _check_grid(beta_grid)
    frame = series.frame
    trials, kept = [], []
    for b in betas:
        try:
            trials.append(gamma_of(frame, series.a_sum(b, n)))
            kept.append(b)
        except DomainError:
            warnings.warn(f"beta={b:g} leaves the occupancy box; dropped", RuntimeWarning)
    betas = np.array(kept)
    if refs is None:
        refs = reference_states(
            gs, series.w, betas, structure=(gs.n_full, gs.n_partial), guesses=trials, workers=workers, skip_failures=True
        )
    elif len(refs) != len(betas):
        refs = [r for r, b in zip(refs, beta_grid) if b in kept]
    # far from 0 the minimizer may change occupation structure; such points
    # lie outside the perturbative regime and are dropped
    ok = [r is not None for r in refs]
    for b, good in zip(betas, ok):
        if not good:
            warnings.warn(f"beta={b:g}: no minimizer with the unperturbed structure; dropped", RuntimeWarning)
    betas = betas[ok]
    trials = [t for t, good in zip(trials, ok) if good]
    refs = [r for r in refs if r is not None]
    if len(betas) < 4:
        raise PreconditionError("fewer than 4 usable beta points", "wigner.wigner_check_deg", usable=len(betas))
    errors = np.array([energy_above(gs.system, t, r.gamma0, b * series.w) for t, r, b in zip(trials, refs, betas)])
    floor = default_floor(refs) if floor is None else floor
    slope, used = fit_slope(betas, errors, floor)
    expected = 2 * n + 2
    # first formulation: the energy coefficients up to order 2n + 1
    series_err = np.array(
        [
            abs(series.energy_sum(b, 2 * n + 1) - series.energy_k[0] - energy_change(gs, r.gamma0, b * series.w))
            for r, b in zip(refs, betas)
        ]
    )
    s_slope, s_used = fit_slope(betas, series_err, floor)
    passed = bool(
        np.isfinite(slope)
        and abs(slope - expected) <= slope_tol
        and errors.min() >= -1e-12
        and np.isfinite(s_slope)
        and abs(s_slope - expected) <= slope_tol
    )
    extra = {"floor": floor, "series_errors": series_err, "series_slope": s_slope, "series_used": s_used}
    return SlopeReport(betas, errors, slope, expected, passed, used, slope_tol, extra)


def trace_identity_check(h, eps_f, gamma_prime, tol_trace=1e-9):
    """``|Tr(h Q) - Tr(|h - eps_F| Q^2)|`` with ``Q = gamma' - 1(h < eps_F)``.

    Returns ``(residual, Tr(h Q))``; raises if ``Tr(h Q)`` is negative
    beyond rounding.
    """
    h = np.asarray(h, dtype=float)
    lam, V = np.linalg.eigh(h)
    if np.min(np.abs(lam - eps_f)) <= 1e-12 * max(1.0, np.abs(lam).max()):
        raise PreconditionError("Fermi level is an eigenvalue", "wigner.trace_identity_check")
    gamma = V[:, lam < eps_f] @ V[:, lam < eps_f].T
    gp = np.asarray(gamma_prime, dtype=float)
    if abs(np.trace(gp) - np.trace(gamma)) > tol_trace:
        raise PreconditionError(
            "trace of gamma' differs from the number of levels below eps_F",
            "wigner.trace_identity_check",
            trace=np.trace(gp),
            expected=np.trace(gamma),
        )
    Q = gp - gamma
    absh = (V * np.abs(lam - eps_f)) @ V.T
    lhs = float(np.sum(h * Q))
    rhs = float(np.sum(absh * (Q @ Q)))
    if lhs < -1e-12 * max(1.0, np.abs(h).max()):
        raise ConsistencyError("Tr(hQ) is negative", "wigner.trace_identity_check", value=lhs)
    return abs(lhs - rhs), lhs
