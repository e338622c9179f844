"""Density-matrix perturbation theory when the Fermi level lies in a gap.

The k-th order response of the spectral projector is the contour integral

    Q^(k)(v1, ..., vk) = 1/(2 pi i) \\oint R(z) v1 R(z) v2 ... vk R(z) dz,
    R(z) = (z - H0)^-1,

over a circle enclosing the occupied levels.  Everything is done in the
eigenbasis of H0, where the resolvent is diagonal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import AccuracyError, InputError, LinearSolverError, PreconditionError
from .ground_state import NONDEGENERATE, GroundState, classify
from .model import check_potential, density_of


@dataclass(frozen=True)
class ContourSpec:
    center: float
    radius: float
    n_quad: int = 64


def default_contour(gs: GroundState, n_quad=64) -> ContourSpec:
    """Circle crossing the real axis at ``eps_1 - 1`` and at the Fermi level."""
    left = gs.eigvals[0] - 1.0
    right = gs.fermi_level
    return ContourSpec(0.5 * (left + right), 0.5 * (right - left), n_quad)


def _require_nondegenerate(gs, op):
    kind = classify(gs)
    if kind != NONDEGENERATE:
        raise PreconditionError(f"ground state is {kind}, expected {NONDEGENERATE}", op, classification=kind)


def _check_contour(gs, c: ContourSpec):
    dist = np.abs(np.abs(gs.eigvals - c.center) - c.radius)
    inside = np.abs(gs.eigvals - c.center) < c.radius
    n_in = int(inside.sum())
    if dist.min() <= 1e-12 * max(1.0, c.radius) or n_in != gs.system.n_electrons:
        raise PreconditionError(
            "contour must enclose exactly the N occupied levels",
            "nondeg_pt.contour_q",
            enclosed=n_in,
            min_distance=dist.min(),
        )


def _partial_sum(eps, mats, c, idx, n_total, chunk=64):
    """Unnormalized trapezoid sum over the points ``idx`` of an ``n_total``-point grid."""
    n = len(eps)
    acc = np.zeros((n, n), dtype=complex)
    for s in range(0, len(idx), chunk):
        theta = 2 * np.pi * idx[s : s + chunk] / n_total
        dz = c.radius * np.exp(1j * theta)
        z = c.center + dz
        R = 1.0 / (z[:, None] - eps[None, :])
        X = R[:, :, None] * mats[0][None, :, :]
        for m in mats[1:]:
            X = (X * R[:, None, :]) @ m
        X = X * R[:, None, :]
        acc += np.tensordot(dz, X, axes=(0, 0))
    return acc


def contour_q_eigbasis(eps, mats, c: ContourSpec, tol_q=1e-13, max_quad=1 << 14):
    """Contour integral in the eigenbasis; ``mats`` are the perturbations in that basis.

    The number of trapezoid points starts at ``c.n_quad`` and doubles until
    the result changes by less than ``tol_q`` (relative to its size).
    Returns ``(matrix, n_quad_used)``.
    """
    M = c.n_quad
    total = _partial_sum(eps, mats, c, np.arange(M), M)
    prev = np.real(total) / M
    while True:
        if 2 * M > max_quad:
            raise AccuracyError("contour quadrature did not converge", "nondeg_pt.contour_q", n_quad=M)
        # the new points are the odd ones of the doubled grid
        total = total + _partial_sum(eps, mats, c, np.arange(1, 2 * M, 2), 2 * M)
        M *= 2
        cur = np.real(total) / M
        change = np.abs(cur - prev).max()
        if change <= tol_q * max(1.0, np.abs(cur).max()):
            return cur, M
        prev = cur


def contour_q(gs: GroundState, vs, c: ContourSpec | None = None, tol_q=1e-13) -> np.ndarray:
    """k-linear operator ``Q^(k)(v1, ..., vk)`` for site potentials ``vs``."""
    _require_nondegenerate(gs, "nondeg_pt.contour_q")
    if len(vs) == 0:
        raise InputError("contour_q needs at least one potential", "nondeg_pt.contour_q")
    c = default_contour(gs) if c is None else c
    _check_contour(gs, c)
    U = gs.eigvecs
    mats = [U.T @ (check_potential(gs.system, v)[:, None] * U) for v in vs]
    q, _ = contour_q_eigbasis(gs.eigvals, mats, c, tol_q)
    out = U @ q @ U.T
    return 0.5 * (out + out.T) if len(vs) == 1 else out


# --------------------------------------------------------------------------
# divided-difference oracle (k <= 2)


def _step_dd1(a, b, fa, fb):
    if fa == fb:
        return 0.0
    return (fa - fb) / (a - b)


def _step_dd2(vals, occ):
    """Second divided difference of the occupation step at three points."""
    (a, fa), (b, fb), (c, fc) = zip(vals, occ)
    if fa == fb == fc:
        return 0.0
    pts = [(a, fa), (b, fb), (c, fc)]
    # put two points from different sides at the ends so that they differ
    for i, j in ((0, 2), (0, 1), (1, 2)):
        if pts[i][1] != pts[j][1]:
            mid = pts[3 - i - j]
            x, y = pts[i], pts[j]
            return (_step_dd1(x[0], mid[0], x[1], mid[1]) - _step_dd1(mid[0], y[0], mid[1], y[1])) / (x[0] - y[0])
    return 0.0  # pragma: no cover


def divided_difference_q(h0, n_electrons, vs, eps_f=None):
    """Eigenbasis formula for the first and second derivatives of the spectral projector."""
    eps, U = np.linalg.eigh(h0)
    occ = (np.arange(len(eps)) < n_electrons).astype(float)
    mats = [U.T @ (np.asarray(v, dtype=float)[:, None] * U) for v in vs]
    n = len(eps)
    if len(vs) == 1:
        F = np.array([[_step_dd1(eps[i], eps[j], occ[i], occ[j]) for j in range(n)] for i in range(n)])
        q = mats[0] * F
    elif len(vs) == 2:
        F = np.empty((n, n, n))
        for i, j, l in itertools.product(range(n), repeat=3):
            F[i, j, l] = _step_dd2((eps[i], eps[j], eps[l]), (occ[i], occ[j], occ[l]))
        q = np.einsum("ij,jl,ijl->il", mats[0], mats[1], F)
    else:
        raise InputError("divided-difference oracle implemented for k <= 2", "nondeg_pt.divided_difference_q")
    return U @ q @ U.T


# --------------------------------------------------------------------------
# response operator and screened solve


def apply_response_L(gs: GroundState, rho, c=None) -> np.ndarray:
    """``L rho = -rho[Q^(1)(K rho)]``."""
    rho = np.asarray(rho, dtype=float)
    if not np.any(rho):
        return np.zeros_like(rho)
    return -density_of(contour_q(gs, [gs.system.kernel @ rho], c))


def response_matrix(gs: GroundState, c=None) -> np.ndarray:
    n = gs.system.n_sites
    return np.column_stack([apply_response_L(gs, e, c) for e in np.eye(n)])


@dataclass
class SolveInfo:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    method: str = "cg"


def solve_screened(gs: GroundState, rhs, tol_lin=1e-11, max_iter=None, c=None, return_info=False):
    """Solve ``(1 + L) rho = rhs`` by conjugate gradients in the Coulomb inner product.

    Falls back to a dense solve (``n <= 256``) if CG stagnates.
    """
    rhs = np.asarray(rhs, dtype=float)
    K = gs.system.kernel
    n = len(rhs)
    info = SolveInfo()
    ip = lambda a, b: float(a @ K @ b)
    bnorm = np.sqrt(max(ip(rhs, rhs), 0.0))
    if bnorm == 0.0:
        out = np.zeros(n)
        return (out, info) if return_info else out
    op = lambda x: x + apply_response_L(gs, x, c)
    max_iter = 2 * n if max_iter is None else max_iter
    x = np.zeros(n)
    r = rhs.copy()
    p = r.copy()
    rr = ip(r, r)
    info.residuals.append(np.sqrt(rr) / bnorm)
    converged = False
    for it in range(1, max_iter + 1):
        Ap = op(p)
        pAp = ip(p, Ap)
        if pAp <= 0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = ip(r, r)
        info.iterations = it
        info.residuals.append(np.sqrt(max(rr_new, 0.0)) / bnorm)
        if info.residuals[-1] <= tol_lin:
            converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    if converged:
        # confirm against the true residual, not the recurrence
        true_res = rhs - op(x)
        if np.sqrt(max(ip(true_res, true_res), 0.0)) <= 10 * tol_lin * bnorm:
            return (x, info) if return_info else x
    if n <= 256:
        A = np.eye(n) + response_matrix(gs, c)
        x = np.linalg.solve(A, rhs)
        info.method = "dense"
        res = rhs - A @ x
        info.residuals.append(np.sqrt(max(ip(res, res), 0.0)) / bnorm)
        return (x, info) if return_info else x
    raise LinearSolverError(
        "conjugate gradients stagnated",
        "nondeg_pt.solve_screened",
        residual_history=info.residuals,
    )


# --------------------------------------------------------------------------
# the perturbation series


def compositions(k, parts):
    """Ordered tuples of ``parts`` positive integers summing to ``k``."""
    for cuts in itertools.combinations(range(1, k), parts - 1):
        bounds = (0,) + cuts + (k,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


@dataclass
class NondegSeries:
    """Coefficients of the expansion in ``beta`` of the ground state in ``beta * w``.

    All lists are indexed by the order; entry 0 holds the unperturbed
    quantities (``gamma0``, ``rho0``, the ground-state energy).
    """

    order: int
    w: np.ndarray
    rho_k: list
    gamma_k: list
    energy_k: list
    w_k: list
    q_tilde_k: list
    rho_tilde_k: list

    def gamma_sum(self, beta, n=None):
        n = self.order if n is None else n
        return sum(beta**k * self.gamma_k[k] for k in range(n + 1))

    def energy_sum(self, beta, n=None):
        n = self.order if n is None else n
        return sum(beta**k * self.energy_k[k] for k in range(n + 1))


def expand(gs: GroundState, w, n: int, n_max=6, c=None, tol_lin=1e-11) -> NondegSeries:
    """Rayleigh-Schrodinger coefficients of the density matrix, density and energy up to order ``n``."""
    _require_nondegenerate(gs, "nondeg_pt.expand")
    if n < 1:
        raise InputError("order must be >= 1", "nondeg_pt.expand")
    if n > n_max:
        raise InputError(f"order {n} exceeds the cap {n_max}", "nondeg_pt.expand", n_max=n_max)
    sys = gs.system
    w = check_potential(sys, w)
    K = sys.kernel
    size = sys.n_sites
    c = default_contour(gs) if c is None else c
    series = NondegSeries(
        order=n,
        w=w,
        rho_k=[gs.rho0],
        gamma_k=[gs.gamma0],
        energy_k=[gs.energy],
        w_k=[np.zeros(size)],
        q_tilde_k=[np.zeros((size, size))],
        rho_tilde_k=[np.zeros(size)],
    )
    if not np.any(w):
        for _ in range(n):
            series.rho_k.append(np.zeros(size))
            series.gamma_k.append(np.zeros((size, size)))
            series.energy_k.append(0.0)
            series.w_k.append(np.zeros(size))
            series.q_tilde_k.append(np.zeros((size, size)))
            series.rho_tilde_k.append(np.zeros(size))
        return series
    for k in range(1, n + 1):
        if k == 1:
            q_tilde = contour_q(gs, [w], c)
        else:
            q_tilde = np.zeros((size, size))
            for parts in range(2, k + 1):
                for comp in compositions(k, parts):
                    q_tilde = q_tilde + contour_q(gs, [series.w_k[j] for j in comp], c)
        rho_tilde = density_of(q_tilde)
        rho = solve_screened(gs, rho_tilde, tol_lin, c=c)
        wk = (w if k == 1 else 0.0) + K @ rho
        if k == 1:
            gamma = contour_q(gs, [wk], c)
        else:
            gamma = contour_q(gs, [K @ rho], c) + q_tilde
        series.q_tilde_k.append(q_tilde)
        series.rho_tilde_k.append(rho_tilde)
        series.rho_k.append(rho)
        series.w_k.append(wk)
        series.gamma_k.append(gamma)
        if k == 1:
            e = float(gs.rho0 @ w)
        else:
            e = float(np.sum(gs.h0 * gamma))
            e += 0.5 * sum(float(series.rho_k[l] @ K @ series.rho_k[k - l]) for l in range(1, k))
            e += float(w @ series.rho_k[k - 1])
        series.energy_k.append(e)
    return series


def hellmann_feynman_defects(series: NondegSeries):
    """``|E^(k) - w.rho^(k-1) / k|`` for k = 1..n; the energy is stationary so these vanish."""
    return [abs(series.energy_k[k] - float(series.w @ series.rho_k[k - 1]) / k) for k in range(1, series.order + 1)]
