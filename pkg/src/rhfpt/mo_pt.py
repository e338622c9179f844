"""Orbital (coupled-perturbed) formulation of the non-degenerate expansion.

Each occupied orbital is expanded as ``phi_i(beta) = sum beta^k phi_i^(k)``
together with its eigenvalue.  Order k requires the solution of a linear
system coupling all occupied orbitals through the Hartree kernel,

    (H0 - eps_i) psi_i + sum_j K0_ij psi_j - eta_i phi_i = f_i,
    phi_i . psi_i = alpha_i,

with ``K0_ij psi = 2 phi_i * K (phi_j * psi)`` (site-wise products).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConsistencyError, InputError, PreconditionError
from .ground_state import NONDEGENERATE, GroundState, classify, default_tol_cluster
from .model import check_potential


@dataclass
class MOSeries:
    """Orbital and eigenvalue coefficients; ``phi_k[k]`` is ``N x n`` (rows are orbitals)."""

    order: int
    w: np.ndarray
    phi_k: list
    eps_k: list

    def gamma_k(self, k):
        return sum(self.phi_k[l].T @ self.phi_k[k - l] for l in range(k + 1))


def _check_simple(gs, op):
    kind = classify(gs)
    if kind != NONDEGENERATE:
        raise PreconditionError(f"ground state is {kind}, expected {NONDEGENERATE}", op, classification=kind)
    N = gs.system.n_electrons
    e = gs.eigvals[:N]
    if N > 1 and np.diff(e).min() <= default_tol_cluster(gs.system):
        raise PreconditionError("occupied eigenvalues are not simple", op, min_spacing=np.diff(e).min())


def _saddle_matrix(gs):
    sys = gs.system
    n, N = sys.n_sites, sys.n_electrons
    phi = gs.eigvecs[:, :N]
    K = sys.kernel
    dim = n * N + N
    A = np.zeros((dim, dim))
    for i in range(N):
        bi = slice(i * n, (i + 1) * n)
        A[bi, bi] = gs.h0 - gs.eigvals[i] * np.eye(n)
        for j in range(N):
            bj = slice(j * n, (j + 1) * n)
            A[bi, bj] += 2.0 * (phi[:, i][:, None] * K * phi[:, j][None, :])
        A[bi, n * N + i] = -phi[:, i]
        A[n * N + i, bi] = -phi[:, i]
    return A


def solve_cp_system(gs: GroundState, f, alpha, order=None):
    """Unique solution ``(Psi, eta)`` of the coupled system; ``f`` is ``N x n``.

    ``order`` permutes the orbitals in the assembled matrix (the solution
    does not depend on it).
    """
    _check_simple(gs, "mo_pt.solve_cp_system")
    sys = gs.system
    n, N = sys.n_sites, sys.n_electrons
    f = np.asarray(f, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if f.shape != (N, n) or alpha.shape != (N,):
        raise InputError("right-hand side has the wrong shape", "mo_pt.solve_cp_system", f_shape=f.shape)
    perm = np.arange(N) if order is None else np.asarray(order)
    A = _saddle_matrix(gs)
    idx = np.concatenate([np.arange(i * n, (i + 1) * n) for i in perm] + [n * N + perm])
    A = A[np.ix_(idx, idx)]
    rhs = np.concatenate([f[perm].ravel(), -alpha[perm]])
    try:
        x = linalg.solve(A, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise ConsistencyError("coupled-perturbed system is singular", "mo_pt.solve_cp_system") from exc
    sol = np.empty_like(x)
    sol[idx] = x
    Psi = sol[: n * N].reshape(N, n)
    eta = sol[n * N :]
    res = A @ x - rhs
    if np.abs(res).max() > 1e-8 * max(1.0, np.abs(rhs).max()):
        raise ConsistencyError("coupled-perturbed solve is inaccurate", "mo_pt.solve_cp_system", residual=np.abs(res).max())
    return Psi, eta


def cp_residual(gs, Psi, eta, f, alpha):
    """Largest residual of the coupled system and of the constraints."""
    A = _saddle_matrix(gs)
    n, N = gs.system.n_sites, gs.system.n_electrons
    x = np.concatenate([np.asarray(Psi).ravel(), eta])
    rhs = np.concatenate([np.asarray(f).ravel(), -np.asarray(alpha)])
    return float(np.abs(A @ x - rhs).max())


def mo_expand(gs: GroundState, w, n: int) -> MOSeries:
    _check_simple(gs, "mo_pt.mo_expand")
    if n < 1:
        raise InputError("order must be >= 1", "mo_pt.mo_expand")
    sys = gs.system
    w = check_potential(sys, w)
    N = sys.n_electrons
    K = sys.kernel
    phi = [gs.eigvecs[:, :N].T.copy()]
    eps = [gs.eigvals[:N].copy()]
    for k in range(1, n + 1):
        f = -w[None, :] * phi[k - 1]
        # Hartree coupling between lower orders: l1 + l2 + l3 = k, all < k
        for l3 in range(0, k):
            for l1 in range(0, k - l3 + 1):
                l2 = k - l3 - l1
                if l1 >= k or l2 >= k:
                    continue
                pot = K @ np.sum(phi[l1] * phi[l2], axis=0)
                f -= pot[None, :] * phi[l3]
        for l in range(1, k):
            f += eps[l][:, None] * phi[k - l]
        alpha = -0.5 * sum(np.sum(phi[l] * phi[k - l], axis=1) for l in range(1, k)) if k > 1 else np.zeros(N)
        Psi, eta = solve_cp_system(gs, f, alpha)
        phi.append(Psi)
        eps.append(eta)
    return MOSeries(order=n, w=w, phi_k=phi, eps_k=eps)


def orthogonality_defects(ms: MOSeries):
    """Per order k: ``max_ij |sum_l phi_i^(l) . phi_j^(k-l) - delta_ij delta_k0|``."""
    out = []
    for k in range(ms.order + 1):
        G = sum(ms.phi_k[l] @ ms.phi_k[k - l].T for l in range(k + 1))
        if k == 0:
            G = G - np.eye(G.shape[0])
        out.append(float(np.abs(G).max()))
    return out
