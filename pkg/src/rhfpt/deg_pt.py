"""Perturbation theory when the Fermi level is a degenerate eigenvalue.

Density matrices near the ground state are parametrized by the exponential
chart

    Gamma(A) = e^{L_uo(A)} e^{L_pf(A)} (gamma0 + L_pp(A)) e^{-L_pf(A)} e^{-L_uo(A)},

with A = (A_uf, A_up, A_pf, A_pp) acting between the fully occupied (f),
partially occupied (p) and unoccupied (u) eigenspaces of H0.  The expansion
coefficients A^(k) solve ``Theta(A^(k)) = -B^(k) / 2`` order by order.

All matrices are handled in the eigenframe ``Phi = [basis_f, basis_p,
basis_u]`` of H0.  Dual objects (Theta(A), B^(k)) are paired with A through
the plain block trace ``sum_xy Tr(D_xy^T A_xy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import DomainError, InputError, PreconditionError, StructuralError
from .ground_state import DEGENERATE, GroundState, _traceless_basis, classify
from .model import check_potential, energy, mean_field
from .nondeg_pt import compositions


@dataclass
class BlockCoefficient:
    uf: np.ndarray
    up: np.ndarray
    pf: np.ndarray
    pp: np.ndarray

    def __add__(self, other):
        return BlockCoefficient(self.uf + other.uf, self.up + other.up, self.pf + other.pf, self.pp + other.pp)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, s):
        return BlockCoefficient(s * self.uf, s * self.up, s * self.pf, s * self.pp)

    __rmul__ = __mul__

    def pair(self, other):
        """Block trace pairing ``sum Tr(self_xy^T other_xy)``."""
        return float(
            np.sum(self.uf * other.uf) + np.sum(self.up * other.up) + np.sum(self.pf * other.pf) + np.sum(self.pp * other.pp)
        )

    def max_abs(self):
        return max([float(np.abs(b).max()) if b.size else 0.0 for b in (self.uf, self.up, self.pf, self.pp)])


def _traceless(m):
    k = m.shape[0]
    return m - np.trace(m) / k * np.eye(k) if k else m


@dataclass(frozen=True, eq=False)
class BlockFrame:
    """Eigenframe of a degenerate ground state, split into f, p and u blocks."""

    gs: GroundState
    basis: np.ndarray  # n x n, columns ordered f, p, u
    h: np.ndarray  # H0 in the frame
    lam: np.ndarray
    n_full: int
    n_partial: int
    n_unocc: int
    eps_f: float

    @property
    def system(self):
        return self.gs.system

    @property
    def sl_f(self):
        return slice(0, self.n_full)

    @property
    def sl_p(self):
        return slice(self.n_full, self.n_full + self.n_partial)

    @property
    def sl_u(self):
        return slice(self.n_full + self.n_partial, self.n_full + self.n_partial + self.n_unocc)

    @property
    def basis_f(self):
        return self.basis[:, self.sl_f]

    @property
    def basis_p(self):
        return self.basis[:, self.sl_p]

    @property
    def basis_u(self):
        return self.basis[:, self.sl_u]

    @property
    def h_minus(self):
        return self.h[self.sl_f, self.sl_f]

    @property
    def h_plus(self):
        return self.h[self.sl_u, self.sl_u]

    @cached_property
    def gamma0(self):
        n = self.basis.shape[0]
        g = np.zeros((n, n))
        g[self.sl_f, self.sl_f] = np.eye(self.n_full)
        g[self.sl_p, self.sl_p] = self.lam
        return g

    @cached_property
    def h_shift(self):
        return self.h - self.eps_f * np.eye(self.h.shape[0])

    @cached_property
    def pp_basis(self):
        return _traceless_basis(self.n_partial)

    @property
    def dim(self):
        nf, npart, nu = self.n_full, self.n_partial, self.n_unocc
        return nu * nf + nu * npart + npart * nf + len(self.pp_basis)

    # ---- coordinates ------------------------------------------------------

    def zero(self):
        nf, npart, nu = self.n_full, self.n_partial, self.n_unocc
        return BlockCoefficient(np.zeros((nu, nf)), np.zeros((nu, npart)), np.zeros((npart, nf)), np.zeros((npart, npart)))

    def to_vec(self, a: BlockCoefficient):
        pp = [np.sum(b * a.pp) for b in self.pp_basis]
        return np.concatenate([a.uf.ravel(), a.up.ravel(), a.pf.ravel(), np.array(pp)])

    def from_vec(self, x):
        nf, npart, nu = self.n_full, self.n_partial, self.n_unocc
        x = np.asarray(x, dtype=float)
        i0, i1, i2 = nu * nf, nu * nf + nu * npart, nu * nf + nu * npart + npart * nf
        pp = np.zeros((npart, npart))
        for c, b in zip(x[i2:], self.pp_basis):
            pp = pp + c * b
        return BlockCoefficient(x[:i0].reshape(nu, nf), x[i0:i1].reshape(nu, npart), x[i1:i2].reshape(npart, nf), pp)

    def norm_A(self, a: BlockCoefficient):
        """Norm of the parameter space, with the u-blocks weighted by ``H0++ - eps_F``."""
        hp = self.h_plus - self.eps_f * np.eye(self.n_unocc)
        val = np.sum(a.uf * (hp @ a.uf)) + np.sum(a.up * (hp @ a.up)) + np.sum(a.pf**2) + np.sum(a.pp**2)
        return float(np.sqrt(val))

    def random(self, rng, scale=1.0):
        a = self.from_vec(rng.standard_normal(self.dim))
        return scale * a

    # ---- lifts ------------------------------------------------------------

    def lift(self, a: BlockCoefficient):
        """``(L_uo, L_pf, L_pp)`` as frame matrices."""
        n = self.basis.shape[0]
        f, p, u = self.sl_f, self.sl_p, self.sl_u
        luo = np.zeros((n, n))
        luo[u, f] = a.uf
        luo[u, p] = a.up
        luo[f, u] = -a.uf.T
        luo[p, u] = -a.up.T
        lpf = np.zeros((n, n))
        lpf[p, f] = a.pf
        lpf[f, p] = -a.pf.T
        lpp = np.zeros((n, n))
        lpp[p, p] = a.pp
        return luo, lpf, lpp

    @cached_property
    def basis_lifts(self):
        """Lifts of the orthonormal coordinate basis, stacked along a leading axis."""
        lifts = [self.lift(self.from_vec(e)) for e in np.eye(self.dim)]
        return tuple(np.stack([l[j] for l in lifts]) for j in range(3))

    def blocks(self, m):
        """Split a frame matrix into the coefficient blocks (no symmetrization)."""
        f, p, u = self.sl_f, self.sl_p, self.sl_u
        return BlockCoefficient(m[u, f].copy(), m[u, p].copy(), m[p, f].copy(), m[p, p].copy())

    def to_sites(self, m):
        return self.basis @ m @ self.basis.T

    def to_frame(self, m):
        return self.basis.T @ m @ self.basis

    def density(self, m):
        """Site density of a frame matrix (works on stacks)."""
        return np.einsum("ia,...ab,ib->...i", self.basis, m, self.basis)

    def potential(self, v):
        return self.basis.T @ (np.asarray(v)[:, None] * self.basis)


def block_frame(gs: GroundState) -> BlockFrame:
    kind = classify(gs)
    if kind != DEGENERATE:
        raise PreconditionError(f"ground state is {kind}, expected {DEGENERATE}", "deg_pt.block_frame", classification=kind)
    basis = gs.eigvecs
    h = basis.T @ gs.h0 @ basis
    h = 0.5 * (h + h.T)
    return BlockFrame(
        gs=gs,
        basis=basis,
        h=h,
        lam=gs.lam,
        n_full=gs.n_full,
        n_partial=gs.n_partial,
        n_unocc=gs.n_unocc,
        eps_f=gs.fermi_level,
    )


# --------------------------------------------------------------------------
# chart and its multilinear expansion


def _check_box(frame, a, tau=1e-12):
    occ = np.linalg.eigvalsh(frame.lam + a.pp)
    if occ.size and (occ[0] < -tau or occ[-1] > 1 + tau):
        raise DomainError(
            "Lambda + A_pp leaves the occupancy box [0, 1]",
            "deg_pt.gamma_of",
            min_occupation=occ[0],
            max_occupation=occ[-1],
        )


def gamma_of_frame(frame: BlockFrame, a: BlockCoefficient):
    _check_box(frame, a)
    luo, lpf, lpp = frame.lift(a)
    U = linalg.expm(luo) @ linalg.expm(lpf)
    g = U @ (frame.gamma0 + lpp) @ U.T
    return 0.5 * (g + g.T)


def gamma_of(frame: BlockFrame, a: BlockCoefficient):
    """Density matrix ``Gamma(A)`` in the site basis."""
    return frame.to_sites(gamma_of_frame(frame, a))


def _comm(x, y):
    return x @ y - y @ x


def _gamma_l_lifted(frame, lifts):
    """Multilinear term for already-lifted arguments; any argument may be a stack."""
    l = len(lifts)
    out = 0.0
    for i in range(l + 1):
        j = l - i
        y = frame.gamma0
        for t in range(l - 1, i - 1, -1):
            y = _comm(lifts[t][1], y)
        for t in range(i - 1, -1, -1):
            y = _comm(lifts[t][0], y)
        out = out + y / (math.factorial(i) * math.factorial(j))
    for i in range(l):
        j = l - 1 - i
        y = lifts[l - 1][2]
        for t in range(l - 2, i - 1, -1):
            y = _comm(lifts[t][1], y)
        for t in range(i - 1, -1, -1):
            y = _comm(lifts[t][0], y)
        out = out + y / (math.factorial(i) * math.factorial(j))
    return out


def gamma_l_frame(frame, a_list):
    if len(a_list) < 1:
        raise InputError("gamma_l needs at least one argument", "deg_pt.gamma_l")
    return _gamma_l_lifted(frame, [frame.lift(a) for a in a_list])


def gamma_l(frame: BlockFrame, a_list):
    """``gamma_l(A_1, ..., A_l)`` in the site basis."""
    return frame.to_sites(gamma_l_frame(frame, a_list))


# --------------------------------------------------------------------------
# Theta and its inverse


def dual_of_potential(frame: BlockFrame, v):
    """Dual coefficient of ``A -> v . rho[gamma_1(A)]``."""
    U = frame.potential(v)
    f, p, u = frame.sl_f, frame.sl_p, frame.sl_u
    lam = frame.lam
    one = np.eye(frame.n_partial)
    return BlockCoefficient(
        2.0 * U[u, f],
        2.0 * U[u, p] @ lam,
        2.0 * (one - lam) @ U[p, f],
        _traceless(U[p, p]),
    )


def _require_coercive_frame(frame, op, tau=1e-10):
    occ = np.linalg.eigvalsh(frame.lam)
    if occ[0] <= tau or occ[-1] >= 1 - tau:
        raise PreconditionError("occupations on the Fermi block are saturated", op, occupations=occ)


def theta_apply(frame: BlockFrame, a: BlockCoefficient, kernel=None) -> BlockCoefficient:
    """``Theta(A)``: the (halved) Hessian of the chart energy at the ground state."""
    _require_coercive_frame(frame, "deg_pt.theta_apply")
    K = frame.system.kernel if kernel is None else kernel
    hm = frame.h_minus - frame.eps_f * np.eye(frame.n_full)
    hp = frame.h_plus - frame.eps_f * np.eye(frame.n_unocc)
    lam = frame.lam
    one = np.eye(frame.n_partial)
    rho1 = frame.density(gamma_l_frame(frame, [a]))
    J = dual_of_potential(frame, K @ rho1)
    out = BlockCoefficient(
        -a.uf @ hm + hp @ a.uf,
        hp @ a.up @ lam,
        -(one - lam) @ a.pf @ hm,
        np.zeros_like(a.pp),
    )
    return out + 0.5 * J


def theta_matrix(frame: BlockFrame, kernel=None):
    """Theta in the orthonormal coordinates of the parameter space (symmetric)."""
    _require_coercive_frame(frame, "deg_pt.theta_matrix")
    cols = [frame.to_vec(theta_apply(frame, frame.from_vec(e), kernel)) for e in np.eye(frame.dim)]
    T = np.column_stack(cols)
    return 0.5 * (T + T.T)


def theta_solve(frame: BlockFrame, rhs: BlockCoefficient, kernel=None, T=None) -> BlockCoefficient:
    """Solve ``Theta(A) = rhs`` by a Cholesky factorization of the assembled map."""
    T = theta_matrix(frame, kernel) if T is None else T
    try:
        cf = linalg.cho_factor(T)
    except linalg.LinAlgError as exc:
        raise StructuralError(
            "Theta is not coercive: the ground state violates the uniqueness or fractional-occupation assumptions",
            "deg_pt.theta_solve",
            min_eigenvalue=float(np.linalg.eigvalsh(T)[0]),
        ) from exc
    return frame.from_vec(linalg.cho_solve(cf, frame.to_vec(rhs)))


def coercivity_bound(frame: BlockFrame):
    """``min(1, lambda_-, (1 - lambda_+) g_-)`` from the explicit lower bound on Theta."""
    occ = np.linalg.eigvalsh(frame.lam)
    g_minus = frame.gs.gaps[0]
    return float(min(1.0, occ[0], (1 - occ[-1]) * g_minus))


# --------------------------------------------------------------------------
# right-hand sides and the recursion


def _slot_functional(frame, X, lifted_prefix, insert_lifts=None):
    """Coordinates of ``A -> sum_i Tr(X gamma_l(args with A inserted at slot i))``."""
    basis = frame.basis_lifts if insert_lifts is None else insert_lifts
    total = np.zeros(frame.dim)
    l = len(lifted_prefix) + 1
    for i in range(l):
        args = list(lifted_prefix[:i]) + [basis] + list(lifted_prefix[i:])
        G = _gamma_l_lifted(frame, args)
        total += np.einsum("ab,mba->m", X, G)
    return total


def _composition_sum(frame, lifted, m, cap):
    """``sum gamma_l(A^(alpha_1), ..., A^(alpha_l))`` over compositions of m with parts <= cap."""
    n = frame.basis.shape[0]
    out = np.zeros((n, n))
    for parts in range(1, m + 1):
        for comp in compositions(m, parts):
            if max(comp) <= cap:
                out = out + _gamma_l_lifted(frame, [lifted[j] for j in comp])
    return out


def assemble_b(frame: BlockFrame, w, k: int, prior, k_max=4, gamma_prior=None) -> BlockCoefficient:
    """Dual right-hand side ``B^(k)`` built from ``prior = [A^(1), ..., A^(k-1)]``.

    For k >= 2 the contributions of the energy-gradient expansion at order k
    that do not involve ``A^(k)`` are grouped by the tuple of prior orders in
    the differentiated term: the kinetic/mean-field part carries H0, the
    Hartree cross terms carry the potential of the complementary density
    coefficient, and the external part carries w.
    """
    if k < 1:
        raise InputError("order must be >= 1", "deg_pt.assemble_b")
    if k > k_max:
        raise InputError(f"order {k} exceeds the cap {k_max}", "deg_pt.assemble_b", k_max=k_max)
    w = check_potential(frame.system, w)
    if k == 1:
        return dual_of_potential(frame, w)
    if len(prior) < k - 1:
        raise InputError("missing prior orders", "deg_pt.assemble_b", have=len(prior), need=k - 1)
    K = frame.system.kernel
    lifted = {j: frame.lift(prior[j - 1]) for j in range(1, k)}
    # density coefficients: full gamma^(j) for j < k, and the part of order k
    # not involving A^(k)
    G = dict(gamma_prior or {})
    for j in range(1, k):
        if j not in G:
            G[j] = _composition_sum(frame, lifted, j, j)
    Gk = _composition_sum(frame, lifted, k, k - 1)
    pot = {}
    for m in range(0, k):
        dens_mat = Gk if m == 0 else G[k - m]
        pot[m] = frame.potential(K @ frame.density(dens_mat))
    Wf = frame.potential(w)
    total = np.zeros(frame.dim)
    for m in range(0, k + 1):
        comps = [()] if m == 0 else [c for parts in range(1, m + 1) for c in compositions(m, parts)]
        for comp in comps:
            if comp and max(comp) > k - 1:
                continue
            X = np.zeros_like(frame.h)
            if m == k:
                X = X + frame.h_shift
            else:
                X = X + pot[m]
            if m == k - 1:
                X = X + Wf
            total += _slot_functional(frame, X, [lifted[j] for j in comp])
    b = frame.from_vec(total)
    return b


@dataclass
class DegSeries:
    """Degenerate expansion; lists are indexed by the order (entry 0 is unperturbed).

    ``energy_k`` runs to order ``2n + 1``; ``gamma_k``, ``a_k``, ``b_k`` to ``n``.
    """

    order: int
    w: np.ndarray
    frame: BlockFrame
    a_k: list
    b_k: list
    gamma_k: list
    rho_k: list
    energy_k: list

    def a_sum(self, beta, n=None):
        n = self.order if n is None else n
        out = self.frame.zero()
        for k in range(1, n + 1):
            out = out + beta**k * self.a_k[k]
        return out

    def gamma_sum(self, beta, n=None):
        n = self.order if n is None else n
        return sum(beta**k * self.gamma_k[k] for k in range(n + 1))

    def energy_sum(self, beta, kmax=None):
        kmax = 2 * self.order + 1 if kmax is None else kmax
        return sum(beta**k * self.energy_k[k] for k in range(kmax + 1))


def wigner_energy(frame, w, lifted, K_order):
    """Energy coefficient of order K from ``A^(j)``, ``j <= K // 2`` (the (2n+1) formulation)."""
    K = frame.system.kernel
    if K_order == 1:
        return float(frame.gs.rho0 @ w)
    p = K_order // 2
    T = {m: _composition_sum(frame, lifted, m, p) for m in range(1, K_order + 1)}
    rho = {m: frame.density(T[m]) for m in T}
    e = float(np.sum(frame.h_shift * T[K_order]))
    e += 0.5 * sum(float(rho[m] @ K @ rho[K_order - m]) for m in range(1, K_order))
    e += float(w @ rho[K_order - 1])
    return e


def naive_energy(series: DegSeries, k):
    """Energy coefficient from the density-matrix coefficients up to order k (cross-check only)."""
    fr = series.frame
    K = fr.system.kernel
    if k == 1:
        return float(fr.gs.rho0 @ series.w)
    e = float(np.sum(fr.gs.h0 * series.gamma_k[k]))
    e += 0.5 * sum(float(series.rho_k[l] @ K @ series.rho_k[k - l]) for l in range(1, k))
    e += float(series.w @ series.rho_k[k - 1])
    return e


def expand_degenerate(gs: GroundState, w, n: int, n_max=4, check_uniqueness=True) -> DegSeries:
    """Coefficients ``A^(k)``, ``gamma^(k)`` (k <= n) and energies up to order ``2n + 1``."""
    from .ground_state import uniqueness_kernel_test

    frame = block_frame(gs)
    _require_coercive_frame(frame, "deg_pt.expand_degenerate")
    if n < 1:
        raise InputError("order must be >= 1", "deg_pt.expand_degenerate")
    if n > n_max:
        raise InputError(f"order {n} exceeds the cap {n_max}", "deg_pt.expand_degenerate", n_max=n_max)
    if check_uniqueness and not uniqueness_kernel_test(gs)["holds"]:
        raise StructuralError("uniqueness condition fails on the Fermi block", "deg_pt.expand_degenerate")
    w = check_potential(gs.system, w)
    T = theta_matrix(frame)
    a_k = [frame.zero()]
    b_k = [frame.zero()]
    gamma_frame = {}
    for k in range(1, n + 1):
        b = assemble_b(frame, w, k, a_k[1:], k_max=n_max, gamma_prior=gamma_frame)
        a = theta_solve(frame, -0.5 * b, T=T)
        b_k.append(b)
        a_k.append(a)
        lifted = {j: frame.lift(a_k[j]) for j in range(1, k + 1)}
        gamma_frame[k] = _composition_sum(frame, lifted, k, k)
    lifted = {j: frame.lift(a_k[j]) for j in range(1, n + 1)}
    energies = [gs.energy] + [wigner_energy(frame, w, lifted, K) for K in range(1, 2 * n + 2)]
    gamma_k = [gs.gamma0] + [frame.to_sites(gamma_frame[k]) for k in range(1, n + 1)]
    rho_k = [gs.rho0] + [frame.density(gamma_frame[k]) for k in range(1, n + 1)]
    return DegSeries(order=n, w=w, frame=frame, a_k=a_k, b_k=b_k, gamma_k=gamma_k, rho_k=rho_k, energy_k=energies)


# --------------------------------------------------------------------------
# chart energy and gradient


def chart_energy(frame: BlockFrame, a: BlockCoefficient, w=None):
    return energy(frame.system, gamma_of(frame, a), w)


def chart_gradient(frame: BlockFrame, a: BlockCoefficient, w=None):
    """Gradient of ``A -> E(Gamma(A), w)`` in the orthonormal coordinates."""
    _check_box(frame, a)
    sys = frame.system
    w = check_potential(sys, w)
    luo, lpf, lpp = frame.lift(a)
    Euo = linalg.expm(luo)
    Epf = linalg.expm(lpf)
    U = Euo @ Epf
    Y = frame.gamma0 + lpp
    g = frame.to_sites(U @ Y @ U.T)
    H = frame.to_frame(mean_field(sys, np.diagonal(g).copy(), w))
    Buo, Bpf, Bpp = frame.basis_lifts
    grad = np.empty(frame.dim)
    for m in range(frame.dim):
        dUo = linalg.expm_frechet(luo, Buo[m], compute_expm=False)
        dUp = linalg.expm_frechet(lpf, Bpf[m], compute_expm=False)
        dU = dUo @ Epf + Euo @ dUp
        dG = dU @ Y @ U.T + U @ Bpp[m] @ U.T + U @ Y @ dU.T
        grad[m] = np.sum(H * dG)
    return grad
