"""Unperturbed (and perturbed) ground states of the lattice rHF model.

The minimization over density matrices is convex, so a Frank-Wolfe type
iteration with exact line search (optimal damping) converges to the global
minimizer, fractional Fermi-level occupations included.  Its convergence is
only linear, so once the occupation structure is visible the
Euler-Lagrange equations are finished off with a Newton solve.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConsistencyError, ConvergenceError, InputError, PreconditionError
from .model import LatticeSystem, check_density_matrix, check_potential, density_of, energy, mean_field, read_matrix, write_matrix

NONDEGENERATE = "NonDegenerate"
DEGENERATE = "Degenerate"
BOUNDARY = "Boundary"


@dataclass(frozen=True, eq=False)
class GroundState:
    """Converged state with its Fermi-level structure.

    ``lam`` is the occupation matrix of the Fermi cluster in the basis
    ``eigvecs[:, n_full:n_full + n_partial]``.  In the non-degenerate case
    ``n_partial = 0`` and ``n_full = N``.
    """

    system: LatticeSystem
    gamma0: np.ndarray
    h0: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    fermi_level: float
    n_full: int
    n_partial: int
    lam: np.ndarray
    gaps: tuple
    energy: float
    w: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def n_unocc(self):
        return self.system.n_sites - self.n_full - self.n_partial

    @property
    def rho0(self):
        return density_of(self.gamma0)

    @property
    def basis_f(self):
        return self.eigvecs[:, : self.n_full]

    @property
    def basis_p(self):
        return self.eigvecs[:, self.n_full : self.n_full + self.n_partial]

    @property
    def basis_u(self):
        return self.eigvecs[:, self.n_full + self.n_partial :]

    @property
    def kind(self):
        return classify(self)


def _scale(sys):
    return max(1.0, np.abs(np.linalg.eigvalsh(sys.kinetic)).max(), np.abs(sys.v_ext).max())


def default_tol_cluster(sys):
    return 1e-8 * _scale(sys)


def _fermi_cluster(eigvals, n_electrons, tol):
    """Indices ``(lo, hi)`` of the eigenvalues within ``tol`` of the N-th one."""
    eN = eigvals[n_electrons - 1]
    close = np.abs(eigvals - eN) <= tol
    lo = n_electrons - 1
    while lo > 0 and close[lo - 1]:
        lo -= 1
    hi = n_electrons
    while hi < len(eigvals) and close[hi]:
        hi += 1
    return lo, hi


def aufbau(h, n_electrons, tol_cluster=0.0):
    """Lowest-energy point of the linear problem ``min Tr(h g)`` over ``0 <= g <= 1, Tr g = N``.

    Levels tied with the N-th one (within ``tol_cluster``) share the
    remaining electrons equally, which keeps symmetric problems symmetric.
    """
    e, V = np.linalg.eigh(h)
    lo, hi = _fermi_cluster(e, n_electrons, tol_cluster)
    occ = np.zeros(len(e))
    occ[:lo] = 1.0
    occ[lo:hi] = (n_electrons - lo) / (hi - lo)
    return (V * occ) @ V.T, e


def _symmetrize(gamma, group):
    if not group:
        return gamma
    acc = np.zeros_like(gamma)
    for g in group:
        acc += g @ gamma @ g.T
    acc /= len(group)
    return 0.5 * (acc + acc.T)


def _traceless_basis(m):
    """Orthonormal (Frobenius) basis of the traceless symmetric m x m matrices."""
    basis = []
    for i in range(m):
        for j in range(i + 1, m):
            b = np.zeros((m, m))
            b[i, j] = b[j, i] = 1 / np.sqrt(2)
            basis.append(b)
    for d in range(1, m):
        b = np.zeros((m, m))
        b[np.arange(d), np.arange(d)] = 1.0
        b[d, d] = -d
        basis.append(b / np.linalg.norm(b))
    return basis


def oda(sys, w=None, gamma_init=None, max_iter=2000, tol_residual=1e-10, symmetrizer=None, tol_cluster=None):
    """Optimal damping iteration.  Returns ``(gamma, residual, iterations, energies)``.

    Each step moves towards the aufbau state of the current mean field with
    the exactly optimal step length (the energy is quadratic along the
    segment).  ``residual = -Tr(H (gamma_aufbau - gamma))`` bounds the energy
    error from above, since the functional is convex.
    """
    w = check_potential(sys, w)
    tol_cluster = default_tol_cluster(sys) if tol_cluster is None else tol_cluster
    if gamma_init is None:
        gamma, _ = aufbau(mean_field(sys, np.zeros(sys.n_sites), w), sys.n_electrons, tol_cluster)
    else:
        gamma = check_density_matrix(sys, gamma_init, in_KN=True).copy()
    gamma = _symmetrize(gamma, symmetrizer)
    e_cur = energy(sys, gamma, w)
    energies = [e_cur]
    residual = np.inf
    for it in range(1, max_iter + 1):
        rho = density_of(gamma)
        h = mean_field(sys, rho, w)
        # widen the tie window while far from convergence so that the
        # search direction does not flip between near-degenerate levels
        tie = max(tol_cluster, min(1e-3, np.sqrt(residual)) if np.isfinite(residual) else 1e-3)
        target, _ = aufbau(h, sys.n_electrons, tie)
        target = _symmetrize(target, symmetrizer)
        delta = target - gamma
        slope = float(np.sum(h * delta))
        residual = max(-slope, 0.0)
        if residual <= tol_residual:
            return gamma, residual, it, energies
        drho = density_of(delta)
        curv = float(drho @ sys.kernel @ drho)
        t = 1.0 if curv <= 0 else min(1.0, -slope / curv)
        gamma = gamma + t * delta
        gamma = 0.5 * (gamma + gamma.T)
        e_new = energy(sys, gamma, w)
        if e_new > e_cur + 1e-12 * max(1.0, abs(e_cur)):
            raise ConsistencyError(
                "energy increased during optimal damping",
                "ground_state.solve_scf",
                iteration=it,
                increase=e_new - e_cur,
            )
        e_cur = e_new
        energies.append(e_cur)
    raise ConvergenceError(
        "optimal damping did not converge",
        "ground_state.solve_scf",
        last_residual=residual,
        max_iter=max_iter,
    )


def _structure_from_occupations(gamma, tau=1e-4):
    occ = np.linalg.eigvalsh(gamma)
    n_full = int(np.sum(occ > 1 - tau))
    n_frac = int(np.sum((occ > tau) & (occ <= 1 - tau)))
    return n_full, n_frac


def newton_polish(sys, gamma, n_full, n_partial, w=None, xtol=1e-15):
    """Solve the Euler-Lagrange equations near ``gamma`` with a fixed occupation structure.

    Unknowns are the Hartree potential ``u`` and the traceless part of the
    Fermi-block occupations.  ``gamma(u, lam) = P_f + Phi lam Phi^T`` where
    ``P_f`` is the projector on the lowest ``n_full`` levels of
    ``T + v + w + u`` and ``Phi`` is the next ``n_partial`` levels, aligned to
    the starting frame.  Equations: ``u = K rho`` and ``Phi^T H Phi`` scalar.
    Returns the new gamma or ``None`` if the solve fails.
    """
    w = check_potential(sys, w)
    n = sys.n_sites
    vloc = sys.v_ext + w
    nf, npart = n_full, n_partial
    u0 = sys.kernel @ density_of(gamma)
    _, V0 = np.linalg.eigh(sys.kinetic + np.diag(vloc + u0))
    phi_ref = V0[:, nf : nf + npart]
    basis = _traceless_basis(npart)
    lam_center = np.eye(npart) * (sys.n_electrons - nf) / max(npart, 1)
    lam0 = phi_ref.T @ gamma @ phi_ref
    c0 = np.array([np.sum(b * lam0) for b in basis])
    x0 = np.concatenate([u0, c0])

    def build(x):
        u = x[:n]
        h = sys.kinetic + np.diag(vloc + u)
        _, V = np.linalg.eigh(h)
        g = V[:, :nf] @ V[:, :nf].T
        if npart == 0:
            return h, g, None, None
        Vp = V[:, nf : nf + npart]
        a, _, bt = np.linalg.svd(Vp.T @ phi_ref)
        phi = Vp @ (a @ bt)
        lam = lam_center + sum(c * b for c, b in zip(x[n:], basis))
        g = g + phi @ lam @ phi.T
        return h, g, phi, lam

    def resid(x):
        h, g, phi, _ = build(x)
        r = x[:n] - sys.kernel @ np.diagonal(g)
        if npart == 0:
            return r
        m = phi.T @ h @ phi
        return np.concatenate([r, [np.sum(b * m) for b in basis]])

    sol = optimize.root(resid, x0, method="hybr", options={"xtol": xtol})
    x = sol.x
    _, g, _, lam = build(x)
    if lam is not None:
        occ = np.linalg.eigvalsh(lam)
        if occ[0] < -1e-12 or occ[-1] > 1 + 1e-12:
            return None
    g = 0.5 * (g + g.T)
    scale = max(1.0, np.abs(x0).max())
    if not np.all(np.isfinite(g)) or np.abs(resid(x)).max() > 1e-9 * scale:
        return None
    return g


def certificate(sys, gamma, w=None, tol_cluster=None):
    """Duality gap ``-Tr(H (gamma_aufbau - gamma))``, an upper bound on the energy error."""
    tol_cluster = default_tol_cluster(sys) if tol_cluster is None else tol_cluster
    h = mean_field(sys, density_of(gamma), w)
    target, _ = aufbau(h, sys.n_electrons, tol_cluster)
    return max(-float(np.sum(h * (target - gamma))), 0.0)


def solve_scf(
    sys: LatticeSystem,
    w=None,
    max_iter=2000,
    tol_residual=None,
    symmetrizer=None,
    gamma_init=None,
    tol_cluster=None,
    polish=True,
    structure=None,
) -> GroundState:
    """Minimize the rHF energy of ``sys`` in the potential ``w`` (default 0).

    ``structure = (n_full, n_partial)`` forces the occupation pattern used by
    the Newton polish; otherwise it is read off the damped iterate.
    """
    w = check_potential(sys, w)
    scale = _scale(sys)
    tol_residual = 1e-13 * scale if tol_residual is None else tol_residual
    tol_cluster = default_tol_cluster(sys) if tol_cluster is None else tol_cluster
    oda_tol = max(tol_residual, 1e-9 * scale) if polish else tol_residual
    try:
        gamma, residual, iters, history = oda(sys, w, gamma_init, max_iter, oda_tol, symmetrizer, tol_cluster)
    except ConvergenceError:
        if not polish:
            raise
        gamma, residual, iters, history = None, np.inf, max_iter, []
    if polish:
        # the certificate bounds the energy error, which is quadratic in the
        # error on gamma, so the Newton step is always taken
        if gamma is None:
            # fall back on a loose damped solve to read the structure
            gamma, residual, iters, history = oda(sys, w, gamma_init, max_iter, 1e-6 * scale, symmetrizer, tol_cluster)
        if structure is not None:
            candidates = [tuple(structure)]
        else:
            # a loosely converged iterate can have occupations 1e-4 away from
            # 0 or 1, so several thresholds are tried
            candidates = list(dict.fromkeys(_structure_from_occupations(gamma, tau) for tau in (1e-4, 1e-3, 1e-2, 5e-2)))
        best = None
        for nf, npart in candidates:
            polished = newton_polish(sys, gamma, nf, npart, w)
            if polished is None:
                continue
            polished = _symmetrize(polished, symmetrizer)
            res_p = certificate(sys, polished, w, max(tol_cluster, 1e-10 * scale))
            if best is None or res_p < best[1]:
                best = (polished, res_p)
            if res_p <= 1e-14 * scale:
                break
        if best is not None and best[1] <= max(residual, 1e-14 * scale):
            gamma, residual = best
            history = history + [energy(sys, gamma, w)]
    if residual > tol_residual:
        raise ConvergenceError(
            "SCF did not reach the requested residual",
            "ground_state.solve_scf",
            last_residual=residual,
            tol_residual=tol_residual,
        )
    gs = ground_state_from_gamma(sys, gamma, w, tol_cluster=tol_cluster)
    return GroundState(**{**gs.__dict__, "residual": residual, "iterations": iters, "history": history})


def ground_state_from_gamma(sys, gamma, w=None, tol_cluster=None) -> GroundState:
    """Assemble the ground-state record (mean field, Fermi data) for a given minimizer."""
    w = check_potential(sys, w)
    gamma = check_density_matrix(sys, gamma, in_KN=True)
    tol_cluster = default_tol_cluster(sys) if tol_cluster is None else tol_cluster
    h0 = mean_field(sys, density_of(gamma), w)
    eigvals, eigvecs = np.linalg.eigh(h0)
    N = sys.n_electrons
    n = sys.n_sites
    lo, hi = _fermi_cluster(eigvals, N, tol_cluster)
    if N < n and hi > N:
        n_full, n_partial = lo, hi - lo
        # rotate inside the cluster so that lam is diagonal
        Vp = eigvecs[:, lo:hi]
        occ, R = np.linalg.eigh(Vp.T @ gamma @ Vp)
        eigvecs = eigvecs.copy()
        eigvecs[:, lo:hi] = Vp @ R[:, ::-1]
        eigvals = eigvals.copy()
        eigvals[lo:hi] = eigvals[lo:hi].mean()
        lam = np.diag(occ[::-1])
        eF = float(eigvals[lo])
        g_minus = eF - eigvals[lo - 1] if lo > 0 else np.inf
        g_plus = eigvals[hi] - eF if hi < n else np.inf
    else:
        n_full, n_partial = N, 0
        lam = np.zeros((0, 0))
        if N < n:
            eF = 0.5 * (eigvals[N - 1] + eigvals[N])
        else:
            eF = eigvals[N - 1] + 1.0
        g_minus = eF - eigvals[N - 1]
        g_plus = eigvals[N] - eF if N < n else np.inf
    return GroundState(
        system=sys,
        gamma0=gamma.copy(),
        h0=h0,
        eigvals=eigvals,
        eigvecs=eigvecs,
        fermi_level=float(eF),
        n_full=n_full,
        n_partial=n_partial,
        lam=lam,
        gaps=(float(g_minus), float(g_plus)),
        energy=energy(sys, gamma, w),
        w=w,
    )


def classify(gs: GroundState, tol_cluster=None, tau=1e-8) -> str:
    """``NonDegenerate``, ``Degenerate`` or ``Boundary`` (occupation saturated inside the Fermi cluster)."""
    sys = gs.system
    tol_cluster = default_tol_cluster(sys) if tol_cluster is None else tol_cluster
    e = gs.eigvals
    N = sys.n_electrons
    if N == sys.n_sites or e[N] - e[N - 1] > tol_cluster:
        return NONDEGENERATE
    lo, hi = _fermi_cluster(e, N, tol_cluster)
    Vp = gs.eigvecs[:, lo:hi]
    occ = np.linalg.eigvalsh(Vp.T @ gs.gamma0 @ Vp)
    if hi - lo >= 2 and occ[0] > tau and occ[-1] < 1 - tau:
        return DEGENERATE
    return BOUNDARY


def uniqueness_kernel_test(gs: GroundState, phi_p=None):
    """Injectivity of ``M -> sum_ij M_ij phi_i phi_j`` on traceless symmetric ``M``.

    Returns ``{"sigma_min", "sigma_max", "scaled", "holds"}``; the condition
    holds when ``sigma_min > 1e-8 * sigma_max``.  ``phi_p`` overrides the
    Fermi-cluster orbitals (columns).
    """
    phi = gs.basis_p if phi_p is None else np.asarray(phi_p, dtype=float)
    m = phi.shape[1]
    if m == 0:
        raise PreconditionError("uniqueness test needs a Fermi cluster", "ground_state.uniqueness_kernel_test")
    if m == 1:
        return {"sigma_min": np.inf, "sigma_max": np.inf, "scaled": np.inf, "holds": True}
    basis = _traceless_basis(m)
    cols = np.stack([np.einsum("ij,ai,aj->a", b, phi, phi) for b in basis], axis=1)
    s = np.linalg.svd(cols, compute_uv=False)
    smax, smin = float(s[0]), float(s[-1])
    scaled = smin / smax if smax > 0 else 0.0
    return {"sigma_min": smin, "sigma_max": smax, "scaled": scaled, "holds": bool(smax > 0 and smin > 1e-8 * smax)}


def stability_ranks(gs: GroundState, v):
    """Eigenvalue counts of ``H0 + diag(v)`` in the five windows built around the Fermi level."""
    v = check_potential(gs.system, v)
    e = gs.eigvals
    eF = gs.fermi_level
    g_minus, g_plus = gs.gaps
    if not np.isfinite(g_minus):
        g_minus = eF - (e[0] - 1)
    if not np.isfinite(g_plus):
        g_plus = 1.0
    a1 = e[0] - 1
    a2 = eF - 0.75 * g_minus
    a3 = eF - 0.25 * g_minus
    a4 = eF + 0.25 * g_plus
    a5 = eF + 0.75 * g_plus
    ev = np.linalg.eigvalsh(gs.h0 + np.diag(v))
    return (
        int(np.sum(ev <= a1)),
        int(np.sum((ev > a1) & (ev < a2))),
        int(np.sum((ev >= a2) & (ev <= a3))),
        int(np.sum((ev > a3) & (ev <= a4))),
        int(np.sum((ev > a4) & (ev <= a5))),
    )


def expected_ranks(gs: GroundState):
    if gs.n_partial:
        return (0, gs.n_full, 0, gs.n_partial, 0)
    return (0, gs.n_full, 0, 0, 0)


# --------------------------------------------------------------------------
# archive: one directory with CSV blocks and a JSON manifest


def save_ground_state(gs: GroundState, directory):
    os.makedirs(directory, exist_ok=True)
    sys = gs.system
    for name, mat in (
        ("kinetic", sys.kinetic),
        ("kernel", sys.kernel),
        ("v_ext", sys.v_ext[:, None]),
        ("w", gs.w[:, None]),
        ("gamma0", gs.gamma0),
    ):
        write_matrix(os.path.join(directory, f"{name}.csv"), mat)
    manifest = {
        "n_sites": sys.n_sites,
        "n_electrons": sys.n_electrons,
        "label": sys.label,
        "fermi_level": gs.fermi_level,
        "n_full": gs.n_full,
        "n_partial": gs.n_partial,
        "lambda": gs.lam.tolist(),
        "gaps": list(gs.gaps),
        "energy": gs.energy,
        "residual": gs.residual,
        "classification": classify(gs),
    }
    with open(os.path.join(directory, "ground_state.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_ground_state(directory) -> GroundState:
    path = os.path.join(directory, "ground_state.json")
    if not os.path.exists(path):
        raise InputError(f"no ground-state archive in {directory}", "ground_state.load_ground_state")
    with open(path) as fh:
        manifest = json.load(fh)
    rd = lambda name: read_matrix(os.path.join(directory, f"{name}.csv"))
    sys = LatticeSystem(rd("kinetic"), rd("v_ext").ravel(), rd("kernel"), manifest["n_electrons"], label=manifest["label"])
    gs = ground_state_from_gamma(sys, rd("gamma0"), rd("w").ravel())
    return GroundState(**{**gs.__dict__, "residual": manifest["residual"]})
