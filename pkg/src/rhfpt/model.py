"""Finite lattice analogue of the reduced Hartree-Fock problem.

A system is described by a symmetric kinetic matrix, an external potential
on the sites, an SPD interaction kernel ``K`` (``D(f, g) = f @ K @ g``) and
an electron count.  Density matrices are plain symmetric ``ndarray``s and
potentials are plain vectors; the helpers below validate them on demand.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericOverflowError


@dataclass(frozen=True)
class Tolerances:
    spd: float = 1e-10
    psd: float = 1e-9
    trace: float = 1e-9


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True, eq=False)
class LatticeSystem:
    """Discretized rHF problem on ``n_sites`` orthonormal sites."""

    kinetic: np.ndarray
    v_ext: np.ndarray
    kernel: np.ndarray
    n_electrons: int
    tol: Tolerances = field(default=DEFAULT_TOL)
    label: str = "custom"

    def __post_init__(self):
        kin = np.array(self.kinetic, dtype=float)
        v = np.array(self.v_ext, dtype=float).ravel()
        ker = np.array(self.kernel, dtype=float)
        n = kin.shape[0]
        if kin.ndim != 2 or kin.shape != (n, n) or n == 0:
            raise InputError("kinetic must be a non-empty square matrix", "model.LatticeSystem")
        if v.shape != (n,) or ker.shape != (n, n):
            raise InputError(
                "v_ext / kernel shapes do not match kinetic",
                "model.LatticeSystem",
                n_sites=n,
                v_shape=v.shape,
                kernel_shape=ker.shape,
            )
        if not (np.all(np.isfinite(kin)) and np.all(np.isfinite(v)) and np.all(np.isfinite(ker))):
            raise InputError("system matrices must be finite", "model.LatticeSystem")
        scale = max(1.0, np.abs(kin).max())
        if np.abs(kin - kin.T).max() > 1e-12 * scale:
            raise InputError("kinetic matrix is not symmetric", "model.LatticeSystem")
        kscale = max(1.0, np.abs(ker).max())
        if np.abs(ker - ker.T).max() > 1e-12 * kscale:
            raise InputError("kernel is not symmetric", "model.LatticeSystem")
        kin = 0.5 * kin + 0.5 * kin.T
        ker = 0.5 * ker + 0.5 * ker.T
        lam_min = np.linalg.eigvalsh(ker)[0]
        if lam_min <= self.tol.spd:
            raise InputError(
                "kernel is not positive definite",
                "model.LatticeSystem",
                smallest_eigenvalue=lam_min,
            )
        n_el = int(self.n_electrons)
        if n_el != self.n_electrons or n_el <= 0:
            raise InputError("n_electrons must be a positive integer", "model.LatticeSystem")
        if n_el > n:
            raise InputError("n_electrons exceeds n_sites", "model.LatticeSystem")
        for name, arr in (("kinetic", kin), ("v_ext", v), ("kernel", ker)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_electrons", n_el)

    @property
    def n_sites(self) -> int:
        return self.kinetic.shape[0]

    def with_kernel(self, kernel) -> "LatticeSystem":
        return dataclasses.replace(self, kernel=kernel)

    def with_v_ext(self, v_ext) -> "LatticeSystem":
        return dataclasses.replace(self, v_ext=v_ext)

    def hartree(self, rho) -> np.ndarray:
        return self.kernel @ rho

    def coulomb_norm(self, rho) -> float:
        """Norm of a density in the Coulomb space, ``sqrt(rho K rho)``."""
        rho = np.asarray(rho, dtype=float)
        return float(np.sqrt(max(rho @ self.kernel @ rho, 0.0)))

    def dual_norm(self, w) -> float:
        """Norm of a potential in the dual space, ``sqrt(w K^-1 w)``."""
        w = np.asarray(w, dtype=float)
        return float(np.sqrt(max(w @ np.linalg.solve(self.kernel, w), 0.0)))


def check_potential(sys: LatticeSystem, w) -> np.ndarray:
    if w is None:
        return np.zeros(sys.n_sites)
    w = np.asarray(w, dtype=float)
    if w.shape != (sys.n_sites,):
        raise InputError("potential has wrong length", "model.check_potential", expected=sys.n_sites, got=w.shape)
    if not np.all(np.isfinite(w)):
        raise InputError("potential has non-finite entries", "model.check_potential")
    return w


def check_density_matrix(sys: LatticeSystem, gamma, in_KN: bool = False) -> np.ndarray:
    """Validate ``gamma`` as a density matrix (``0 <= gamma <= 1``).

    With ``in_KN`` the trace must also equal the electron count.
    """
    gamma = np.asarray(gamma, dtype=float)
    n = sys.n_sites
    if gamma.shape != (n, n):
        raise InputError("density matrix has wrong shape", "model.check_density_matrix", expected=n, got=gamma.shape)
    if np.abs(gamma - gamma.T).max() > 1e-10:
        raise InputError("density matrix is not symmetric", "model.check_density_matrix")
    occ = np.linalg.eigvalsh(gamma)
    tol = sys.tol
    if occ[0] < -tol.psd or occ[-1] > 1 + tol.psd:
        raise InputError(
            "spectrum of density matrix leaves [0, 1]",
            "model.check_density_matrix",
            min_occupation=occ[0],
            max_occupation=occ[-1],
        )
    if in_KN and abs(np.trace(gamma) - sys.n_electrons) > tol.trace:
        raise InputError("trace of density matrix differs from N", "model.check_density_matrix", trace=np.trace(gamma))
    return gamma


def density_of(gamma, sys: LatticeSystem | None = None) -> np.ndarray:
    """Site density ``rho_i = gamma_ii``."""
    gamma = np.asarray(gamma)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise InputError("gamma must be square", "model.density_of", shape=gamma.shape)
    if sys is not None and gamma.shape[0] != sys.n_sites:
        raise InputError("gamma does not match system size", "model.density_of", expected=sys.n_sites, got=gamma.shape)
    return np.real(np.diagonal(gamma)).copy()


def energy(sys: LatticeSystem, gamma, w=None) -> float:
    """rHF energy ``Tr(T gamma) + v.rho + 1/2 rho K rho + w.rho``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (sys.n_sites, sys.n_sites):
        raise InputError("gamma does not match system size", "model.energy")
    w = check_potential(sys, w)
    rho = density_of(gamma)
    terms = {
        "kinetic": float(np.sum(sys.kinetic * gamma)),
        "external": float(sys.v_ext @ rho),
        "hartree": 0.5 * float(rho @ sys.kernel @ rho),
        "perturbation": float(w @ rho),
    }
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericOverflowError(f"non-finite {name} energy term", "model.energy", term=name)
    total = terms["kinetic"] + terms["external"] + terms["hartree"] + terms["perturbation"]
    if not np.isfinite(total):
        raise NumericOverflowError("energy total overflows", "model.energy", term="total", terms=terms)
    return total


def mean_field(sys: LatticeSystem, rho, w=None) -> np.ndarray:
    """Mean-field Hamiltonian ``T + diag(v + K rho + w)``."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (sys.n_sites,):
        raise InputError("density has wrong length", "model.mean_field", expected=sys.n_sites, got=rho.shape)
    w = check_potential(sys, w)
    return sys.kinetic + np.diag(sys.v_ext + sys.kernel @ rho + w)


# --------------------------------------------------------------------------
# demo systems


def _shift_matrix(n):
    return np.roll(np.eye(n), 1, axis=0)


def ring_kernel(n_sites, mass=1.0, strength=1.0):
    """Translation-invariant kernel with Fourier multiplier ``strength / (k^2 + mass^2)``."""
    j = np.arange(n_sites)
    k = 2 * np.pi * np.where(j <= n_sites // 2, j, j - n_sites) / n_sites
    mult = strength / (k**2 + mass**2)
    dist = (j[:, None] - j[None, :]) % n_sites
    col = np.array([np.sum(mult * np.cos(k * d)) for d in range(n_sites)]) / n_sites
    return col[dist]


def ring_symmetry_group(n_sites):
    """Cyclic shifts and reflections of the ring (dihedral group), as permutation matrices."""
    S = _shift_matrix(n_sites)
    R = np.eye(n_sites)[(-np.arange(n_sites)) % n_sites]
    group = []
    P = np.eye(n_sites)
    for _ in range(n_sites):
        group.append(P)
        group.append(R @ P)
        P = S @ P
    return group


def build_ring(n_sites=12, n_electrons=2, hopping=1.0, mass=1.0, strength=1.0, v0=0.0):
    if n_sites < 3:
        raise InputError("ring needs at least 3 sites", "model.build_demo_system")
    if n_electrons >= n_sites:
        raise InputError("ring needs N < n_sites", "model.build_demo_system")
    if hopping <= 0 or mass <= 0 or strength <= 0:
        raise InputError("hopping, mass and strength must be positive", "model.build_demo_system")
    S = _shift_matrix(n_sites)
    kinetic = hopping * (2 * np.eye(n_sites) - S - S.T)
    return LatticeSystem(
        kinetic=kinetic,
        v_ext=np.full(n_sites, float(v0)),
        kernel=ring_kernel(n_sites, mass, strength),
        n_electrons=n_electrons,
        label=f"ring(n={n_sites},N={n_electrons})",
    )


def build_double_well(
    n_sites=16,
    n_electrons=2,
    hopping=1.0,
    depths=(3.0, 2.0),
    centers=None,
    width=1.5,
    mass=0.5,
    strength=0.5,
):
    """Open chain with two Gaussian wells of different depth and a Yukawa kernel."""
    if n_electrons >= n_sites:
        raise InputError("double well needs N < n_sites", "model.build_demo_system")
    if width <= 0 or mass <= 0 or strength <= 0:
        raise InputError("width, mass and strength must be positive", "model.build_demo_system")
    x = np.arange(n_sites, dtype=float)
    if centers is None:
        centers = (0.3 * (n_sites - 1), 0.7 * (n_sites - 1))
    v = np.zeros(n_sites)
    for depth, c in zip(depths, centers):
        v -= depth * np.exp(-((x - c) ** 2) / (2 * width**2))
    kinetic = hopping * (2 * np.eye(n_sites) - np.eye(n_sites, k=1) - np.eye(n_sites, k=-1))
    kernel = strength * np.exp(-mass * np.abs(x[:, None] - x[None, :]))
    return LatticeSystem(kinetic, v, kernel, n_electrons, label=f"double_well(n={n_sites},N={n_electrons})")


def synthetic_degenerate_state(
    n_sites=10,
    n_full=2,
    n_partial=2,
    occupations=None,
    fermi_level=-1.0,
    gap_below=0.7,
    gap_above=0.9,
    kernel_scale=0.2,
    seed=0,
):
    """System whose exact ground state is known by construction.

    The mean-field Hamiltonian has a cluster of multiplicity ``n_partial`` at
    ``fermi_level``; the external potential cancels the Hartree potential of
    the prescribed density matrix so that the prescribed state satisfies the
    Euler-Lagrange conditions exactly.  Returns ``(system, gamma0)``.
    """
    rng = np.random.default_rng(seed)
    n_unocc = n_sites - n_full - n_partial
    if n_full < 0 or n_partial < 1 or n_unocc < 1:
        raise InputError("infeasible block sizes", "model.build_demo_system")
    if occupations is None:
        occupations = np.full(n_partial, 0.5)
        if n_partial % 2:
            occupations = np.linspace(0.35, 0.65, n_partial)
            occupations += (np.round(occupations.sum()) - occupations.sum()) / n_partial
    occupations = np.asarray(occupations, dtype=float)
    if occupations.shape != (n_partial,) or occupations.min() < 0 or occupations.max() > 1:
        raise InputError("occupations must be n_partial numbers in [0, 1]", "model.build_demo_system")
    n_el = n_full + occupations.sum()
    if abs(n_el - round(n_el)) > 1e-12:
        raise InputError("occupations must sum to an integer", "model.build_demo_system")
    below = fermi_level - gap_below - np.linspace(0.0, 1.0, n_full)[::-1] if n_full else np.zeros(0)
    above = fermi_level + gap_above + np.linspace(0.0, 2.0, n_unocc)
    spectrum = np.concatenate([below, np.full(n_partial, fermi_level), above])
    U, _ = np.linalg.qr(rng.standard_normal((n_sites, n_sites)))
    h0 = (U * spectrum) @ U.T
    h0 = 0.5 * (h0 + h0.T)
    G = rng.standard_normal((n_sites, n_sites))
    kernel = kernel_scale * (G @ G.T / n_sites + np.eye(n_sites))
    occ = np.concatenate([np.ones(n_full), occupations, np.zeros(n_unocc)])
    gamma0 = (U * occ) @ U.T
    gamma0 = 0.5 * (gamma0 + gamma0.T)
    rho0 = np.diagonal(gamma0).copy()
    sys = LatticeSystem(
        kinetic=h0,
        v_ext=-kernel @ rho0,
        kernel=kernel,
        n_electrons=int(round(n_el)),
        label=f"synthetic_degenerate(n={n_sites},Np={n_partial})",
    )
    return sys, gamma0


def build_demo_system(kind, **params) -> LatticeSystem:
    """Build one of the bundled systems: ``ring``, ``double_well`` or ``synthetic_degenerate``."""
    try:
        if kind == "ring":
            return build_ring(**params)
        if kind == "double_well":
            return build_double_well(**params)
        if kind == "synthetic_degenerate":
            return synthetic_degenerate_state(**params)[0]
    except TypeError as exc:
        raise InputError(f"bad parameters for {kind}: {exc}", "model.build_demo_system") from exc
    raise InputError(f"unknown system kind {kind!r}", "model.build_demo_system")


# --------------------------------------------------------------------------
# dense matrix text format: one header line with n, then n rows of CSV


def write_matrix(path, matrix):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{matrix.shape[0]}\n")
        np.savetxt(fh, matrix, delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        try:
            n = int(header)
        except ValueError as exc:
            raise InputError(f"{path}: first line must be the dimension", "model.read_matrix") from exc
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] != n:
        raise InputError(f"{path}: expected {n} rows, found {data.shape[0]}", "model.read_matrix")
    return data


SYSTEM_KEYS = {
    "ring": {"n_sites", "n_electrons", "hopping", "mass", "strength", "v0"},
    "double_well": {"n_sites", "n_electrons", "hopping", "depths", "centers", "width", "mass", "strength"},
    "synthetic_degenerate": {
        "n_sites",
        "n_full",
        "n_partial",
        "occupations",
        "fermi_level",
        "gap_below",
        "gap_above",
        "kernel_scale",
        "seed",
    },
    "explicit": {"n_sites", "n_electrons", "kinetic_path", "kernel_path", "v_ext", "v_ext_path"},
}


def system_from_spec(spec: dict, base_dir=".") -> LatticeSystem:
    """Build a system from a key-value mapping (the ``[system]`` table of a config)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in SYSTEM_KEYS:
        raise InputError(f"unknown or missing system kind {kind!r}", "model.system_from_spec")
    unknown = set(spec) - SYSTEM_KEYS[kind]
    if unknown:
        raise InputError(f"unknown keys for {kind}: {sorted(unknown)}", "model.system_from_spec")
    if kind != "explicit":
        for key in ("depths", "centers", "occupations"):
            if key in spec:
                spec[key] = tuple(spec[key])
        return build_demo_system(kind, **spec)
    for key in ("n_electrons", "kinetic_path", "kernel_path"):
        if key not in spec:
            raise InputError(f"explicit system needs {key}", "model.system_from_spec")
    kinetic = read_matrix(os.path.join(base_dir, spec["kinetic_path"]))
    kernel = read_matrix(os.path.join(base_dir, spec["kernel_path"]))
    n = kinetic.shape[0]
    if "n_sites" in spec and spec["n_sites"] != n:
        raise InputError("n_sites does not match kinetic matrix", "model.system_from_spec")
    if "v_ext_path" in spec:
        v = read_matrix(os.path.join(base_dir, spec["v_ext_path"])).ravel()
    else:
        v = np.asarray(spec.get("v_ext", np.zeros(n)), dtype=float)
    return LatticeSystem(kinetic, v, kernel, spec["n_electrons"], label="explicit")
