import numpy as np
import pytest

from rhfpt.errors import InputError, PreconditionError
from rhfpt.ground_state import solve_scf
from rhfpt.mo_pt import _saddle_matrix, cp_residual, mo_expand, orthogonality_defects, solve_cp_system
from rhfpt.nondeg_pt import expand
from rhfpt.validation import random_gapped_state


@pytest.fixture(scope="module")
def small():
    return random_gapped_state(5, n_sites=8, n_electrons=2)


def test_zero_rhs(small):
    sys, gs = small
    Psi, eta = solve_cp_system(gs, np.zeros((2, 8)), np.zeros(2))
    assert np.all(Psi == 0) and np.all(eta == 0)


def test_multiplier_recovered(small):
    sys, gs = small
    eta0 = np.array([0.7, -1.3])
    phi = gs.eigvecs[:, :2].T
    Psi, eta = solve_cp_system(gs, -eta0[:, None] * phi, np.zeros(2))
    assert np.abs(Psi).max() < 1e-12 and np.allclose(eta, eta0, atol=1e-12)


def test_random_rhs_residual(small, rng):
    sys, gs = small
    f, alpha = rng.standard_normal((2, 8)), rng.standard_normal(2)
    Psi, eta = solve_cp_system(gs, f, alpha)
    assert cp_residual(gs, Psi, eta, f, alpha) <= 1e-10


def test_permuted_assembly(small, rng):
    sys, gs = small
    f, alpha = rng.standard_normal((2, 8)), rng.standard_normal(2)
    a = solve_cp_system(gs, f, alpha)
    b = solve_cp_system(gs, f, alpha, order=[1, 0])
    assert np.abs(a[0] - b[0]).max() < 1e-10 and np.abs(a[1] - b[1]).max() < 1e-10


def test_symmetric_block_recovery(small, rng):
    sys, gs = small
    f, alpha = rng.standard_normal((2, 8)), np.zeros(2)
    Psi, _ = solve_cp_system(gs, f, alpha)
    phi = gs.eigvecs[:, :2].T
    e = gs.eigvals[:2]
    s01 = phi[0] @ Psi[1] + phi[1] @ Psi[0]
    assert s01 == pytest.approx((f[1] @ phi[0] - f[0] @ phi[1]) / (e[0] - e[1]), abs=1e-10)


def test_hartree_coupling_positive(small, rng):
    sys, gs = small
    n, N = 8, 2
    A = _saddle_matrix(gs)
    phi = gs.eigvecs[:, :N].T
    for _ in range(10):
        Psi = rng.standard_normal((N, n))
        x = np.concatenate([Psi.ravel(), np.zeros(N)])
        diag_part = sum(Psi[i] @ (gs.h0 - gs.eigvals[i] * np.eye(n)) @ Psi[i] for i in range(N))
        s = np.sum(phi * Psi, axis=0)
        coupling = x @ A @ x - diag_part
        assert coupling == pytest.approx(2 * s @ sys.kernel @ s, abs=1e-10)
        assert coupling >= -1e-12


def test_wrong_shapes(small):
    with pytest.raises(InputError):
        solve_cp_system(small[1], np.zeros((3, 8)), np.zeros(3))


def test_degenerate_rejected(ring_deg):
    sys, gs = ring_deg
    with pytest.raises(PreconditionError):
        mo_expand(gs, np.ones(sys.n_sites), 1)


def test_zero_series(well):
    sys, gs = well
    ms = mo_expand(gs, np.zeros(sys.n_sites), 3)
    assert all(np.abs(p).max() == 0 for p in ms.phi_k[1:]) and all(np.all(e == 0) for e in ms.eps_k[1:])


def test_matches_density_matrix_series(well, rng):
    sys, gs = well
    w = rng.standard_normal(sys.n_sites)
    ds = expand(gs, w, 3)
    ms = mo_expand(gs, w, 3)
    for k in range(1, 4):
        assert np.linalg.norm(ms.gamma_k(k) - ds.gamma_k[k]) < 1e-8


def test_first_order_eigenvalues(well, rng):
    sys, gs = well
    N = sys.n_electrons
    w = rng.standard_normal(sys.n_sites)
    ms = mo_expand(gs, w, 1)
    ds = expand(gs, w, 1)
    phi = gs.eigvecs[:, :N]
    formula = np.einsum("ai,a,ai->i", phi, w + sys.kernel @ ds.rho_k[1], phi)
    assert np.allclose(ms.eps_k[1], formula, atol=1e-10)
    b = 1e-5
    ep = solve_scf(sys, w=b * w, gamma_init=gs.gamma0).eigvals[:N]
    em = solve_scf(sys, w=-b * w, gamma_init=gs.gamma0).eigvals[:N]
    assert np.allclose(ms.eps_k[1], (ep - em) / (2 * b), atol=1e-7)


def test_orthogonality(well, rng):
    sys, gs = well
    ms = mo_expand(gs, rng.standard_normal(sys.n_sites), 4)
    d = orthogonality_defects(ms)
    assert d[0] <= 1e-12 and d[1] <= 1e-9 and max(d) <= 1e-8


def test_orthogonality_on_ring(ring_nd, rng):
    sys, gs = ring_nd
    # the ring instance has a doubly degenerate occupied level, which the
    # orbital formulation excludes
    with pytest.raises(PreconditionError):
        mo_expand(gs, rng.standard_normal(sys.n_sites), 2)
