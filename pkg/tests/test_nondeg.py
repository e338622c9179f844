import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhfpt.errors import InputError, PreconditionError
from rhfpt.ground_state import ground_state_from_gamma, solve_scf
from rhfpt.model import density_of, synthetic_degenerate_state
from rhfpt.nondeg_pt import (
    ContourSpec,
    apply_response_L,
    compositions,
    contour_q,
    contour_q_eigbasis,
    divided_difference_q,
    expand,
    hellmann_feynman_defects,
    solve_screened,
)
from rhfpt.validation import random_gapped_state
from rhfpt.wigner import fit_slope


def _projector_below(h, N):
    _, V = np.linalg.eigh(h)
    return V[:, :N] @ V[:, :N].T


# ---- Q^(k) --------------------------------------------------------------------


def test_two_level_first_order():
    eps = np.array([-1.0, 1.0])
    v = np.array([[0.0, 1.0], [1.0, 0.0]])
    q, _ = contour_q_eigbasis(eps, [v], ContourSpec(-1.0, 1.0))
    assert np.allclose(q, [[0.0, -0.5], [-0.5, 0.0]], atol=1e-13)
    # finite difference of the spectral projector
    t = 1e-5
    fd = (_projector_below(np.diag(eps) + t * v, 1) - _projector_below(np.diag(eps) - t * v, 1)) / (2 * t)
    assert np.allclose(q, fd, atol=1e-9)


def test_zero_argument_gives_zero(ring_nd, rng):
    sys, gs = ring_nd
    v = rng.standard_normal(sys.n_sites)
    for k in (1, 2, 3):
        vs = [v] * k
        vs[k // 2] = np.zeros(sys.n_sites)
        assert np.abs(contour_q(gs, vs)).max() < 1e-14


@pytest.mark.parametrize("seed", range(5))
def test_second_order_matches_divided_differences(seed):
    sys, gs = random_gapped_state(seed, n_sites=6, n_electrons=2)
    rng = np.random.default_rng(seed)
    vs = list(rng.standard_normal((2, 6)))
    d = contour_q(gs, vs) - divided_difference_q(gs.h0, 2, vs)
    assert np.abs(d).max() < 1e-9


def test_divided_differences_match_projector_derivative(rng):
    sys, gs = random_gapped_state(3, n_sites=6, n_electrons=2)
    v = rng.standard_normal(6)
    t = 1e-4
    P = lambda s: _projector_below(gs.h0 + s * np.diag(v), 2)
    fd2 = (P(t) - 2 * P(0) + P(-t)) / (2 * t * t)
    assert np.abs(divided_difference_q(gs.h0, 2, [v, v]) - fd2).max() < 1e-6


def test_first_order_trace_free(ring_nd, rng):
    sys, gs = ring_nd
    for k in (1, 2):
        vs = list(rng.standard_normal((k, sys.n_sites)))
        assert abs(np.trace(contour_q(gs, vs))) < 1e-12


def test_cyclic_sum_trace_free(ring_nd, rng):
    sys, gs = ring_nd
    vs = list(rng.standard_normal((3, sys.n_sites)))
    total = sum(np.trace(contour_q(gs, vs[j:] + vs[:j])) for j in range(3))
    assert abs(total) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_multilinear(seed, a, b):
    sys, gs = random_gapped_state(seed % 7, n_sites=6, n_electrons=2)
    rng = np.random.default_rng(seed)
    u, v, x = rng.standard_normal((3, 6))
    lhs = contour_q(gs, [x, a * u + b * v])
    rhs = a * contour_q(gs, [x, u]) + b * contour_q(gs, [x, v])
    assert np.abs(lhs - rhs).max() < 1e-10


def test_contour_must_enclose_occupied(ring_nd):
    sys, gs = ring_nd
    with pytest.raises(PreconditionError):
        contour_q(gs, [np.ones(sys.n_sites)], ContourSpec(gs.eigvals[0], 0.1))


def test_degenerate_state_rejected(ring_deg):
    sys, gs = ring_deg
    with pytest.raises(PreconditionError):
        contour_q(gs, [np.ones(sys.n_sites)])


def test_empty_argument_list(ring_nd):
    with pytest.raises(InputError):
        contour_q(ring_nd[1], [])


# ---- response map -------------------------------------------------------------


def test_response_zero(ring_nd):
    sys, gs = ring_nd
    assert np.all(apply_response_L(gs, np.zeros(sys.n_sites)) == 0)


def test_response_symmetric_and_positive(ring_nd, rng):
    sys, gs = ring_nd
    K = sys.kernel
    for _ in range(10):
        r1, r2 = rng.standard_normal((2, sys.n_sites))
        L1, L2 = apply_response_L(gs, r1), apply_response_L(gs, r2)
        assert abs(L1 @ K @ r2 - L2 @ K @ r1) < 1e-10
        assert L1 @ K @ r1 >= -1e-12


def test_screened_zero(ring_nd):
    sys, gs = ring_nd
    assert np.all(solve_screened(gs, np.zeros(sys.n_sites)) == 0)


def test_screened_weak_kernel(rng):
    sys, g0 = synthetic_degenerate_state(n_sites=8, n_full=2, n_partial=1, occupations=[1.0], kernel_scale=1e-9)
    gs = ground_state_from_gamma(sys, g0)
    rhs = rng.standard_normal(8)
    assert np.allclose(solve_screened(gs, rhs), rhs, atol=1e-7)


def test_screened_residual(ring_nd, rng):
    sys, gs = ring_nd
    rhs = rng.standard_normal(sys.n_sites)
    x, info = solve_screened(gs, rhs, return_info=True)
    assert np.abs(x + apply_response_L(gs, x) - rhs).max() <= 1e-9
    assert info.method == "cg" and info.iterations <= sys.n_sites


# ---- series -------------------------------------------------------------------------


def test_compositions():
    assert sorted(compositions(4, 2)) == [(1, 3), (2, 2), (3, 1)]
    assert sum(len(list(compositions(5, p))) for p in range(1, 6)) == 16


def test_first_order_energy(ring_nd, rng):
    sys, gs = ring_nd
    w = rng.standard_normal(sys.n_sites)
    assert expand(gs, w, 1).energy_k[1] == pytest.approx(gs.rho0 @ w, rel=1e-14)


def test_zero_perturbation(ring_nd):
    sys, gs = ring_nd
    s = expand(gs, np.zeros(sys.n_sites), 3)
    assert all(np.all(g == 0) for g in s.gamma_k[1:]) and all(e == 0 for e in s.energy_k[1:])


def test_traces_and_hellmann_feynman(ring_nd, rng):
    sys, gs = ring_nd
    s = expand(gs, rng.standard_normal(sys.n_sites), 4)
    assert max(abs(np.trace(g)) for g in s.gamma_k[1:]) < 1e-10
    assert max(hellmann_feynman_defects(s)) < 1e-10


def test_density_coefficients_consistent(ring_nd, rng):
    sys, gs = ring_nd
    s = expand(gs, rng.standard_normal(sys.n_sites), 3)
    for k in range(1, 4):
        assert np.allclose(density_of(s.gamma_k[k]), s.rho_k[k], atol=1e-11)


def test_idempotency_defect_slope(ring_nd, rng):
    sys, gs = ring_nd
    w = rng.standard_normal(sys.n_sites)
    w /= sys.dual_norm(w)
    s = expand(gs, w, 2)
    betas = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    d = [np.linalg.norm(g @ g - g) for g in (s.gamma_sum(b, 2) for b in betas)]
    slope, _ = fit_slope(betas, d, 1e-13, discard_largest=False)
    assert abs(slope - 3) < 0.3


def test_series_against_scf(ring_nd, rng):
    sys, gs = ring_nd
    w = rng.standard_normal(sys.n_sites)
    w /= sys.dual_norm(w)
    s = expand(gs, w, 1)
    betas = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    err = [np.linalg.norm(solve_scf(sys, w=b * w, gamma_init=gs.gamma0).gamma0 - s.gamma_sum(b, 1)) for b in betas]
    slope, _ = fit_slope(betas, err, 1e-12, discard_largest=False)
    assert abs(slope - 2) < 0.3


def test_order_cap(ring_nd):
    sys, gs = ring_nd
    with pytest.raises(InputError):
        expand(gs, np.ones(sys.n_sites), 7)
