import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhfpt.errors import InputError, NumericOverflowError
from rhfpt.model import (
    LatticeSystem,
    build_demo_system,
    build_ring,
    check_density_matrix,
    density_of,
    energy,
    mean_field,
    read_matrix,
    ring_kernel,
    synthetic_degenerate_state,
    system_from_spec,
    write_matrix,
)


def _projector(rng, n, k):
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q @ q.T


def _mixed_state(rng, n, N, parts=3):
    t = rng.dirichlet(np.ones(parts))
    return sum(ti * _projector(rng, n, N) for ti in t)


def _toy(n=2, kernel=None, v=None, N=1):
    kernel = np.eye(n) if kernel is None else kernel
    v = np.zeros(n) if v is None else v
    return LatticeSystem(np.zeros((n, n)), v, kernel, N)


# ---- construction -----------------------------------------------------------


def test_rejects_indefinite_kernel():
    with pytest.raises(InputError):
        _toy(kernel=np.diag([1.0, -1.0]))


def test_rejects_nonsymmetric_kinetic():
    with pytest.raises(InputError):
        LatticeSystem(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2), np.eye(2), 1)


def test_rejects_too_many_electrons():
    with pytest.raises(InputError):
        _toy(N=3)


def test_rejects_shape_mismatch():
    with pytest.raises(InputError):
        LatticeSystem(np.zeros((2, 2)), np.zeros(3), np.eye(2), 1)


def test_arrays_are_read_only():
    sys = _toy()
    with pytest.raises(ValueError):
        sys.kernel[0, 0] = 5.0


def test_density_matrix_checks():
    sys = _toy()
    check_density_matrix(sys, np.diag([1.0, 0.0]), in_KN=True)
    with pytest.raises(InputError):
        check_density_matrix(sys, np.diag([1.2, 0.0]))
    with pytest.raises(InputError):
        check_density_matrix(sys, np.diag([0.5, 0.0]), in_KN=True)


# ---- density, energy, mean field ---------------------------------------------


def test_density_examples():
    assert np.all(density_of(np.zeros((3, 3))) == 0)
    assert np.allclose(density_of(np.eye(3)), [1, 1, 1])
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    assert np.allclose(density_of(np.outer(v, v)), [0.5, 0.5])


def test_energy_examples(rng):
    sys = _toy()
    assert energy(sys, np.zeros((2, 2)), rng.standard_normal(2)) == 0.0
    assert energy(sys, np.diag([1.0, 0.0])) == pytest.approx(0.5, abs=1e-15)


def test_energy_overflow_names_term():
    sys = LatticeSystem(np.diag([1e308, 0.0]), np.zeros(2), np.eye(2), 1)
    with pytest.raises(NumericOverflowError) as exc:
        energy(sys, np.diag([1.0, 1.0]), np.array([1e308, 0.0]))
    assert "term" in exc.value.diagnostics


def test_mean_field_examples():
    sys = _toy(v=np.array([0.3, -0.2]))
    assert np.allclose(mean_field(sys, np.zeros(2)), np.diag([0.3, -0.2]))
    sys = _toy()
    assert np.allclose(mean_field(sys, np.array([1.0, 0.0])), np.diag([1.0, 0.0]))


def test_mean_field_spectrum_matches_ground_state(ring_nd):
    sys, gs = ring_nd
    assert np.allclose(np.linalg.eigvalsh(mean_field(sys, gs.rho0)), gs.eigvals, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_is_linear_in_w(seed):
    rng = np.random.default_rng(seed)
    sys = build_ring(8, 3)
    g = _mixed_state(rng, 8, 3)
    w = rng.standard_normal(8)
    assert energy(sys, g, w) - energy(sys, g) == pytest.approx(w @ density_of(g), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_density_map_duality(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((7, 7))
    g = a + a.T
    w = rng.standard_normal(7)
    assert np.trace(g @ np.diag(w)) == pytest.approx(w @ density_of(g), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_energy_convex(seed, t):
    rng = np.random.default_rng(seed)
    sys = build_ring(8, 3)
    g1, g2 = _mixed_state(rng, 8, 3), _mixed_state(rng, 8, 3)
    w = rng.standard_normal(8)
    lhs = energy(sys, t * g1 + (1 - t) * g2, w)
    assert lhs <= t * energy(sys, g1, w) + (1 - t) * energy(sys, g2, w) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_norms_are_dual(seed):
    rng = np.random.default_rng(seed)
    sys = build_ring(9, 2)
    w, rho = rng.standard_normal((2, 9))
    assert abs(w @ rho) <= sys.dual_norm(w) * sys.coulomb_norm(rho) * (1 + 1e-12)
    rho = np.linalg.solve(sys.kernel, w)
    assert w @ rho == pytest.approx(sys.dual_norm(w) * sys.coulomb_norm(rho), rel=1e-12)


# ---- builders -------------------------------------------------------------------


def test_ring_kernel_positive():
    assert np.linalg.eigvalsh(ring_kernel(8, 1.0))[0] > 0


def test_ring_ground_state_shift_invariant(ring_deg):
    sys, gs = ring_deg
    S = np.roll(np.eye(sys.n_sites), 1, axis=0)
    assert np.abs(S @ gs.h0 @ S.T - gs.h0).max() < 1e-10


def test_synthetic_cluster_is_sharp():
    sys, gamma0 = synthetic_degenerate_state(n_partial=3)
    h = sys.kinetic + np.diag(sys.v_ext + sys.kernel @ density_of(gamma0))
    e = np.linalg.eigvalsh(h)
    cluster = e[2:5]
    assert cluster.max() - cluster.min() < 1e-12


def test_synthetic_rejects_fractional_count():
    with pytest.raises(InputError):
        synthetic_degenerate_state(n_partial=2, occupations=[0.5, 0.2])


def test_unknown_kind():
    with pytest.raises(InputError):
        build_demo_system("torus")


def test_bad_builder_parameters():
    with pytest.raises(InputError):
        build_demo_system("ring", radius=3)


def test_matrix_roundtrip(tmp_path, rng):
    m = rng.standard_normal((5, 5))
    write_matrix(tmp_path / "m.csv", m)
    assert np.array_equal(read_matrix(tmp_path / "m.csv"), m)


def test_system_from_spec_explicit(tmp_path, rng):
    a = rng.standard_normal((4, 4))
    write_matrix(tmp_path / "t.csv", a + a.T)
    write_matrix(tmp_path / "k.csv", np.eye(4) * 0.3)
    sys = system_from_spec(
        {"kind": "explicit", "n_electrons": 2, "kinetic_path": "t.csv", "kernel_path": "k.csv"}, tmp_path
    )
    assert sys.n_sites == 4 and np.allclose(sys.kinetic, a + a.T)


def test_system_from_spec_rejects_unknown_key():
    with pytest.raises(InputError):
        system_from_spec({"kind": "ring", "n_site": 8})
