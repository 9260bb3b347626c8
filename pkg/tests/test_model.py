import math

import numpy as np
import pytest
from scipy import integrate

from irflow.errors import DimOverflow, InvalidParams, WindowOutOfRange, ZeroMomentum
from irflow.model import (
    assemble_delta_H,
    assemble_fiber_hamiltonian,
    assemble_field_operators,
    build_fock_basis,
    build_mode_grid,
    fock_dimension,
    free_energies,
    full_window,
    hermiticity_defect,
    polarization_basis,
    vector_potential,
)
from irflow.oracle import oracle_matrix
from irflow.params import ModelParams

from conftest import small_params


# polarization ---------------------------------------------------------------

def test_polarization_along_z_uses_fallback_axis():
    ep, em = polarization_basis((0, 0, 1))
    np.testing.assert_allclose(ep, [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(em, [0, 1, 0], atol=1e-15)


def test_polarization_along_x():
    ep, em = polarization_basis((1, 0, 0))
    np.testing.assert_allclose(ep, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(em, [0, -1, 0], atol=1e-15)
    k = np.array([1.0, 0, 0])
    assert abs(np.dot(k, ep)) < 1e-15 and abs(np.dot(k, em)) < 1e-15
    assert abs(np.vdot(ep, em)) < 1e-15


def test_polarization_zero_momentum():
    with pytest.raises(ZeroMomentum):
        polarization_basis((0, 0, 0))


# grid -----------------------------------------------------------------------

def test_grid_counts_single_direction():
    grid = build_mode_grid(ModelParams(J=1, n_radial=1, n_theta=1, n_phi=1))
    assert len(grid) == 2
    assert grid.modes[0].pol == 1 and grid.modes[1].pol == -1
    np.testing.assert_array_equal(grid.modes[0].k, grid.modes[1].k)


def test_grid_shell_boundaries():
    p = ModelParams(J=3, Lambda=1.0, epsilon=0.5)
    assert p.sigmas == [1.0, 0.5, 0.25, 0.125]
    grid = build_mode_grid(p)
    for m in grid.modes:
        assert p.sigma(m.shell + 1) < m.knorm <= p.sigma(m.shell)
        assert m.weight > 0


def test_grid_modes_per_shell():
    p = ModelParams(J=2, n_radial=2, n_theta=3, n_phi=4)
    grid = build_mode_grid(p)
    for j in range(2):
        assert len(grid.shell_slice(j)) == 2 * 3 * 4 * 2


def test_shell_weights_match_annulus_volume():
    # reference: adaptive quadrature of 4 pi r^2 over each annulus
    p = ModelParams(J=2, n_radial=3, n_theta=2, n_phi=2)
    grid = build_mode_grid(p)
    for j in range(2):
        ref, _ = integrate.quad(lambda r: 4 * math.pi * r * r, p.sigma(j + 1), p.sigma(j))
        assert abs(grid.shell_weight(j) - ref) <= 1e-12 * ref
        assert abs(ref - 4 * math.pi / 3 * (p.sigma(j) ** 3 - p.sigma(j + 1) ** 3)) < 1e-14


def test_one_radial_node_is_midpoint_accurate():
    # a single Gauss node is exact for degree 1 only; error of r^2 rule is (h^3/12) * 4 pi
    p = ModelParams(J=1, n_radial=1)
    grid = build_mode_grid(p)
    lo, hi = p.sigma(1), p.sigma(0)
    exact = 4 * math.pi / 3 * (hi**3 - lo**3)
    assert abs(grid.shell_weight(0) - exact) == pytest.approx(4 * math.pi * (hi - lo) ** 3 / 12, rel=1e-10)


def test_grid_invalid_epsilon():
    with pytest.raises(InvalidParams):
        ModelParams(epsilon=1.0)


# Fock basis -----------------------------------------------------------------

@pytest.mark.parametrize("M,Nmax,dim", [(2, 2, 6), (1, 0, 1), (4, 3, 35)])
def test_fock_dimension(M, Nmax, dim):
    assert fock_dimension(M, Nmax) == dim


def test_fock_basis_enumeration_oracle():
    # oracle: brute-force all occupation vectors of 4 modes with entries 0..3
    grid = build_mode_grid(small_params(J=2))
    basis = build_fock_basis(grid, 3)
    brute = {occ for occ in np.ndindex(4, 4, 4, 4) if sum(occ) <= 3}
    assert basis.dim == len(brute) == 35
    assert {tuple(int(x) for x in s) for s in basis.states} == brute
    assert not basis.states[0].any()


def test_fock_basis_cap():
    grid = build_mode_grid(ModelParams(J=2))
    with pytest.raises(DimOverflow):
        build_fock_basis(grid, 3, cap=100)


def test_fock_basis_deterministic():
    grid = build_mode_grid(small_params())
    a = build_fock_basis(grid, 2)
    b = build_fock_basis(grid, 2)
    np.testing.assert_array_equal(a.states, b.states)


def test_canonical_commutator_below_cap():
    grid = build_mode_grid(small_params())
    basis = build_fock_basis(grid, 3)
    inner = basis.total_occupation <= basis.Nmax - 1
    for m in range(len(grid)):
        for n in range(len(grid)):
            C = (basis.annihilator(m) @ basis.creator(n) - basis.creator(n) @ basis.annihilator(m)).toarray()
            block = C[np.ix_(inner, inner)]
            np.testing.assert_allclose(block, np.eye(inner.sum()) * (m == n), atol=1e-14)


# field operators ------------------------------------------------------------

def test_field_operators_vacuum_column():
    grid = build_mode_grid(small_params())
    basis = build_fock_basis(grid, 2)
    fo = assemble_field_operators(grid, basis, full_window(basis))
    for M in (fo.Hf, fo.Nf, *fo.Pf):
        assert abs(M[:, 0]).max() == 0


def test_single_mode_vector_potential_tridiagonal():
    # hand-built 3x3 oracle: A_c = amp (e_c b^* + conj(e_c) b) on |0>,|1>,|2>
    p = ModelParams(J=1, n_radial=1, n_theta=1, n_phi=1)
    grid = build_mode_grid(p)
    grid.shell_offsets = [0, 1]
    grid.modes = grid.modes[:1]
    basis = build_fock_basis(grid, 2)
    mode = grid.modes[0]
    amp = math.sqrt(mode.weight / mode.knorm)
    b = np.diag([1.0, math.sqrt(2.0)], 1)
    A = vector_potential(basis, (0, 1))
    for c in range(3):
        ref = amp * (mode.eps[c] * b.T + np.conj(mode.eps[c]) * b)
        np.testing.assert_allclose(A[c].toarray(), ref, atol=1e-15)


def test_empty_window_vector_potential_is_zero():
    grid = build_mode_grid(small_params())
    basis = build_fock_basis(grid, 2)
    for Ac in vector_potential(basis, (1, 1)):
        assert Ac.nnz == 0 or abs(Ac).max() == 0


def test_window_outside_basis():
    grid = build_mode_grid(small_params())
    basis = build_fock_basis(grid, 2, n_shells=1)
    with pytest.raises(WindowOutOfRange):
        vector_potential(basis, (0, 2))


def test_diagonal_operators_commute():
    grid = build_mode_grid(small_params())
    basis = build_fock_basis(grid, 2)
    fo = assemble_field_operators(grid, basis, full_window(basis))
    ops = [fo.Hf, fo.Nf, *fo.Pf]
    for X in ops:
        for Y in ops:
            assert abs(X @ Y - Y @ X).max() == 0


def test_vacuum_A_squared_window_sum():
    # <Omega, (A|window)^2 Omega> = sum_window w/|k| |eps|^2 = sum 2 w/|k| per momentum
    p = small_params(J=3)
    grid = build_mode_grid(p)
    basis = build_fock_basis(grid, 2)
    for j in range(3):
        A = vector_potential(basis, (j, j + 1))
        val = sum(np.vdot(basis.vacuum(), Ac @ (Ac @ basis.vacuum())).real for Ac in A)
        modes = grid.shell_slice(j)
        ref = sum(grid.modes[m].weight / grid.modes[m].knorm for m in modes)
        assert val == pytest.approx(ref, rel=1e-13)


# Hamiltonians ---------------------------------------------------------------

def test_free_hamiltonian_diagonal():
    p = small_params(alpha=0.0)
    grid = build_mode_grid(p)
    basis = build_fock_basis(grid, 2)
    H = assemble_fiber_hamiltonian(p, basis, 2)
    ref = []
    for s in basis.states:
        pf = s @ grid.k
        ref.append(0.5 * np.dot(p.P_vec - pf, p.P_vec - pf) + s @ grid.knorm)
    np.testing.assert_allclose(H.toarray(), np.diag(ref), atol=1e-15)
    np.testing.assert_allclose(free_energies(p, basis), ref, atol=1e-15)


def test_j0_is_free_regardless_of_alpha():
    p = small_params(alpha=0.3)
    grid = build_mode_grid(p)
    basis = build_fock_basis(grid, 2)
    H = assemble_fiber_hamiltonian(p, basis, 0)
    H0 = assemble_fiber_hamiltonian(p.replace(alpha=0.0), basis, 0)
    assert abs(H - H0).max() == 0


@pytest.mark.parametrize("j", [1, 2])
def test_hamiltonian_matches_tensor_oracle(j):
    p = small_params(alpha=0.05, P=(0.1, 0.05, 0.02))
    basis = build_fock_basis(build_mode_grid(p), 2, n_shells=j)
    H = assemble_fiber_hamiltonian(p, basis, j).toarray()
    assert np.max(np.abs(H - oracle_matrix(p, j, basis))) < 1e-13


def test_two_mode_spectrum_frozen():
    # frozen from the tensor-product oracle, dense eigh (J=1, 2 modes, Nmax=2, alpha=0.01)
    p = small_params()
    basis = build_fock_basis(build_mode_grid(p), 2, n_shells=1)
    w = np.linalg.eigvalsh(assemble_fiber_hamiltonian(p, basis, 1).toarray())
    assert w[0] == pytest.approx(0.06620632398775748, abs=1e-12)
    assert w[1] == pytest.approx(0.9954977796076929, abs=1e-12)


def test_hermitian():
    p = ModelParams()
    basis = build_fock_basis(build_mode_grid(p), p.Nmax, n_shells=3)
    assert hermiticity_defect(assemble_fiber_hamiltonian(p, basis, 3)) <= 1e-12
    assert hermiticity_defect(assemble_delta_H(p, basis, 2)) <= 1e-12


def test_delta_H_zero_at_alpha_zero():
    p = small_params(alpha=0.0)
    basis = build_fock_basis(build_mode_grid(p), 2)
    dH = assemble_delta_H(p, basis, 1)
    assert dH.nnz == 0 or abs(dH).max() == 0


def test_delta_H_identity_three_modes():
    p = ModelParams(J=2, n_radial=1, n_theta=1, n_phi=1, Nmax=3, alpha=0.02)
    basis = build_fock_basis(build_mode_grid(p), 3)
    for j in range(2):
        diff = assemble_fiber_hamiltonian(p, basis, j + 1) - assemble_fiber_hamiltonian(p, basis, j) \
            - assemble_delta_H(p, basis, j)
        assert abs(diff).max() <= 1e-12


def test_delta_H_vacuum_expectation():
    p = small_params(Nmax=3)
    basis = build_fock_basis(build_mode_grid(p), 3)
    dH = assemble_delta_H(p, basis, 1)
    a = vector_potential(basis, (1, 2))
    om = basis.vacuum()
    lhs = np.vdot(om, dH @ om).real
    rhs = 0.5 * p.alpha * sum(np.vdot(om, ac @ (ac @ om)).real for ac in a)
    assert lhs == pytest.approx(rhs, rel=1e-13) and lhs > 0


def test_delta_H_window_range():
    p = small_params()
    basis = build_fock_basis(build_mode_grid(p), 2)
    with pytest.raises(WindowOutOfRange):
        assemble_delta_H(p, basis, 2)


def test_gauge_rotation_leaves_spectrum():
    # a different polarization reference axis is a change of basis in each mode pair
    p = small_params(alpha=0.05)
    q = p.replace(gauge_axis=(0.3, 0.4, 0.866))
    basis_p = build_fock_basis(build_mode_grid(p), 2)
    basis_q = build_fock_basis(build_mode_grid(q), 2)
    wp = np.linalg.eigvalsh(assemble_fiber_hamiltonian(p, basis_p, 2).toarray())
    wq = np.linalg.eigvalsh(assemble_fiber_hamiltonian(q, basis_q, 2).toarray())
    np.testing.assert_allclose(wp, wq, atol=1e-12)


def test_params_region():
    with pytest.raises(InvalidParams, match="region"):
        ModelParams(P=(0.4, 0.0, 0.0))
    with pytest.raises(InvalidParams):
        ModelParams(rho_minus=0.5, mu=0.4)
    with pytest.raises(InvalidParams):
        ModelParams(epsilon=0.6)
