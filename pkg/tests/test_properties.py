import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

from irflow.cli import _fmt, parse_config
from irflow.dressing import apply_weyl, displacement_coefficients, weyl_operator
from irflow.flow import gradient_feynman_hellmann
from irflow.model import (
    assemble_fiber_hamiltonian,
    build_fock_basis,
    build_mode_grid,
    fock_dimension,
    hermiticity_defect,
    polarization_basis,
)
from irflow.params import ModelParams
from irflow.spectral import ground_state

from conftest import small_params

coord = st.floats(-0.19, 0.19, allow_nan=False)
momentum = st.tuples(coord, coord, coord)
coupling = st.floats(0.0, 0.02, allow_nan=False)


@given(st.integers(0, 6), st.integers(0, 4))
def test_fock_dimension_is_binomial(M, Nmax):
    assert fock_dimension(M, Nmax) == math.comb(M + Nmax, Nmax)


@given(st.tuples(coord, coord, coord).filter(lambda k: np.linalg.norm(k) > 1e-3))
def test_polarizations_orthonormal_and_transverse(k):
    e1, e2 = polarization_basis(np.array(k))
    khat = np.array(k) / np.linalg.norm(k)
    G = np.array([[np.vdot(a, b) for b in (e1, e2)] for a in (e1, e2)])
    np.testing.assert_allclose(G, np.eye(2), atol=1e-12)
    assert abs(np.dot(e1, khat)) <= 1e-12 and abs(np.dot(e2, khat)) <= 1e-12


@given(momentum, coupling)
def test_hamiltonian_hermitian_and_bounded_below(P, alpha):
    p = small_params(P=P, alpha=alpha)
    basis = build_fock_basis(build_mode_grid(p), 2, n_shells=2)
    H = assemble_fiber_hamiltonian(p, basis, 2)
    assert hermiticity_defect(H) <= 1e-14
    # H = V^2/2 + H_f >= 0
    assert np.linalg.eigvalsh(H.toarray())[0] >= -1e-12


@given(momentum)
def test_free_energy_is_kinetic(P):
    p = small_params(P=P, alpha=0.0)
    basis = build_fock_basis(build_mode_grid(p), 2, n_shells=2)
    gs = ground_state(assemble_fiber_hamiltonian(p, basis, 2), p.eig_tol)
    assert abs(gs.energy - 0.5 * float(np.dot(P, P))) <= 1e-12
    np.testing.assert_allclose(gradient_feynman_hellmann(p, basis, 2, gs.vector), P, atol=1e-12)


@given(momentum, coupling)
def test_ground_energy_below_free(P, alpha):
    # variational bound with the vacuum: E <= <Omega, H Omega>
    p = small_params(P=P, alpha=alpha)
    basis = build_fock_basis(build_mode_grid(p), 2, n_shells=2)
    H = assemble_fiber_hamiltonian(p, basis, 2)
    E = ground_state(H, p.eig_tol).energy
    assert E <= H[0, 0].real + 1e-14


@given(momentum, st.integers(0, 2**31 - 1))
def test_weyl_unitary(gradE, seed):
    p = small_params(alpha=0.01)
    grid = build_mode_grid(p)
    basis = build_fock_basis(grid, 3, n_shells=2)
    c = displacement_coefficients(p, gradE, (0, 2), grid)
    W = weyl_operator(c, basis)
    np.testing.assert_allclose(W.conj().T @ W, np.eye(basis.dim), atol=1e-12)
    v = np.random.default_rng(seed).normal(size=basis.dim) + 0j
    back = apply_weyl(c, apply_weyl(c, v, basis), basis, adjoint=True)
    np.testing.assert_allclose(back, v, atol=1e-10)


@given(momentum, coupling, st.tuples(coord, coord, st.floats(0.2, 1.0)))
def test_spectrum_independent_of_gauge_axis(P, alpha, axis):
    p = small_params(P=P, alpha=alpha, n_theta=2, n_phi=2, J=1)
    q = p.replace(gauge_axis=axis)
    ev = []
    for par in (p, q):
        basis = build_fock_basis(build_mode_grid(par), 2, n_shells=1)
        ev.append(np.linalg.eigvalsh(assemble_fiber_hamiltonian(par, basis, 1).toarray()))
    np.testing.assert_allclose(ev[0], ev[1], atol=1e-12)


@given(momentum, st.tuples(coord, coord, coord))
def test_free_i4_margin_positive(P, k):
    # E_{P-k} - E_P + |k|/3 = -P.k + |k|^2/2 + |k|/3 > 0 for |P| < 1/3
    P, k = np.array(P), np.array(k)
    assume(np.linalg.norm(k) > 1e-6 and np.linalg.norm(P) < 1 / 3)
    assert 0.5 * (P - k) @ (P - k) - 0.5 * P @ P + np.linalg.norm(k) / 3 > 0


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(_fmt(x)) == x


@given(momentum, coupling, st.integers(1, 5), st.integers(1, 3))
def test_config_round_trip(tmp_path_factory, P, alpha, J, Nmax):
    path = tmp_path_factory.mktemp("cfg") / "run.ini"
    text = f"alpha = {_fmt(alpha)}\nP = {', '.join(_fmt(x) for x in P)}\nJ = {J}\nNmax = {Nmax}\n"
    path.write_text(text, encoding="utf-8")
    cfg = parse_config(path)
    assert cfg.model == ModelParams(alpha=alpha, P=P, J=J, Nmax=Nmax)
