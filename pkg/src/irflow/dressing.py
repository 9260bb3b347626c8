"""Coherent (Weyl) dressing, the transformed Hamiltonian K = W H W^* and its
canonical form, and the intermediate operators of the two-step scale update.

A displacement with amplitudes ``f_m`` has generator ``G = sum_m f_m b_m^* - conj(f_m) b_m``
and acts as ``W b_m W^* = b_m - f_m``. The amplitudes of W_sigma(grad E) are

    f_m = alpha^(1/2) (grad E . eps_m) sqrt(w_m) / (|k_m|^(3/2) delta(khat_m)),
    delta(khat) = 1 - khat . grad E,

for modes inside the window and zero outside.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConsistencyFailure, DimOverflow, GradientTooLarge, TruncationWarning, WindowOutOfRange
from .model import (
    FockBasis,
    ModeGrid,
    assemble_fiber_hamiltonian,
    build_fock_basis,
    build_mode_grid,
    vector_potential,
)
from .params import ModelParams

DENSE_EXPM_MAX = 4000
REFERENCE_DIM_MAX = 20_000


@dataclass(frozen=True)
class CoherentDisplacement:
    """Amplitudes f_m on every grid mode (zero outside ``window``)."""

    amplitudes: np.ndarray = field(repr=False)
    window: tuple
    gradE: np.ndarray
    delta: np.ndarray = field(repr=False)
    grid: ModeGrid = field(repr=False, compare=False)

    @property
    def mean_photons(self) -> float:
        """sum |f_m|^2, the photon number of W Omega in the untruncated space."""
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def restricted(self, basis: FockBasis) -> np.ndarray:
        """Amplitudes of the modes carried by ``basis`` (in its local order)."""
        nz = np.nonzero(self.amplitudes)[0]
        if len(nz) and nz[-1] >= len(basis.modes):
            raise WindowOutOfRange("displacement reaches modes the basis does not carry")
        return self.amplitudes[basis.modes]


def displacement_coefficients(params: ModelParams, gradE, window, grid: ModeGrid = None) -> CoherentDisplacement:
    gradE = np.asarray(gradE, dtype=float)
    if np.linalg.norm(gradE) >= 1.0:
        raise GradientTooLarge(f"|grad E| = {np.linalg.norm(gradE):.6g} >= 1")
    grid = build_mode_grid(params) if grid is None else grid
    modes = grid.window_modes(window)
    n = len(grid)
    f = np.zeros(n, dtype=complex)
    delta = np.ones(n)
    if n:
        khat = grid.k / grid.knorm[:, None]
        delta = 1.0 - khat @ gradE
        assert np.all(delta > 0)
    for m in modes:
        mode = grid.modes[m]
        f[m] = (
            math.sqrt(params.alpha) * np.dot(gradE, mode.eps) * math.sqrt(mode.weight)
            / (mode.knorm**1.5 * delta[m])
        )
    return CoherentDisplacement(amplitudes=f, window=tuple(window), gradE=gradE, delta=delta, grid=grid)


def generator(coeffs: CoherentDisplacement, basis: FockBasis) -> sp.csr_matrix:
    """The anti-Hermitian G with W = exp(G), truncated to ``basis``."""
    f = coeffs.restricted(basis)
    G = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for loc, fm in enumerate(f):
        if fm != 0:
            m = int(basis.modes[loc])
            G = G + fm * basis.creator(m) - np.conj(fm) * basis.annihilator(m)
    return G.tocsr()


def boundary_weight(basis: FockBasis, v) -> float:
    """Fraction of ||v||^2 carried by states at the occupation cap."""
    v = np.asarray(v)
    total = float(np.vdot(v, v).real)
    if total == 0:
        return 0.0
    edge = v[basis.boundary_mask()]
    return float(np.vdot(edge, edge).real) / total


def apply_weyl(coeffs: CoherentDisplacement, v, basis: FockBasis, adjoint: bool = False,
               leak_tol: float = 1e-2) -> np.ndarray:
    """W v (or W^* v) via the action of the matrix exponential on a vector."""
    v = np.asarray(v, dtype=complex)
    G = generator(coeffs, basis)
    if G.nnz == 0:
        return v.copy()
    out = spla.expm_multiply(-G if adjoint else G, v)
    leak = boundary_weight(basis, out)
    if leak > leak_tol:
        warnings.warn(
            f"displaced vector carries {leak:.2e} of its weight at N = {basis.Nmax}",
            TruncationWarning, stacklevel=2,
        )
    return out


def weyl_operator(coeffs: CoherentDisplacement, basis: FockBasis) -> np.ndarray:
    """Dense W = exp(G) by scaling and squaring."""
    if basis.dim > DENSE_EXPM_MAX:
        raise DimOverflow(f"dense W requested at dim {basis.dim} > {DENSE_EXPM_MAX}")
    G = generator(coeffs, basis)
    if G.nnz == 0:
        return np.eye(basis.dim, dtype=complex)
    return sla.expm(G.toarray())


def transform_hamiltonian(H, coeffs: CoherentDisplacement, basis: FockBasis) -> np.ndarray:
    """K = W H W^* by dense conjugation, Hermitian-symmetrized."""
    W = weyl_operator(coeffs, basis)
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    K = W @ Hd @ W.conj().T
    return 0.5 * (K + K.conj().T)


# canonical form ---------------------------------------------------------------

@dataclass
class CanonicalPieces:
    Gamma: list
    Pi: list
    Escript: float
    beta: list
    Pi_mean: np.ndarray
    dispersion: sp.csr_matrix = field(repr=False)
    defect: float = math.nan


def _expect(v, M) -> complex:
    return np.vdot(v, M @ v) / np.vdot(v, v)


def _normalized(v):
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v)


def _shift_terms(coeffs: CoherentDisplacement, basis: FockBasis, modes):
    """-sum_m k_m (conj(f_m) b_m + f_m b_m^*) over ``modes`` (three components)."""
    grid = basis.grid
    out = [sp.csr_matrix((basis.dim, basis.dim), dtype=complex) for _ in range(3)]
    for m in modes:
        fm = coeffs.amplitudes[m]
        if fm == 0:
            continue
        op = np.conj(fm) * basis.annihilator(m) + fm * basis.creator(m)
        for c in range(3):
            if grid.modes[m].k[c] != 0:
                out[c] = out[c] - grid.modes[m].k[c] * op
    return [o.tocsr() for o in out]


def _dispersion(coeffs: CoherentDisplacement, basis: FockBasis) -> sp.csr_matrix:
    """sum_m |k_m| delta(khat_m) b_m^* b_m over the modes of ``basis``."""
    grid = basis.grid
    occ = basis.states.astype(float)
    w = grid.knorm[basis.modes] * coeffs.delta[basis.modes] if len(basis.modes) else np.zeros(0)
    return sp.diags((occ @ w).astype(complex), format="csr")


def _field_momentum(basis: FockBasis) -> list:
    occ = basis.states.astype(float)
    k = basis.grid.k[basis.modes] if len(basis.modes) else np.zeros((0, 3))
    return [sp.diags((occ @ k[:, c]).astype(complex), format="csr") for c in range(3)]


def _escript(params: ModelParams, coeffs: CoherentDisplacement, P) -> float:
    grid = coeffs.grid
    gradE = coeffs.gradE
    f2 = np.abs(coeffs.amplitudes) ** 2
    tail = float(np.sum(grid.knorm * coeffs.delta * f2)) if len(grid) else 0.0
    return 0.5 * float(P @ P) - 0.5 * float((P - gradE) @ (P - gradE)) - tail


def _square_half(ops) -> sp.csr_matrix:
    return (0.5 * (ops[0] @ ops[0] + ops[1] @ ops[1] + ops[2] @ ops[2])).tocsr()


def _pad_for(coeffs: CoherentDisplacement, basis: FockBasis, tol: float = 1e-14) -> int:
    s = max(coeffs.mean_photons, 1e-300)
    pad = 2
    # Poisson tail of the coherent state beyond pad extra photons
    while pad < 60 and math.sqrt(s**pad / math.factorial(pad)) * math.exp(s) > tol:
        pad += 1
    return pad


def conjugation_reference(params: ModelParams, basis: FockBasis, j: int, coeffs: CoherentDisplacement,
                          P=None, pad: int = None) -> tuple:
    """Matrix of W H^{sigma_j} W^* on ``basis`` computed in an enlarged Fock space.

    The conjugation is done with occupation cap ``Nmax + pad`` and then restricted
    to the states of ``basis``, so entries between states below the cap are free of
    the truncation error of the displacement. Returns (matrix, pad).
    """
    pad = _pad_for(coeffs, basis) if pad is None else pad
    big = build_fock_basis(basis.grid, basis.Nmax + pad, n_shells=basis.n_shells,
                           cap=REFERENCE_DIM_MAX)
    idx = basis.embedding(big)
    Hb = assemble_fiber_hamiltonian(params, big, j, P)
    Gb = generator(coeffs, big)
    E = np.zeros((big.dim, basis.dim), dtype=complex)
    E[idx, np.arange(basis.dim)] = 1.0
    X = spla.expm_multiply(-Gb, E) if Gb.nnz else E  # columns W^* e_t
    K = X.conj().T @ (Hb @ X)
    return 0.5 * (K + K.conj().T), pad


def interior_block(basis: FockBasis, depth: int = 1) -> np.ndarray:
    """Indices of states with total occupation <= Nmax - depth."""
    return np.nonzero(basis.total_occupation <= basis.Nmax - depth)[0]


def _block_defect(A, B, idx) -> float:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    if len(idx) == 0:
        return 0.0
    return float(np.max(np.abs(A[np.ix_(idx, idx)] - B[np.ix_(idx, idx)])))


def canonical_form(params: ModelParams, gradE, basis: FockBasis, j: int, Phi, P=None,
                   check: bool = False, tol: float = 1e-8, pad: int = None):
    """Pieces of K^{sigma_j} = Gamma^2/2 + sum |k| delta b^* b + Escript and the
    assembled K'.

    Pi is the Bogoliubov-shifted beta = P^f - alpha^(1/2) A^{sigma_j} with its vacuum
    expectation removed; Gamma = Pi - <Pi>_Phi. With ``check`` the assembled K' is
    compared with an enlarged-space conjugation W H W^* on the interior block
    (states below the cap, where operator products are exact); a defect above ``tol``
    raises ConsistencyFailure.
    """
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    coeffs = displacement_coefficients(params, gradE, (0, j), basis.grid)
    Phi = _normalized(Phi)
    sa = math.sqrt(params.alpha)
    Pf = _field_momentum(basis)
    A = vector_potential(basis, (0, j))
    beta = [(Pf[c] - sa * A[c]).tocsr() for c in range(3)]
    shift = _shift_terms(coeffs, basis, basis.grid.window_modes((0, j)))
    Pi = [(Pf[c] + shift[c] - sa * A[c]).tocsr() for c in range(3)]
    mean = np.array([_expect(Phi, Pi[c]).real for c in range(3)])
    eye = sp.identity(basis.dim, dtype=complex, format="csr")
    Gamma = [(Pi[c] - mean[c] * eye).tocsr() for c in range(3)]
    disp = _dispersion(coeffs, basis)
    Esc = _escript(params, coeffs, P)
    K = (_square_half(Gamma) + disp + Esc * eye).tocsr()
    pieces = CanonicalPieces(Gamma=Gamma, Pi=Pi, Escript=Esc, beta=beta, Pi_mean=mean, dispersion=disp)
    if check:
        ref, _ = conjugation_reference(params, basis, j, coeffs, P, pad)
        pieces.defect = _block_defect(K, ref, interior_block(basis))
        if pieces.defect > tol:
            raise ConsistencyFailure(
                f"canonical form differs from W H W^* by {pieces.defect:.3e} > {tol:.1e}"
            )
    return pieces, K


# intermediate step ------------------------------------------------------------

@dataclass
class IntermediateOperators:
    L: list
    Ivec: np.ndarray
    Ehat: float
    Escript: float
    Khat: sp.csr_matrix = field(repr=False)
    K: sp.csr_matrix = field(repr=False)
    dK: sp.csr_matrix = field(repr=False)
    Gamma: list = field(repr=False)
    Z: float = 0.0
    Zl: np.ndarray = field(default=None, repr=False)
    defect: float = math.nan


def intermediate_operators(params: ModelParams, gradE_j, j: int, Phi_j, basis: FockBasis = None,
                           P=None, check: bool = False, tol: float = 1e-8, pad: int = None):
    """L, I, Ehat and Khat^{sigma_{j+1}} for the update from scale j to j+1.

    Everything lives on ``basis`` (default: the basis of F_{sigma_{j+1}}); ``Phi_j``
    may be given on the smaller basis of scale j and is then embedded. I is a
    constant 3-vector (both of its window integrals are c-numbers). ``dK`` is
    Khat - Ehat + Escript - K with K the canonical form of K^{sigma_j} on the same
    space, assembled as 1/2 [Gamma.(L+I) + h.c.] + 1/2 (L+I)^2.
    """
    if not 0 <= j < params.J:
        raise WindowOutOfRange(f"intermediate step needs j+1 <= J, got j={j}")
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    grid = basis.grid if basis is not None else build_mode_grid(params)
    if basis is None:
        basis = build_fock_basis(grid, params.Nmax, n_shells=j + 1, cap=params.dim_cap)
    Phi_j = np.asarray(Phi_j, dtype=complex)
    if Phi_j.shape[0] != basis.dim:
        small = build_fock_basis(grid, basis.Nmax, n_shells=j, cap=params.dim_cap)
        Phi_j = small.embed(Phi_j, basis)
    pieces, K = canonical_form(params, gradE_j, basis, j, Phi_j, P)
    wide = displacement_coefficients(params, gradE_j, (0, j + 1), grid)
    shell = grid.window_modes((j, j + 1))
    sa = math.sqrt(params.alpha)
    a = vector_potential(basis, (j, j + 1))
    shift = _shift_terms(wide, basis, shell)
    L = [(shift[c] - sa * a[c]).tocsr() for c in range(3)]

    f = wide.amplitudes[list(shell)]
    kk = grid.k[list(shell)] if len(shell) else np.zeros((0, 3))
    ee = grid.eps[list(shell)] if len(shell) else np.zeros((0, 3))
    amp = grid.amplitudes[list(shell)] if len(shell) else np.zeros(0)
    Ivec = (kk.T @ (np.abs(f) ** 2)).real + sa * 2.0 * (ee.T @ (amp * np.conj(f))).real
    Ehat = _escript(params, wide, P)
    # vacuum two-point function of the creation part of L
    g = -(kk * f[:, None]) - sa * amp[:, None] * ee
    Zl = np.sum(np.abs(g) ** 2, axis=0)
    Z = float(np.sum(Zl))

    eye = sp.identity(basis.dim, dtype=complex, format="csr")
    X = [(L[c] + Ivec[c] * eye).tocsr() for c in range(3)]
    Gam = pieces.Gamma
    disp = _dispersion(wide, basis)
    shifted = [(Gam[c] + X[c]).tocsr() for c in range(3)]
    Khat = (_square_half(shifted) + disp + Ehat * eye).tocsr()
    cross = sum(0.5 * (Gam[c] @ X[c] + X[c] @ Gam[c]) for c in range(3))
    dK = (cross + _square_half(X)).tocsr()
    out = IntermediateOperators(L=L, Ivec=Ivec, Ehat=Ehat, Escript=pieces.Escript, Khat=Khat, K=K,
                                dK=dK, Gamma=Gam, Z=Z, Zl=Zl)
    if check:
        ref, _ = conjugation_reference(params, basis, j + 1, wide, P, pad)
        out.defect = _block_defect(Khat, ref, interior_block(basis))
        if out.defect > tol:
            raise ConsistencyFailure(
                f"intermediate Hamiltonian differs from W H W^* by {out.defect:.3e} > {tol:.1e}"
            )
    return out
