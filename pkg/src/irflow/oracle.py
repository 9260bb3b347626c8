"""Reference Hamiltonians built by brute force in a tensor-product Fock space.

Each mode gets its own ladder of size Nmax + 2, the Hamiltonian is formed there and
then restricted to total occupation <= Nmax. Intermediate states with one extra photon
are therefore present in every product, which is what the sparse assembly has to
reproduce. Only meant for a handful of modes.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .model import FockBasis, build_mode_grid
from .params import ModelParams

ORACLE_DIM_MAX = 300_000


def _ladder(d: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, d)), 1, shape=(d, d), format="csr", dtype=complex)


def _site_operator(op, m: int, M: int, d: int):
    out = sp.identity(1, dtype=complex, format="csr")
    eye = sp.identity(d, dtype=complex, format="csr")
    for i in range(M):
        out = sp.kron(out, op if i == m else eye, format="csr")
    return out


def tensor_hamiltonian(params: ModelParams, j: int, Nmax: int, P=None):
    """(H, occupations) in the product space of the first ``j`` shells, restricted to N <= Nmax."""
    grid = build_mode_grid(params)
    modes = grid.modes[: grid.shell_offsets[j]]
    M = len(modes)
    d = Nmax + 2
    if d**M > ORACLE_DIM_MAX:
        raise ValueError(f"tensor space {d}^{M} too large for the oracle")
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    n_full = d**M
    eye = sp.identity(n_full, dtype=complex, format="csr")
    b = _ladder(d)
    num = (b.conj().T @ b).tocsr()
    V = [P[c] * eye for c in range(3)]
    Hf = sp.csr_matrix((n_full, n_full), dtype=complex)
    sa = math.sqrt(params.alpha)
    for m, mode in enumerate(modes):
        bm = _site_operator(b, m, M, d)
        nm = _site_operator(num, m, M, d)
        amp = math.sqrt(mode.weight / mode.knorm)
        Hf = Hf + mode.knorm * nm
        for c in range(3):
            V[c] = V[c] - mode.k[c] * nm + sa * amp * (mode.eps[c] * bm.conj().T + np.conj(mode.eps[c]) * bm)
    H = 0.5 * sum(Vc @ Vc for Vc in V) + Hf
    occ = np.array(np.unravel_index(np.arange(n_full), (d,) * M)).T if M else np.zeros((1, 0), int)
    keep = np.nonzero(occ.sum(axis=1) <= Nmax)[0]
    return H.tocsr()[keep][:, keep], occ[keep]


def oracle_matrix(params: ModelParams, j: int, basis: FockBasis, P=None) -> np.ndarray:
    """Dense reference H^{sigma_j} in the ordering of ``basis``."""
    H, occ = tensor_hamiltonian(params, j, basis.Nmax, P)
    pos = {row.astype(np.int16).tobytes(): i for i, row in enumerate(occ)}
    perm = np.array([pos[s.tobytes()] for s in basis.states])
    return H.toarray()[np.ix_(perm, perm)]
