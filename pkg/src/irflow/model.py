"""Photon mode grid, truncated Fock basis and the fiber Hamiltonians.

Mode operators are collocated as ``b_m = sqrt(w_m) b(k_m)`` so that
``[b_m, b_n^*] = delta_mn`` holds exactly; the continuum kernel ``1/sqrt|k|`` of the
vector potential then sits in the amplitudes ``sqrt(w_m / |k_m|)``.

All operators are returned as complex ``scipy.sparse.csr_matrix`` objects.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimOverflow, HermiticityError, InvalidParams, WindowOutOfRange, ZeroMomentum
from .params import ModelParams

_PARALLEL_TOL = 1e-12


def polarization_basis(k, reference_axis=(0.0, 0.0, 1.0)):
    """Two real transverse unit polarization vectors for photon momentum ``k``.

    ``eps_plus`` is the component of the reference axis orthogonal to ``k``
    (normalized); ``eps_minus = khat x eps_plus``. When ``k`` is parallel to the
    reference axis the next coordinate axis (x, then y) is used instead.
    """
    k = np.asarray(k, dtype=float)
    knorm = np.linalg.norm(k)
    if knorm == 0:
        raise ZeroMomentum("polarization vectors are undefined at k = 0")
    khat = k / knorm
    ref = np.asarray(reference_axis, dtype=float)
    ref = ref / np.linalg.norm(ref)
    candidates = [ref, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
    for n in candidates:
        perp = n - np.dot(n, khat) * khat
        if np.linalg.norm(perp) > _PARALLEL_TOL:
            break
    eps_plus = perp / np.linalg.norm(perp)
    eps_minus = np.cross(khat, eps_plus)
    return eps_plus.astype(complex), eps_minus.astype(complex)


@dataclass(frozen=True)
class Mode:
    k: np.ndarray
    weight: float
    pol: int  # +1 or -1
    eps: np.ndarray
    shell: int

    @property
    def knorm(self) -> float:
        return float(np.linalg.norm(self.k))


@dataclass
class ModeGrid:
    """Discrete photon modes ordered shell by shell.

    Shell ``j`` holds the modes with ``sigma_{j+1} < |k| <= sigma_j``; its modes are
    ``modes[shell_offsets[j]:shell_offsets[j + 1]]``.
    """

    modes: list
    shell_offsets: list
    sigmas: list

    def __len__(self):
        return len(self.modes)

    @property
    def n_shells(self) -> int:
        return len(self.shell_offsets) - 1

    def shell_slice(self, j: int) -> range:
        return range(self.shell_offsets[j], self.shell_offsets[j + 1])

    def window_modes(self, window) -> range:
        lo, hi = window
        if not 0 <= lo <= hi <= self.n_shells:
            raise WindowOutOfRange(f"window {window} outside shells 0..{self.n_shells}")
        return range(self.shell_offsets[lo], self.shell_offsets[hi])

    @property
    def k(self) -> np.ndarray:
        return np.array([m.k for m in self.modes]).reshape(-1, 3)

    @property
    def knorm(self) -> np.ndarray:
        return np.array([m.knorm for m in self.modes])

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.modes])

    @property
    def eps(self) -> np.ndarray:
        return np.array([m.eps for m in self.modes]).reshape(-1, 3)

    @property
    def amplitudes(self) -> np.ndarray:
        """sqrt(w_m / |k_m|): coefficient of b_m in the vector potential."""
        return np.sqrt(self.weights / self.knorm)

    def shell_weight(self, j: int) -> float:
        """Sum of d^3k cell measures over the distinct momenta of shell ``j``."""
        return float(sum(self.modes[m].weight for m in self.shell_slice(j) if self.modes[m].pol == 1))


def _angular_rule(n_theta: int, n_phi: int):
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    dirs, wts = [], []
    for ct, wt in zip(x, wx):
        st = math.sqrt(max(0.0, 1.0 - ct * ct))
        for ph in phis:
            dirs.append((st * math.cos(ph), st * math.sin(ph), ct))
            wts.append(wt * 2.0 * np.pi / n_phi)
    return np.array(dirs), np.array(wts)


def build_mode_grid(params: ModelParams) -> ModeGrid:
    """Gauss-Legendre radial nodes per shell (|k|^2 folded into the weights) times
    a Gauss-Legendre(cos theta) x uniform(phi) angular product rule, two polarizations."""
    if not 0 < params.epsilon < 1:
        raise InvalidParams("epsilon must lie in (0, 1)")
    if min(params.n_radial, params.n_theta, params.n_phi) < 1:
        raise InvalidParams("empty shells: every quadrature count must be >= 1")
    r_nodes, r_wts = np.polynomial.legendre.leggauss(params.n_radial)
    dirs, ang_w = _angular_rule(params.n_theta, params.n_phi)
    modes, offsets = [], [0]
    for j in range(params.J):
        hi, lo = params.sigma(j), params.sigma(j + 1)
        half = 0.5 * (hi - lo)
        for xr, wr in zip(r_nodes, r_wts):
            r = lo + half * (xr + 1.0)
            radial_w = half * wr * r * r
            for d, wa in zip(dirs, ang_w):
                k = r * d
                e_plus, e_minus = polarization_basis(k, params.gauge_axis)
                for pol, e in ((1, e_plus), (-1, e_minus)):
                    modes.append(Mode(k=k, weight=radial_w * wa, pol=pol, eps=e, shell=j))
        offsets.append(len(modes))
    return ModeGrid(modes=modes, shell_offsets=offsets, sigmas=params.sigmas)


def fock_dimension(n_modes: int, Nmax: int) -> int:
    if n_modes == 0:
        return 1
    return sum(math.comb(n_modes + n - 1, n) for n in range(Nmax + 1))


@dataclass
class FockBasis:
    """Occupation-number basis with total photon number <= Nmax.

    ``modes`` lists the global grid indices carried by this basis; column ``i`` of
    ``states`` is the occupation of ``modes[i]``. State 0 is the vacuum.
    """

    grid: ModeGrid
    Nmax: int
    modes: np.ndarray
    states: np.ndarray
    lookup: dict
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    @property
    def n_shells(self) -> int:
        """Number of leading grid shells carried by the basis."""
        return int(np.searchsorted(self.grid.shell_offsets, len(self.modes)))

    def index(self, occupation) -> int:
        return self.lookup[np.asarray(occupation, dtype=np.int16).tobytes()]

    @property
    def total_occupation(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def local(self, global_mode: int) -> int:
        pos = int(np.searchsorted(self.modes, global_mode))
        if pos >= len(self.modes) or self.modes[pos] != global_mode:
            raise WindowOutOfRange(f"mode {global_mode} is not carried by this basis")
        return pos

    def annihilator(self, global_mode: int) -> sp.csr_matrix:
        """Truncated b_m as a sparse matrix (cached)."""
        key = ("b", global_mode)
        if key not in self._cache:
            m = self.local(global_mode)
            rows, cols, vals = [], [], []
            occ = self.states[:, m]
            src = np.nonzero(occ > 0)[0]
            lowered = self.states[src].copy()
            lowered[:, m] -= 1
            for s, row in zip(src, lowered):
                rows.append(self.lookup[row.tobytes()])
                cols.append(s)
                vals.append(math.sqrt(occ[s]))
            self._cache[key] = sp.csr_matrix(
                (np.array(vals, dtype=complex), (rows, cols)), shape=(self.dim, self.dim)
            )
        return self._cache[key]

    def creator(self, global_mode: int) -> sp.csr_matrix:
        return self.annihilator(global_mode).conj().T.tocsr()

    def boundary_mask(self) -> np.ndarray:
        return self.total_occupation == self.Nmax

    def embedding(self, target: "FockBasis") -> np.ndarray:
        """Index map sending each state of ``self`` into ``target`` (extra modes empty)."""
        key = ("embed", id(target))
        if key not in self._cache:
            pos = np.array([target.local(m) for m in self.modes], dtype=int)
            occ = np.zeros((self.dim, len(target.modes)), dtype=np.int16)
            occ[:, pos] = self.states
            idx = np.array([target.lookup[row.tobytes()] for row in occ], dtype=int)
            self._cache[key] = idx
        return self._cache[key]

    def embed(self, v, target: "FockBasis") -> np.ndarray:
        """The inclusion v -> v (x) Omega into a basis carrying more modes."""
        out = np.zeros(target.dim, dtype=complex)
        out[self.embedding(target)] = v
        return out


def build_fock_basis(grid: ModeGrid, Nmax: int, n_shells=None, cap: int = 200_000) -> FockBasis:
    """Enumerate all occupations of the first ``n_shells`` shells with total <= Nmax.

    Ordering: by total photon number, then by ``itertools.combinations_with_replacement``
    over the carried modes; the vacuum is state 0.
    """
    if Nmax < 0:
        raise InvalidParams("Nmax must be >= 0")
    if n_shells is None:
        n_shells = grid.n_shells
    if not 0 <= n_shells <= grid.n_shells:
        raise WindowOutOfRange(f"n_shells={n_shells} outside 0..{grid.n_shells}")
    modes = np.arange(grid.shell_offsets[n_shells])
    M = len(modes)
    dim = fock_dimension(M, Nmax)
    if dim > cap:
        raise DimOverflow(f"Fock dimension {dim} exceeds cap {cap}")
    states = np.zeros((dim, M), dtype=np.int16)
    i = 0
    for n in range(Nmax + 1):
        for combo in itertools.combinations_with_replacement(range(M), n):
            for m in combo:
                states[i, m] += 1
            i += 1
    lookup = {row.tobytes(): idx for idx, row in enumerate(states)}
    return FockBasis(grid=grid, Nmax=Nmax, modes=modes, states=states, lookup=lookup)


def scale_basis(params: ModelParams, grid: ModeGrid, j: int) -> FockBasis:
    """Basis of F_{sigma_j}: all shells with |k| > sigma_j (shells 0..j-1)."""
    return build_fock_basis(grid, params.Nmax, n_shells=j, cap=params.dim_cap)


@dataclass
class FieldOperators:
    A: list
    Pf: list
    Hf: sp.csr_matrix
    Nf: sp.csr_matrix


def _diag(values) -> sp.csr_matrix:
    return sp.diags(np.asarray(values, dtype=complex), format="csr")


def _window_modes(basis: FockBasis, window):
    modes = basis.grid.window_modes(window)
    if len(modes) and modes[-1] >= len(basis.modes):
        raise WindowOutOfRange(f"window {window} reaches shells not carried by the basis")
    return modes


def vector_potential(basis: FockBasis, window) -> list:
    """A restricted to the modes in ``window``: three Hermitian components."""
    key = ("A", tuple(window))
    if key not in basis._cache:
        grid = basis.grid
        amp = grid.amplitudes
        comps = [sp.csr_matrix((basis.dim, basis.dim), dtype=complex) for _ in range(3)]
        for m in _window_modes(basis, window):
            b = basis.annihilator(m)
            bd = basis.creator(m)
            e = grid.modes[m].eps
            for c in range(3):
                if e[c] != 0:
                    comps[c] = comps[c] + amp[m] * (e[c] * bd + np.conj(e[c]) * b)
        basis._cache[key] = [c.tocsr() for c in comps]
    return basis._cache[key]


def assemble_field_operators(grid: ModeGrid, basis: FockBasis, window) -> FieldOperators:
    """A, P^f, H^f and N^f restricted to the modes inside ``window`` = (lo, hi) shells."""
    if basis.grid is not grid:
        raise InvalidParams("basis was built on a different grid")
    modes = list(_window_modes(basis, window))
    occ = basis.states[:, modes].astype(float) if modes else np.zeros((basis.dim, 0))
    k = grid.k[modes] if modes else np.zeros((0, 3))
    kn = grid.knorm[modes] if modes else np.zeros(0)
    return FieldOperators(
        A=vector_potential(basis, window),
        Pf=[_diag(occ @ k[:, c]) for c in range(3)],
        Hf=_diag(occ @ kn),
        Nf=_diag(occ.sum(axis=1)),
    )


def full_window(basis: FockBasis):
    return (0, basis.n_shells)


def hermiticity_defect(M) -> float:
    """max |M - M^*| entrywise."""
    D = M - M.conj().T
    if sp.issparse(D):
        return float(abs(D).max()) if D.nnz else 0.0
    return float(np.max(np.abs(D))) if D.size else 0.0


def check_hermitian(M, tol: float = 1e-12, name: str = "operator"):
    d = hermiticity_defect(M)
    if d > tol:
        raise HermiticityError(f"{name} is not Hermitian: defect {d:.3e} > {tol:.1e}")
    return M


def momentum_operator(params: ModelParams, basis: FockBasis, j: int, P=None) -> list:
    """The three components of grad_P H = P - P^f + alpha^(1/2) A^{sigma_j}."""
    if not 0 <= j <= params.J:
        raise WindowOutOfRange(f"scale index {j} outside 0..{params.J}")
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    fo = assemble_field_operators(basis.grid, basis, full_window(basis))
    A = vector_potential(basis, (0, j))
    eye = sp.identity(basis.dim, dtype=complex, format="csr")
    sa = math.sqrt(params.alpha)
    return [(P[c] * eye - fo.Pf[c] + sa * A[c]).tocsr() for c in range(3)]


def _field_coefficients(basis: FockBasis, window) -> tuple:
    """Modes of ``window`` and the coefficients of b_m^* in the three components of A."""
    modes = list(_window_modes(basis, window))
    grid = basis.grid
    if not modes:
        return modes, np.zeros((3, 0), dtype=complex)
    cre = (grid.amplitudes[modes][:, None] * grid.eps[modes]).T
    return modes, cre


def _cap_correction(basis: FockBasis, modes, ann, cre) -> sp.csr_matrix:
    """Contribution of intermediate states at N = Nmax + 1 to a product X Y.

    ``ann[m]`` is the coefficient of b_m in X and ``cre[m]`` the coefficient of b_m^* in Y.
    The truncated product misses <s|X|u><u|Y|t> with |u| one photon above the cap;
    for s, t at the cap it equals sum_m ann_m cre_m + <s|(sum cre_n b_n^*)(sum ann_m b_m)|t>.
    """
    if not modes:
        return sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    edge = basis.boundary_mask().astype(complex)
    D = sp.diags(edge, format="csr")
    An = sum(ann[i] * basis.annihilator(m) for i, m in enumerate(modes))
    Cr = sum(cre[i] * basis.creator(m) for i, m in enumerate(modes))
    inner = Cr @ An + complex(np.sum(ann * cre)) * sp.identity(basis.dim, dtype=complex, format="csr")
    return (D @ inner @ D).tocsr()


def _square_correction(basis: FockBasis, window, scale: float) -> sp.csr_matrix:
    """Cap correction of sum_c X_c X_c for X = scale * A|window."""
    modes, cre = _field_coefficients(basis, window)
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for c in range(3):
        out = out + scale * scale * _cap_correction(basis, modes, np.conj(cre[c]), cre[c])
    return out


def assemble_fiber_hamiltonian(params: ModelParams, basis: FockBasis, j: int, P=None) -> sp.csr_matrix:
    """H_P^{sigma_j} = (P - P^f + alpha^(1/2) A^{sigma_j})^2 / 2 + H^f.

    The square is formed as an explicit operator product (no normal ordering) and
    compressed onto the basis: intermediate states one photon above the cap are kept,
    so states at the cap see the full A^2 vacuum term. ``P`` overrides the total
    momentum of ``params``.
    """
    V = momentum_operator(params, basis, j, P)
    Hf = assemble_field_operators(basis.grid, basis, full_window(basis)).Hf
    H = 0.5 * (V[0] @ V[0] + V[1] @ V[1] + V[2] @ V[2]) + Hf
    H = H + 0.5 * _square_correction(basis, (0, j), math.sqrt(params.alpha))
    H = H.tocsr()
    H.sum_duplicates()
    return check_hermitian(H, params.herm_tol, f"H^sigma_{j}")


def assemble_delta_H(params: ModelParams, basis: FockBasis, j: int, P=None) -> sp.csr_matrix:
    """Delta H = alpha^(1/2) grad_P H^{sigma_j} . A|window + (alpha/2) (A|window)^2, symmetrized.

    ``window`` is shell ``j``: sigma_{j+1} < |k| <= sigma_j. Products are compressed
    the same way as in ``assemble_fiber_hamiltonian``.
    """
    if not 0 <= j < params.J:
        raise WindowOutOfRange(f"Delta H needs j+1 <= J, got j={j}, J={params.J}")
    V = momentum_operator(params, basis, j, P)
    a = vector_potential(basis, (j, j + 1))
    sa = math.sqrt(params.alpha)
    dH = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for c in range(3):
        dH = dH + 0.5 * sa * (V[c] @ a[c] + a[c] @ V[c]) + 0.5 * params.alpha * (a[c] @ a[c])
    dH = dH + 0.5 * (_square_correction(basis, (0, j + 1), sa) - _square_correction(basis, (0, j), sa))
    dH = dH.tocsr()
    return check_hermitian(dH, params.herm_tol, f"Delta H at j={j}")


def free_energies(params: ModelParams, basis: FockBasis, P=None) -> np.ndarray:
    """Diagonal of the alpha = 0 fiber Hamiltonian: (P - sum n k)^2/2 + sum n |k|."""
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    grid = basis.grid
    occ = basis.states.astype(float)
    k = grid.k[basis.modes] if len(basis.modes) else np.zeros((0, 3))
    kn = grid.knorm[basis.modes] if len(basis.modes) else np.zeros(0)
    pf = occ @ k
    return 0.5 * np.sum((P - pf) ** 2, axis=1) + occ @ kn
