"""Ground states, low spectra, shifted solves and contour-integral projectors.

Operators are Hermitian ``scipy.sparse`` matrices (dense arrays are accepted too).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ContractionFailure,
    DegenerateGround,
    EnclosureViolation,
    NoConvergence,
    SingularShift,
)

DENSE_BELOW = 32
DEGENERACY_TOL = 1e-10
DIRECT_SOLVE_MAX = 20_000
DENSE_SANDWICH_MAX = 2500


@dataclass(frozen=True)
class SpectralResult:
    energy: float
    vector: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    gap: float = math.inf


@dataclass(frozen=True)
class ContourSpec:
    """Circle |z - center| = radius sampled at ``n_quad`` trapezoid nodes."""

    center: complex
    radius: float
    n_quad: int = 32

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("contour radius must be positive")
        if self.n_quad < 1:
            raise ValueError("n_quad must be >= 1")

    def nodes(self, n=None):
        """Trapezoid nodes z_k and weights w_k with sum_k w_k f(z_k) ~ (1/2 pi i) \\oint f dz.

        Nodes sit at half-integer angles so none lands on the real axis.
        """
        n = self.n_quad if n is None else n
        theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        e = np.exp(1j * theta)
        return self.center + self.radius * e, self.radius * e / n


def _as_operator(H):
    return H if sp.issparse(H) else np.asarray(H)


def _dense(H) -> np.ndarray:
    return H.toarray() if sp.issparse(H) else np.asarray(H)


def norm_estimate(H) -> float:
    """Max absolute row sum, an upper bound on the spectral norm."""
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max()) if H.shape[0] else 0.0
    return float(np.abs(H).sum(axis=1).max()) if H.shape[0] else 0.0


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so that <Omega, v> = v[0] is real and positive.

    Falls back to the first coefficient that is not negligible when v[0] vanishes.
    """
    v = np.asarray(v, dtype=complex)
    scale = np.max(np.abs(v)) if v.size else 0.0
    if scale == 0:
        return v
    idx = 0 if abs(v[0]) > 1e-14 * scale else int(np.argmax(np.abs(v) > 1e-8 * scale))
    return v * (abs(v[idx]) / v[idx])


def _start_vector(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v0 = np.zeros(n)
    v0[0] = 1.0
    # vacuum start plus a small seeded component so that no eigenvector is missed
    v0 += 1e-2 * rng.standard_normal(n)
    return v0 / np.linalg.norm(v0)


def _eigs_lowest(H, k: int, tol: float, seed: int, want_vectors: bool):
    """Lowest ``k`` eigenpairs: dense below ``DENSE_BELOW``, otherwise a loose Lanczos
    estimate of the bottom of the spectrum followed by shift-invert Lanczos just below it."""
    n = H.shape[0]
    if n <= DENSE_BELOW or k >= n - 1:
        if want_vectors:
            w, V = np.linalg.eigh(_dense(H))
            return w[:k], V[:, :k], 1
        return np.linalg.eigvalsh(_dense(H))[:k], None, 1
    v0 = _start_vector(n, seed).astype(H.dtype)
    try:
        est = float(spla.eigsh(H, k=1, which="SA", v0=v0, tol=1e-6, return_eigenvectors=False,
                               maxiter=max(1000, 20 * n))[0])
    except spla.ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            raise NoConvergence("Lanczos estimate of the lowest eigenvalue failed") from exc
        est = float(np.min(np.real(exc.eigenvalues)))
    # Lanczos can stall in an invariant subspace of a nearly diagonal H; diagonal
    # entries are Rayleigh quotients, so they also bound the lowest eigenvalue from above
    if hasattr(H, "diagonal"):
        est = min(est, float(np.min(np.real(H.diagonal()))))
    # Ritz values lie above the true eigenvalue, so shift slightly below the estimate
    shift = est - 1e-4 * max(1.0, abs(est))
    try:
        res = spla.eigsh(
            H, k=k, sigma=shift, which="LM", v0=v0, tol=tol, return_eigenvectors=want_vectors,
            maxiter=max(1000, 20 * n),
        )
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise NoConvergence(f"shift-invert Lanczos did not converge for {k} eigenpairs") from exc
    if want_vectors:
        w, V = res
        order = np.argsort(w)
        return w[order], V[:, order], 1
    return np.sort(res), None, 1


def ground_state(H, tol: float = 1e-12, seed: int = 0, check_degeneracy: bool = True) -> SpectralResult:
    """Smallest eigenpair of a Hermitian operator, phase fixed so that <Omega, v> >= 0."""
    H = _as_operator(H)
    n = H.shape[0]
    if n == 1:
        e = float(np.real(_dense(H)[0, 0]))
        return SpectralResult(e, np.ones(1, dtype=complex), 0.0, 0)
    w, V, it = _eigs_lowest(H, 2, tol, seed, want_vectors=True)
    e0 = float(w[0])
    gap = float(w[1] - w[0])
    if check_degeneracy and gap < DEGENERACY_TOL * max(1.0, abs(e0)):
        raise DegenerateGround(f"lowest eigenvalues {w[0]:.15g}, {w[1]:.15g} are degenerate")
    v = fix_phase(V[:, 0] / np.linalg.norm(V[:, 0]))
    resid = float(np.linalg.norm(H @ v - e0 * v))
    bound = max(tol, 1e-14) * max(1.0, norm_estimate(H)) * 1e3
    if resid > max(bound, 1e-9):
        raise NoConvergence(f"ground state residual {resid:.3e} exceeds {bound:.3e}")
    return SpectralResult(e0, v, resid, it, gap)


def low_spectrum(H, m: int, tol: float = 1e-12, seed: int = 0) -> np.ndarray:
    """The ``m`` smallest eigenvalues in ascending order."""
    H = _as_operator(H)
    n = H.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= dim = {n}, got m = {m}")
    w, _, _ = _eigs_lowest(H, m, tol, seed, want_vectors=False)
    return np.asarray(w, dtype=float)


def spectral_gap(H, tol: float = 1e-12) -> float:
    """lambda_2 - lambda_1; infinite on a one-dimensional space."""
    if H.shape[0] == 1:
        return math.inf
    w = low_spectrum(H, 2, tol)
    return float(w[1] - w[0])


class Resolvent:
    """(H - z)^{-1} for one fixed complex shift, factorized once and reused."""

    def __init__(self, H, z: complex, tol: float = 1e-12, method: str = "auto"):
        self.H = _as_operator(H)
        self.z = complex(z)
        self.tol = tol
        n = self.H.shape[0]
        if method == "auto":
            method = "direct" if n <= DIRECT_SOLVE_MAX else "krylov"
        self.method = method
        self._lu = None
        self._scale = max(1.0, norm_estimate(self.H))
        if method == "direct":
            self._factor()

    def _shifted(self):
        n = self.H.shape[0]
        if sp.issparse(self.H):
            return (self.H - self.z * sp.identity(n, format="csc")).tocsc().astype(complex)
        return self.H.astype(complex) - self.z * np.eye(n)

    def _factor(self):
        A = self._shifted()
        try:
            if sp.issparse(A):
                self._lu = spla.splu(A).solve
            else:
                lu = sla.lu_factor(A, check_finite=True)
                if np.any(np.abs(np.diag(lu[0])) == 0):
                    raise SingularShift(f"H - z is singular at z = {self.z}")
                self._lu = lambda b, _lu=lu: sla.lu_solve(_lu, b)
        except RuntimeError as exc:
            raise SingularShift(f"H - z is singular at z = {self.z}") from exc

    def _krylov(self, b):
        d = self.H.diagonal() - self.z
        d = np.where(np.abs(d) > 1e-300, d, 1.0)
        precond = spla.LinearOperator(self.H.shape, matvec=lambda x: x / d, dtype=complex)
        A = spla.LinearOperator(
            self.H.shape, matvec=lambda x: self.H @ x - self.z * x, dtype=complex
        )
        x, info = spla.gmres(A, b, rtol=0.1 * self.tol, atol=0.0, M=precond, restart=60,
                             maxiter=200)
        return x, info

    def _residual(self, x, b) -> float:
        return float(np.linalg.norm(self.H @ x - self.z * x - b))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0:
            return np.zeros_like(b)
        x = None
        if self.method == "krylov":
            x, info = self._krylov(b)
            if info != 0 or self._residual(x, b) > self.tol * bnorm:
                self.method = "direct"
                self._factor()
                x = None
        if x is None:
            x = np.asarray(self._lu(b))
        if not np.all(np.isfinite(x)):
            raise SingularShift(f"non-finite solution at z = {self.z}")
        xnorm = float(np.linalg.norm(x))
        if xnorm > 0 and bnorm / xnorm <= self.tol * self._scale:
            raise SingularShift(
                f"z = {self.z} lies within {bnorm / xnorm:.2e} of the spectrum"
            )
        resid = self._residual(x, b)
        if resid > self.tol * bnorm:
            # one step of iterative refinement before giving up
            x = x - np.asarray(self._lu(self.H @ x - self.z * x - b)) if self._lu else x
            resid = self._residual(x, b)
            if resid > self.tol * bnorm:
                raise SingularShift(
                    f"shifted solve residual {resid / bnorm:.2e} > {self.tol:.1e} at z = {self.z}"
                )
        return x


def shifted_solve(H, z: complex, b, tol: float = 1e-10, method: str = "auto") -> np.ndarray:
    """x with ||(H - z) x - b|| <= tol ||b||.

    ``method`` is ``"krylov"`` (Jacobi-preconditioned GMRES), ``"direct"`` (sparse LU)
    or ``"auto"``.
    """
    return Resolvent(H, z, tol=tol, method=method).solve(b)


def eigenvalues_in_disc(H, center: complex, radius: float, tol: float = 1e-12) -> int:
    """Number of eigenvalues of Hermitian H inside |z - center| < radius."""
    n = H.shape[0]
    center = complex(center)
    if radius <= abs(center.imag):
        return 0
    half = math.sqrt(radius**2 - center.imag**2)
    lo, hi = center.real - half, center.real + half
    if n <= DENSE_SANDWICH_MAX:
        w = np.linalg.eigvalsh(_dense(H))
        return int(np.sum((w > lo) & (w < hi)))
    m = min(n, 4)
    while True:
        w = low_spectrum(H, m, tol)
        if w[-1] >= hi or m == n:
            return int(np.sum((w > lo) & (w < hi)))
        m = min(n, 2 * m)


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _project_once(H, spec: ContourSpec, v, n: int, tol: float, threads: int):
    zs, ws = spec.nodes(n)

    def one(i):
        return ws[i] * Resolvent(H, zs[i], tol=tol).solve(v)

    parts = _map(one, range(n), threads)
    out = np.zeros(H.shape[0], dtype=complex)
    for p in parts:  # fixed summation order
        out -= p
    return out


def contour_project(H, spec: ContourSpec, v, tol: float = 1e-12, check_enclosure: bool = True,
                    adaptive: bool = False, max_quad: int = 1024, threads: int = 1) -> np.ndarray:
    """Trapezoid approximation of (1/2 pi i) \\oint (z - H)^{-1} v dz over the circle.

    This equals <u, v> u for the unit eigenvector u of the single enclosed eigenvalue.
    With ``adaptive`` the node count is doubled until two levels agree to ``tol``.
    """
    H = _as_operator(H)
    v = np.asarray(v, dtype=complex)
    if check_enclosure:
        count = eigenvalues_in_disc(H, complex(spec.center), spec.radius)
        if count != 1:
            raise EnclosureViolation(f"contour encloses {count} eigenvalues, expected 1")
    n = spec.n_quad
    out = _project_once(H, spec, v, n, tol, threads)
    if adaptive:
        vnorm = max(np.linalg.norm(v), 1e-300)
        while n < max_quad:
            n *= 2
            finer = _project_once(H, spec, v, n, tol, threads)
            done = np.linalg.norm(finer - out) <= tol * vnorm
            out = finer
            if done:
                break
    return out


def _sandwich_dense(H0, dH, zs, iters: int, seed: int) -> float:
    lam, U = np.linalg.eigh(_dense(H0))
    M = U.conj().T @ (_dense(dH) @ U)
    rng = np.random.default_rng(seed)
    best = 0.0
    for z in zs:
        d = 1.0 / np.sqrt(lam.astype(complex) - z)
        S = d[:, None] * M * d[None, :]
        x = rng.standard_normal(len(lam)) + 0j
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iters):
            y = S.conj().T @ (S @ x)
            ny = np.linalg.norm(y)
            if ny == 0:
                break
            new = math.sqrt(ny)
            x = y / ny
            if abs(new - est) <= 1e-8 * new:
                est = new
                break
            est = new
        best = max(best, est)
    return best


def _radius_iterative(H0, dH, zs, iters: int, seed: int, tol: float) -> float:
    rng = np.random.default_rng(seed)
    best = 0.0
    for z in zs:
        R = Resolvent(H0, z, tol=tol)
        x = rng.standard_normal(H0.shape[0]) + 0j
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iters):
            y = R.solve(dH @ x)
            ny = np.linalg.norm(y)
            if ny == 0:
                break
            x = y / ny
            if abs(ny - est) <= 1e-6 * ny:
                est = ny
                break
            est = ny
        best = max(best, est)
    return best


def sandwich_norm(H0, dH, spec: ContourSpec, n_points: int = 16, iters: int = 300,
                  seed: int = 0, tol: float = 1e-12) -> float:
    """sup over sampled z on the contour of ||(H0 - z)^{-1/2} dH (H0 - z)^{-1/2}||.

    Uses power iteration on S^* S with S built from the eigendecomposition of H0
    (principal square roots). Above ``DENSE_SANDWICH_MAX`` the spectral radius of
    (H0 - z)^{-1} dH, a lower bound with the same convergence meaning, is returned.
    """
    theta = 2.0 * np.pi * np.arange(n_points) / n_points
    zs = complex(spec.center) + spec.radius * np.exp(1j * theta)
    if H0.shape[0] <= DENSE_SANDWICH_MAX:
        return _sandwich_dense(H0, dH, zs, iters, seed)
    return _radius_iterative(H0, dH, zs, iters, seed, tol)


@dataclass(frozen=True)
class SeriesResult:
    vector: np.ndarray = field(repr=False)
    contraction: float
    terms: int
    tail: float


def resolvent_series_apply(H0, dH, spec: ContourSpec, v, n_terms=None, tol: float = 1e-12,
                           max_terms: int = 200, contraction=None, threads: int = 1) -> SeriesResult:
    """Contour projector of H0 + dH applied to ``v`` through the Neumann series

        sum_n (1/2 pi i) \\oint (z - H0)^{-1} [dH (z - H0)^{-1}]^n v dz

    (the sign convention of ``contour_project``). With ``n_terms=None`` terms are added
    until the last one falls below ``tol`` relative to the partial sum.
    Raises ContractionFailure if the measured sandwich norm is >= 1.
    """
    H0 = _as_operator(H0)
    v = np.asarray(v, dtype=complex)
    factor = sandwich_norm(H0, dH, spec, tol=tol) if contraction is None else contraction
    if factor >= 1.0:
        raise ContractionFailure(f"resolvent sandwich norm {factor:.4g} >= 1", factor)
    zs, ws = spec.nodes()
    limit = max_terms if n_terms is None else n_terms

    def one(i):
        R = Resolvent(H0, zs[i], tol=tol)
        term = R.solve(v)
        total = term.copy()
        used, tail = 0, float(np.linalg.norm(term))
        while used < limit:
            term = R.solve(-(dH @ term))
            total += term
            used += 1
            tail = float(np.linalg.norm(term))
            if n_terms is None and tail <= tol * np.linalg.norm(total):
                break
        return ws[i] * total, used, tail

    parts = _map(one, range(len(zs)), threads)
    out = np.zeros(H0.shape[0], dtype=complex)
    for p, _, _ in parts:
        out -= p
    return SeriesResult(
        vector=out,
        contraction=float(factor),
        terms=max(p[1] for p in parts),
        tail=max(p[2] for p in parts),
    )
