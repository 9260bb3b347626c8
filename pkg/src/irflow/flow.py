"""The multiscale infrared iteration over sigma_j = Lambda epsilon^j."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dressing import (
    DENSE_EXPM_MAX,
    apply_weyl,
    boundary_weight,
    canonical_form,
    displacement_coefficients,
    transform_hamiltonian,
    _escript,
)
from .errors import ContractionFailure, GapCollapse, InvalidParams, TruncationWarning
from .model import (
    FockBasis,
    assemble_delta_H,
    assemble_field_operators,
    assemble_fiber_hamiltonian,
    build_fock_basis,
    build_mode_grid,
    full_window,
    momentum_operator,
)
from .params import ModelParams, P_REGION_RADIUS
from .spectral import (
    ContourSpec,
    fix_phase,
    ground_state,
    resolvent_series_apply,
    sandwich_norm,
    spectral_gap,
)

log = logging.getLogger(__name__)

NAN3 = (math.nan, math.nan, math.nan)


@dataclass(frozen=True)
class FlowRecord:
    j: int
    sigma: float
    E: float
    gradE_FH: tuple
    gradE_FD: tuple
    gap: float
    Nf_expect: float
    dPsi: float
    dPhi: float
    dGradE: float
    gamma_orth_residual: float
    contraction: float
    truncation_leak: float
    strategy: str = "direct"
    strategy_diff: float = math.nan
    phi_hat_diff: float = math.nan
    psi: np.ndarray = field(default=None, repr=False, compare=False)
    phi: np.ndarray = field(default=None, repr=False, compare=False)
    basis: FockBasis = field(default=None, repr=False, compare=False)

    @property
    def gap_over_sigma(self) -> float:
        return self.gap / self.sigma


def _unit(v):
    v = np.asarray(v, dtype=complex)
    return fix_phase(v / np.linalg.norm(v))


def gradient_feynman_hellmann(params: ModelParams, basis: FockBasis, j: int, Psi, P=None) -> np.ndarray:
    """P - <Psi, (P^f - alpha^(1/2) A^{sigma_j}) Psi> for a ground state Psi."""
    Psi = np.asarray(Psi, dtype=complex)
    if Psi.shape[0] != basis.dim:
        raise InvalidParams(f"vector of length {Psi.shape[0]} does not match basis dim {basis.dim}")
    V = momentum_operator(params, basis, j, P)
    norm2 = np.vdot(Psi, Psi).real
    return np.array([np.vdot(Psi, V[c] @ Psi).real / norm2 for c in range(3)])


def ground_energy(params: ModelParams, basis: FockBasis, j: int, P=None, seed: int = 0) -> float:
    H = assemble_fiber_hamiltonian(params, basis, j, P)
    return ground_state(H, params.eig_tol, seed=seed).energy


def gradient_finite_difference(params: ModelParams, j: int, h: float = 1e-3, basis: FockBasis = None,
                               P=None, seed: int = 0) -> np.ndarray:
    """Central differences of E_P^{sigma_j}, one fresh ground-state solve per point."""
    P = params.P_vec if P is None else np.asarray(P, dtype=float)
    if basis is None:
        basis = build_fock_basis(build_mode_grid(params), params.Nmax, n_shells=j, cap=params.dim_cap)
    out = np.zeros(3)
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        for Q in (P + e, P - e):
            if np.linalg.norm(Q) >= P_REGION_RADIUS:
                raise InvalidParams(f"finite-difference point {Q} leaves the region |P| < 1/3")
        out[c] = (ground_energy(params, basis, j, P + e, seed)
                  - ground_energy(params, basis, j, P - e, seed)) / (2.0 * h)
    return out


@dataclass
class ScaleState:
    """Ground state data of H_P^{sigma_j} at one total momentum."""

    basis: FockBasis
    E: float
    gap: float
    psi: np.ndarray
    gradE: np.ndarray
    phi: np.ndarray


def scale_state(params: ModelParams, j: int, P=None, basis: FockBasis = None, seed: int = 0) -> ScaleState:
    """Psi, E, grad E (Feynman-Hellmann) and Phi = W(grad E) Psi at scale j."""
    if basis is None:
        basis = build_fock_basis(build_mode_grid(params), params.Nmax, n_shells=j, cap=params.dim_cap)
    H = assemble_fiber_hamiltonian(params, basis, j, P)
    gs = ground_state(H, params.eig_tol, seed=seed)
    gradE = gradient_feynman_hellmann(params, basis, j, gs.vector, P)
    coeffs = displacement_coefficients(params, gradE, (0, j), basis.grid)
    phi = _unit(apply_weyl(coeffs, gs.vector, basis, leak_tol=params.leak_tol))
    return ScaleState(basis, gs.energy, gs.gap, gs.vector, gradE, phi)


def _recursive_psi(params, basis, j, psi_prev, E_prev, threads, seed):
    """Psi_j from Psi_{j-1} (x) Omega through the resolvent series of H^{sigma_{j-1}} + Delta H."""
    H0 = assemble_fiber_hamiltonian(params, basis, j - 1)
    dH = assemble_delta_H(params, basis, j - 1)
    spec = ContourSpec(E_prev, params.mu * params.sigma(j), params.n_quad)
    res = resolvent_series_apply(H0, dH, spec, psi_prev, tol=params.solve_tol, threads=threads)
    return _unit(res.vector), res.contraction


def _phi_hat_step(params, basis, j, H, phi_prev, gradE_prev, gradE, E_prev, psi, threads):
    """Distance between Phi_j from the K-picture series and W(grad E_j) Psi_j.

    K = W_{j-1} H^{sigma_{j-1}} W_{j-1}^*, Khat = W'(grad E_{j-1}) H^{sigma_j} W'^*, and
    Delta K = Khat - Ehat + Escript - K, all by dense conjugation on ``basis``.
    """
    grid = basis.grid
    co_prev = displacement_coefficients(params, gradE_prev, (0, j - 1), grid)
    co_wide = displacement_coefficients(params, gradE_prev, (0, j), grid)
    H0 = assemble_fiber_hamiltonian(params, basis, j - 1)
    K = transform_hamiltonian(H0, co_prev, basis)
    Khat = transform_hamiltonian(H, co_wide, basis)
    shift = _escript(params, co_wide, params.P_vec) - _escript(params, co_prev, params.P_vec)
    dK = Khat - K - shift * np.eye(basis.dim)
    spec = ContourSpec(E_prev, params.mu * params.sigma(j), params.n_quad)
    res = resolvent_series_apply(K, dK, spec, phi_prev, tol=params.solve_tol, threads=threads)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        psi_hat = apply_weyl(co_wide, res.vector, basis, adjoint=True)
    co_new = displacement_coefficients(params, gradE, (0, j), grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        phi_hat = _unit(apply_weyl(co_new, psi_hat, basis))
        phi = _unit(apply_weyl(co_new, psi, basis))
    return float(np.linalg.norm(phi_hat - phi))


def run_flow(params: ModelParams, strategy: str = None, fd_step: float = 1e-3, threads: int = 1,
             seed: int = 0, on_gap_collapse: str = "record", measure_contraction: bool = True,
             keep_vectors: bool = True) -> list:
    """Ground states, energies, gradients and dressed vectors for j = 0..J.

    ``strategy`` (default ``params.mode``) is ``direct`` (eigensolve each H^{sigma_j}),
    ``recursive`` (resolvent series from the previous scale, direct fallback on
    ContractionFailure) or ``both``. ``fd_step=None`` skips the finite-difference
    gradient. ``on_gap_collapse`` is ``record`` (log and continue) or ``raise``.
    """
    strategy = params.mode if strategy is None else strategy
    if strategy not in ("direct", "recursive", "both"):
        raise InvalidParams(f"unknown strategy {strategy!r}")
    grid = build_mode_grid(params)
    P = params.P_vec
    records = []
    prev = None
    for j in range(params.J + 1):
        sigma = params.sigma(j)
        basis = build_fock_basis(grid, params.Nmax, n_shells=j, cap=params.dim_cap)
        H = assemble_fiber_hamiltonian(params, basis, j)
        psi_prev = phi_prev = None
        if prev is not None:
            psi_prev = prev.basis.embed(prev.psi, basis)
            phi_prev = prev.basis.embed(prev.phi, basis)

        used = strategy
        diff = math.nan
        contraction = math.nan
        psi_direct = psi_rec = None
        gap = math.inf
        if strategy in ("direct", "both") or prev is None:
            gs = ground_state(H, params.eig_tol, seed=seed)
            psi_direct, E, gap = gs.vector, gs.energy, gs.gap
        if strategy in ("recursive", "both") and prev is not None:
            try:
                psi_rec, contraction = _recursive_psi(params, basis, j, psi_prev, prev.E, threads, seed)
            except ContractionFailure as exc:
                log.warning("scale %d: %s; falling back to direct solve", j, exc)
                contraction = exc.factor
                used = "direct-fallback"
                if psi_direct is None:
                    gs = ground_state(H, params.eig_tol, seed=seed)
                    psi_direct, E, gap = gs.vector, gs.energy, gs.gap
        if psi_direct is not None and psi_rec is not None:
            diff = float(np.linalg.norm(psi_direct - psi_rec))
        if psi_direct is None:
            psi = psi_rec
            E = float(np.vdot(psi, H @ psi).real)
            gap = spectral_gap(H, params.eig_tol)
        else:
            psi = psi_direct
        if prev is None:
            used = "initial"
        if prev is not None and measure_contraction and math.isnan(contraction):
            dH = assemble_delta_H(params, basis, j - 1)
            H0 = H - dH
            contraction = sandwich_norm(H0, dH, ContourSpec(prev.E, params.mu * sigma, params.n_quad),
                                        tol=params.solve_tol)

        if j > 0 and gap < params.rho_minus * sigma:
            msg = f"scale {j}: gap {gap:.4g} < rho_minus * sigma = {params.rho_minus * sigma:.4g}"
            if on_gap_collapse == "raise":
                raise GapCollapse(msg)
            log.warning(msg)

        gradE = gradient_feynman_hellmann(params, basis, j, psi)
        grad_fd = NAN3 if fd_step is None else tuple(
            gradient_finite_difference(params, j, fd_step, basis=basis, seed=seed))
        coeffs = displacement_coefficients(params, gradE, (0, j), grid)
        phi = _unit(apply_weyl(coeffs, psi, basis, leak_tol=params.leak_tol))
        pieces, _ = canonical_form(params, gradE, basis, j, phi)
        gamma_orth = max(abs(np.vdot(phi, G @ phi)) for G in pieces.Gamma)

        phi_hat_diff = math.nan
        if strategy in ("recursive", "both") and prev is not None and basis.dim <= DENSE_EXPM_MAX:
            try:
                phi_hat_diff = _phi_hat_step(params, basis, j, H, phi_prev, np.array(prev.gradE_FH),
                                             gradE, prev.E, psi, threads)
            except ContractionFailure as exc:
                log.warning("scale %d: intermediate step skipped (%s)", j, exc)

        Nf = assemble_field_operators(grid, basis, full_window(basis)).Nf
        nf = float(np.vdot(psi, Nf @ psi).real)
        if prev is None:
            dpsi = dphi = dgrad = 0.0
        else:
            dpsi = float(np.linalg.norm(psi - psi_prev))
            dphi = float(np.linalg.norm(phi - phi_prev))
            dgrad = float(np.linalg.norm(gradE - np.array(prev.gradE_FH)))
        rec = FlowRecord(
            j=j, sigma=sigma, E=float(E), gradE_FH=tuple(float(x) for x in gradE),
            gradE_FD=tuple(float(x) for x in grad_fd), gap=float(gap), Nf_expect=nf,
            dPsi=dpsi, dPhi=dphi, dGradE=dgrad, gamma_orth_residual=float(gamma_orth),
            contraction=float(contraction), truncation_leak=boundary_weight(basis, psi),
            strategy=used, strategy_diff=diff, phi_hat_diff=phi_hat_diff,
            psi=psi, phi=phi, basis=basis,
        )
        records.append(rec)
        prev = rec
    if not keep_vectors:
        records = [FlowRecord(**{**_fields(r), "psi": None, "phi": None, "basis": None}) for r in records]
    return records


def _fields(rec: FlowRecord) -> dict:
    return {k: getattr(rec, k) for k in rec.__dataclass_fields__}


@dataclass
class EnergyShiftReport:
    rows: list
    c: float
    C1: float
    log_slope: float
    passed: bool


def energy_shift_check(records: list, alpha: float, epsilon: float) -> EnergyShiftReport:
    """0 <= E_{j+1} <= E_j + c alpha sigma_j^2 with the smallest admissible c, plus the
    fitted C1 of |E_j - E_{j+1}| <= C1 alpha epsilon^j and the log-slope of |Delta E_j| vs j.

    Rows are (j, lhs = E_{j+1}, rhs = E_j + c alpha sigma_j^2, pass).
    """
    if len(records) < 2:
        raise InvalidParams("energy_shift_check needs at least two records")
    steps = []
    for a, b in zip(records[:-1], records[1:]):
        steps.append((a.j, a.sigma, a.E, b.E))
    if alpha > 0:
        ratios = [(Eb - Ea) / (alpha * s * s) for _, s, Ea, Eb in steps]
        c = max(0.0, max(ratios))
        C1 = max(abs(Eb - Ea) / (alpha * epsilon**j) for j, _, Ea, Eb in steps)
    else:
        c = C1 = 0.0
    rows = []
    for j, s, Ea, Eb in steps:
        rhs = Ea + c * alpha * s * s
        rows.append((j, Eb, rhs, bool(Eb >= 0 and Eb <= rhs * (1 + 1e-12) + 1e-15)))
    dE = np.array([abs(Eb - Ea) for _, _, Ea, Eb in steps])
    js = np.array([j for j, *_ in steps], dtype=float)
    slope = math.nan
    mask = dE > 0
    if mask.sum() >= 2:
        slope = float(np.polyfit(js[mask], np.log(dE[mask]), 1)[0])
    return EnergyShiftReport(rows=rows, c=c, C1=C1, log_slope=slope, passed=all(r[3] for r in rows))


def calibrate_contour(records: list, params: ModelParams, margin: float = 0.9) -> ModelParams:
    """rho_minus = half the smallest observed gap_j / sigma_j, mu = midpoint of
    (rho_minus, rho_plus), clamped into the admissible region."""
    ratios = [r.gap / r.sigma for r in records if r.j > 0 and math.isfinite(r.gap)]
    if not ratios:
        return params
    rho_plus = params.rho_plus
    rho_minus = min(0.5 * min(ratios), margin * rho_plus)
    floor = params.epsilon * rho_plus
    if rho_minus <= floor:
        raise GapCollapse(
            f"observed gap ratio {min(ratios):.4g} leaves no admissible rho_minus above "
            f"epsilon * rho_plus = {floor:.4g}"
        )
    return params.replace(rho_minus=rho_minus, mu=0.5 * (rho_minus + rho_plus))
