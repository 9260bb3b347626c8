"""Fast internal consistency checks run by ``irflow selfcheck``.

Every check is cheap (small instances, dense references) so the whole suite finishes
in well under a minute on the default configuration.
"""

from __future__ import annotations

import warnings

import numpy as np

from .dressing import (
    apply_weyl,
    canonical_form,
    displacement_coefficients,
    intermediate_operators,
    transform_hamiltonian,
    weyl_operator,
)
from .errors import InvalidParams, TruncationWarning
from .flow import gradient_feynman_hellmann, run_flow, scale_state
from .model import (
    assemble_delta_H,
    assemble_fiber_hamiltonian,
    build_fock_basis,
    build_mode_grid,
    fock_dimension,
    hermiticity_defect,
)
from .oracle import oracle_matrix
from .params import ModelParams
from .spectral import ContourSpec, contour_project, ground_state, resolvent_series_apply


def _row(name, value, tol, ok=None):
    value = float(value)
    if ok is None:
        ok = value <= tol
    return {"name": name, "value": value, "tol": tol, "pass": bool(ok)}


def _small(params: ModelParams, **kw) -> ModelParams:
    base = dict(J=1, n_radial=1, n_theta=1, n_phi=1, alpha=0.01, P=(0.2, 0.0, 0.0))
    base.update(kw)
    return params.replace(**base)


def check_dimension():
    grid = build_mode_grid(ModelParams(J=1, n_theta=1, n_phi=2))
    b = build_fock_basis(grid, 3)
    return [_row("fock_dimension", abs(b.dim - fock_dimension(len(grid), 3)), 0)]


def check_polarizations(params):
    grid = build_mode_grid(params)
    k = grid.k / grid.knorm[:, None]
    e = grid.eps
    trans = np.max(np.abs(np.sum(e * k, axis=1)))
    norm = np.max(np.abs(np.sum(np.abs(e) ** 2, axis=1) - 1.0))
    return [_row("polarization_transverse", trans, 1e-12), _row("polarization_unit", norm, 1e-12)]


def check_hamiltonian(params):
    rows = []
    p = params.replace(J=min(params.J, 2))
    grid = build_mode_grid(p)
    j = p.J
    basis = build_fock_basis(grid, p.Nmax, n_shells=j, cap=p.dim_cap)
    H = assemble_fiber_hamiltonian(p, basis, j)
    rows.append(_row("hermitian", hermiticity_defect(H), p.herm_tol))
    if j >= 1:
        Hm = assemble_fiber_hamiltonian(p, basis, j - 1)
        dH = assemble_delta_H(p, basis, j - 1)
        rows.append(_row("delta_H_identity", abs(H - Hm - dH).max(), 1e-12))
    small = _small(p, J=2)
    sb = build_fock_basis(build_mode_grid(small), 2, n_shells=2)
    ref = oracle_matrix(small, 2, sb)
    Hs = assemble_fiber_hamiltonian(small, sb, 2).toarray()
    rows.append(_row("tensor_oracle", np.max(np.abs(Hs - ref)), 1e-12))
    gs = ground_state(H, p.eig_tol)
    w = np.linalg.eigvalsh(H.toarray())
    rows.append(_row("dense_ground_energy", abs(gs.energy - w[0]), 1e-8))
    return rows


def check_free(params):
    p = params.replace(alpha=0.0, J=min(params.J, 3))
    recs = run_flow(p, fd_step=None, measure_contraction=False)
    E0 = 0.5 * float(np.dot(p.P_vec, p.P_vec))
    dev = max(abs(r.E - E0) for r in recs)
    gdev = max(np.max(np.abs(np.subtract(r.gradE_FH, p.P))) for r in recs)
    return [_row("free_energy", dev, 1e-12), _row("free_gradient", gdev, 1e-12)]


def check_dressing(params):
    p = _small(params, J=2, Nmax=3, alpha=0.01)
    st = scale_state(p, 2)
    basis = st.basis
    coeffs = displacement_coefficients(p, st.gradE, (0, 2), basis.grid)
    W = weyl_operator(coeffs, basis)
    rng = np.random.default_rng(0)
    v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    v /= np.linalg.norm(v)
    unit = np.linalg.norm(W.conj().T @ (W @ v) - v)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        wv = apply_weyl(coeffs, v, basis)
    H = assemble_fiber_hamiltonian(p, basis, 2)
    K = transform_hamiltonian(H, coeffs, basis)
    spec = np.max(np.abs(np.linalg.eigvalsh(K) - np.linalg.eigvalsh(H.toarray())))
    return [_row("weyl_unitary", unit, 1e-8), _row("weyl_action", np.linalg.norm(wv - W @ v), 1e-10),
            _row("dressed_spectrum", spec, 1e-8)]


def check_canonical(params):
    p = _small(params, J=1, Nmax=8, alpha=0.01)
    st = scale_state(p, 1)
    pieces, _ = canonical_form(p, st.gradE, st.basis, 1, st.phi, check=True)
    rows = [_row("canonical_form", pieces.defect, 1e-8)]
    big = build_fock_basis(build_mode_grid(p), p.Nmax, n_shells=1)
    s0 = scale_state(p, 0)
    io = intermediate_operators(p, s0.gradE, 0, s0.phi, big)
    lhs = io.Khat - io.Ehat * np.eye(big.dim) + io.Escript * np.eye(big.dim) - io.K
    rows.append(_row("intermediate_identity", np.max(np.abs(lhs - io.dK)), 1e-8))
    return rows


def check_gradient(params):
    p = params.replace(J=min(params.J, 2))
    st = scale_state(p, p.J)
    h = 1e-3
    fd = np.zeros(3)
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        Ep = ground_state(assemble_fiber_hamiltonian(p, st.basis, p.J, p.P_vec + e), p.eig_tol).energy
        Em = ground_state(assemble_fiber_hamiltonian(p, st.basis, p.J, p.P_vec - e), p.eig_tol).energy
        fd[c] = (Ep - Em) / (2 * h)
    fh = gradient_feynman_hellmann(p, st.basis, p.J, st.psi)
    tol = 1e-4 if p.alpha <= 0.01 else 1e-3
    return [_row("feynman_hellmann", np.max(np.abs(fh - fd)), tol)]


def check_contour(params):
    p = params.replace(J=min(params.J, 2))
    grid = build_mode_grid(p)
    basis = build_fock_basis(grid, p.Nmax, n_shells=2, cap=p.dim_cap)
    H = assemble_fiber_hamiltonian(p, basis, 2)
    gs = ground_state(H, p.eig_tol)
    spec = ContourSpec(gs.energy, p.mu * p.sigma(2), p.n_quad)
    v = basis.vacuum()
    proj = contour_project(H, spec, v)
    exact = np.vdot(gs.vector, v) * gs.vector
    rows = [_row("contour_projector", np.linalg.norm(proj - exact), 1e-8)]
    H1 = assemble_fiber_hamiltonian(p, basis, 1)
    dH = assemble_delta_H(p, basis, 1)
    g1 = ground_state(H1, p.eig_tol)
    ser = resolvent_series_apply(H1, dH, ContourSpec(g1.energy, p.mu * p.sigma(2), p.n_quad), v)
    rows.append(_row("resolvent_series", np.linalg.norm(ser.vector - exact), 1e-8))
    return rows


def check_default_flow(params, seed):
    """The full flow on ``params`` with both strategies: gap ladder, strategy
    agreement, finite-difference gradient and the dressed-vector cross-check."""
    recs = run_flow(params, strategy="both", seed=seed)
    steps = recs[1:]
    ratio = min((r.gap_over_sigma for r in steps), default=np.inf)
    diff = max((r.strategy_diff for r in steps if np.isfinite(r.strategy_diff)), default=0.0)
    phat = max((r.phi_hat_diff for r in steps if np.isfinite(r.phi_hat_diff)), default=0.0)
    fd = max(np.max(np.abs(np.subtract(r.gradE_FH, r.gradE_FD))) for r in recs)
    rows = [
        _row("gap_ladder", ratio, params.rho_minus, ok=ratio >= params.rho_minus),
        _row("strategy_agreement", diff, 1e-8),
        _row("dressed_step_agreement", phat, 1e-8),
    ]
    if params.alpha <= 0.01:
        rows.append(_row("flow_fd_gradient", fd, 1e-4))
    return rows


def check_region():
    try:
        ModelParams(P=(0.4, 0.0, 0.0))
    except InvalidParams:
        return [_row("momentum_region", 0, 0)]
    return [_row("momentum_region", 1, 0)]


def run_selfcheck(params: ModelParams = None, seed: int = 0) -> list:
    """Run every check; returns rows {name, value, tol, pass}."""
    params = ModelParams() if params is None else params
    groups = [
        check_dimension,
        lambda: check_polarizations(params),
        lambda: check_hamiltonian(params),
        lambda: check_free(params),
        lambda: check_dressing(params),
        lambda: check_canonical(params),
        lambda: check_gradient(params),
        lambda: check_contour(params),
        lambda: check_default_flow(params, seed),
        check_region,
    ]
    rows = []
    for g in groups:
        rows.extend(g())
    return rows
