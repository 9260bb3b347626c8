"""Model and algorithm parameters."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams

#: Radius of the admissible momentum region: |P| < 1/3.
P_REGION_RADIUS = 1.0 / 3.0

STRATEGIES = ("direct", "recursive", "both")


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of one truncated fiber model.

    Units are hbar = c = m = 1. The infrared cutoffs are ``sigma_j = Lambda * epsilon**j``
    for ``j = 0..J``; the photon grid covers ``sigma_J < |k| <= Lambda`` in ``J`` shells.
    """

    alpha: float = 0.005
    Lambda: float = 1.0
    P: tuple = (0.2, 0.0, 0.0)
    epsilon: float = 0.5
    J: int = 4
    n_radial: int = 1
    n_theta: int = 2
    n_phi: int = 2
    Nmax: int = 2
    rho_minus: float = 0.35
    mu: float = 0.475
    rho_plus: float = 0.6
    nu_min: float = 0.05
    nu_max: float = 0.5
    eig_tol: float = 1e-12
    solve_tol: float = 1e-12
    herm_tol: float = 1e-12
    n_quad: int = 32
    mode: str = "direct"
    delta: float = 0.1
    gauge_axis: tuple = (0.0, 0.0, 1.0)
    leak_tol: float = 1e-2
    dim_cap: int = 200_000
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "P", tuple(float(x) for x in self.P))
        object.__setattr__(self, "gauge_axis", tuple(float(x) for x in self.gauge_axis))
        self.validate()

    def validate(self):
        if len(self.P) != 3:
            raise InvalidParams("P must be a 3-vector")
        if not self.alpha >= 0:
            raise InvalidParams(f"alpha must be >= 0, got {self.alpha}")
        if not self.Lambda > 0:
            raise InvalidParams(f"Lambda must be > 0, got {self.Lambda}")
        if not 0 < self.epsilon < 1:
            raise InvalidParams(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.J < 0:
            raise InvalidParams(f"J must be >= 0, got {self.J}")
        if self.Nmax < 1:
            raise InvalidParams(f"Nmax must be >= 1, got {self.Nmax}")
        for name in ("n_radial", "n_theta", "n_phi", "n_quad"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be >= 1")
        pnorm = float(np.linalg.norm(self.P))
        if not pnorm < P_REGION_RADIUS:
            raise InvalidParams(f"|P| = {pnorm:.6g} >= 1/3: P outside the region S")
        if not 0 < self.rho_minus < self.mu < self.rho_plus < 2.0 / 3.0:
            raise InvalidParams(
                "contour constants must satisfy 0 < rho_minus < mu < rho_plus < 2/3, got "
                f"({self.rho_minus}, {self.mu}, {self.rho_plus})"
            )
        if not self.epsilon < self.rho_minus / self.rho_plus:
            raise InvalidParams(
                f"epsilon = {self.epsilon} must be < rho_minus/rho_plus = "
                f"{self.rho_minus / self.rho_plus:.6g}"
            )
        if not 0 < self.nu_min < self.nu_max < 1:
            raise InvalidParams("need 0 < nu_min < nu_max < 1")
        if not 0 < self.delta < 1:
            raise InvalidParams("delta must lie in (0, 1)")
        if self.mode not in STRATEGIES:
            raise InvalidParams(f"mode must be one of {STRATEGIES}, got {self.mode!r}")
        if np.linalg.norm(self.gauge_axis) == 0:
            raise InvalidParams("gauge_axis must be nonzero")

    @property
    def P_vec(self) -> np.ndarray:
        return np.asarray(self.P, dtype=float)

    def sigma(self, j: int) -> float:
        return self.Lambda * self.epsilon**j

    @property
    def sigmas(self) -> list:
        return [self.sigma(j) for j in range(self.J + 1)]

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        d["P"] = list(self.P)
        d["gauge_axis"] = list(self.gauge_axis)
        return d


def in_region(P) -> bool:
    return bool(np.linalg.norm(P) < P_REGION_RADIUS)


def log_ratio(params: ModelParams) -> float:
    """ln(1/epsilon), the per-scale step in |ln sigma|."""
    return math.log(1.0 / params.epsilon)
