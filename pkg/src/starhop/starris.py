"""Energy-splitting STAR-RIS: on-off switches, coupled T/R coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class InvalidSurfaceState(ValueError):
    pass


def coupled_amplitude(beta_r):
    """Transmission amplitude implied by reflection amplitude ``beta_r``."""
    b = np.asarray(beta_r, dtype=float)
    if np.any((b < 0) | (b > 1)) or not np.all(np.isfinite(b)):
        raise ValueError(f"reflection amplitude must lie in [0, 1], got {beta_r!r}")
    out = np.sqrt(1.0 - b * b)
    return float(out) if out.ndim == 0 else out


def wrap_phase(theta):
    out = np.mod(theta, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def coupled_phase(theta_r, sign):
    """Transmission phase ``theta_r + sign * pi/2`` wrapped into [0, 2pi)."""
    t = np.asarray(theta_r, dtype=float)
    s = np.asarray(sign)
    if np.any((t < 0) | (t >= TWO_PI)):
        raise ValueError(f"reflection phase must lie in [0, 2pi), got {theta_r!r}")
    if not np.all((s == 1) | (s == -1)):
        raise ValueError(f"phase sign must be +1 or -1, got {sign!r}")
    out = wrap_phase(t + s * (math.pi / 2))
    return float(out) if out.ndim == 0 else out


@dataclass
class SurfaceState:
    alpha: np.ndarray
    beta_r: np.ndarray
    theta_r: np.ndarray
    phase_sign: np.ndarray

    @classmethod
    def initial(cls, n: int, beta_r: float = 1 / math.sqrt(2)) -> "SurfaceState":
        return cls(
            alpha=np.ones(n, dtype=np.int8),
            beta_r=np.full(n, beta_r),
            theta_r=np.zeros(n),
            phase_sign=np.ones(n, dtype=np.int8),
        )

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def beta_t(self) -> np.ndarray:
        return coupled_amplitude(self.beta_r)

    @property
    def theta_t(self) -> np.ndarray:
        return coupled_phase(self.theta_r, self.phase_sign)

    def validate(self) -> None:
        n = len(self.alpha)
        if not (len(self.beta_r) == len(self.theta_r) == len(self.phase_sign) == n):
            raise InvalidSurfaceState("per-element arrays differ in length")
        if not np.all((self.alpha == 0) | (self.alpha == 1)):
            raise InvalidSurfaceState("alpha must be binary")
        if np.any((self.beta_r < 0) | (self.beta_r > 1)):
            raise InvalidSurfaceState("beta_r outside [0, 1]")
        if np.any((self.theta_r < 0) | (self.theta_r >= TWO_PI)):
            raise InvalidSurfaceState("theta_r outside [0, 2pi)")
        if not np.all((self.phase_sign == 1) | (self.phase_sign == -1)):
            raise InvalidSurfaceState("phase_sign must be +1 or -1")

    def copy(self) -> "SurfaceState":
        return SurfaceState(self.alpha.copy(), self.beta_r.copy(),
                            self.theta_r.copy(), self.phase_sign.copy())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("alpha", "beta_r", "theta_r", "phase_sign")}


@dataclass(frozen=True)
class ThetaPair:
    """Diagonals of the transmission and reflection matrices of one surface."""

    t: np.ndarray
    r: np.ndarray

    @property
    def theta_t_matrix(self) -> np.ndarray:
        return np.diag(self.t)

    @property
    def theta_r_matrix(self) -> np.ndarray:
        return np.diag(self.r)


def build_theta(state: SurfaceState) -> ThetaPair:
    state.validate()
    on = state.alpha.astype(float)
    r = on * state.beta_r * np.exp(1j * state.theta_r)
    t = on * coupled_amplitude(state.beta_r) * np.exp(1j * coupled_phase(state.theta_r, state.phase_sign))
    return ThetaPair(t=t, r=r)


def off_theta(n: int) -> ThetaPair:
    z = np.zeros(n, dtype=complex)
    return ThetaPair(t=z, r=z)


def surface_power_watt(state: SurfaceState, element_power_watt: float) -> float:
    return element_power_watt * int(np.count_nonzero(state.alpha))
