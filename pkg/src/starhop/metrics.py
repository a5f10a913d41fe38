"""SINR, sum rate, power consumption and energy efficiency."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .starris import SurfaceState, surface_power_watt


@dataclass
class BeamformerSet:
    """Per-region precoders ``w[i]`` of shape (M, K_i); column k serves user k."""

    w: list[np.ndarray]

    def stacked(self) -> np.ndarray:
        """All beams side by side, (M, K_total), in region-major user order."""
        return np.concatenate(self.w, axis=1)

    def power(self) -> float:
        return float(sum(np.vdot(wi, wi).real for wi in self.w))

    def scaled(self, c: float) -> "BeamformerSet":
        return BeamformerSet([wi * c for wi in self.w])

    def copy(self) -> "BeamformerSet":
        return BeamformerSet([wi.copy() for wi in self.w])


@dataclass(frozen=True)
class LinkMetrics:
    sinr: np.ndarray
    sum_rate_bps: float
    total_power_watt: float
    energy_efficiency: float
    per_element_power: np.ndarray  # (V, N)


def gain_matrix(omegas: np.ndarray, w: BeamformerSet | np.ndarray) -> np.ndarray:
    """``G[k, k'] = |omega_k w_k'|^2`` over all users and beams."""
    beams = w.stacked() if isinstance(w, BeamformerSet) else w
    return np.abs(omegas @ beams) ** 2


def sinrs_from_gain(gains: np.ndarray, noise_watt: float) -> np.ndarray:
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    denom = interference + noise_watt
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, signal / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def all_sinrs(omegas: np.ndarray, w: BeamformerSet | np.ndarray, noise_watt: float) -> np.ndarray:
    return sinrs_from_gain(gain_matrix(omegas, w), noise_watt)


def sinr(user: int, omegas: np.ndarray, w: BeamformerSet | np.ndarray, noise_watt: float) -> float:
    """SINR of one user; every other beam, in any region, leaks through that
    user's own effective channel."""
    beams = w.stacked() if isinstance(w, BeamformerSet) else w
    g = np.abs(omegas[user] @ beams) ** 2
    signal = g[user]
    denom = g.sum() - signal + noise_watt
    return float(signal / denom) if denom > 0 else 0.0


def sum_rate(sinrs, bandwidth_hz: float) -> float:
    s = np.asarray(sinrs, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR must be non-negative")
    return float(bandwidth_hz * np.log2(1.0 + s).sum())


def bs_power(w: BeamformerSet) -> float:
    return w.power()


def total_power(states: Sequence[SurfaceState], w: BeamformerSet, element_power_watt: float) -> float:
    return sum(surface_power_watt(s, element_power_watt) for s in states) + bs_power(w)


def normalize_beamformer(w: BeamformerSet, p_max_watt: float) -> BeamformerSet:
    p = w.power()
    if p <= 0:
        raise ValueError("cannot normalize an all-zero beamformer")
    return w.scaled(np.sqrt(p_max_watt / p))


def energy_efficiency(states: Sequence[SurfaceState], w: BeamformerSet, omegas: np.ndarray,
                      config) -> float:
    """Sum rate over total consumed power, bits/joule."""
    rate = sum_rate(all_sinrs(omegas, w, config.noise_watt), config.bandwidth_hz)
    return rate / total_power(states, w, config.element_power_watt)


def link_metrics(states: Sequence[SurfaceState], w: BeamformerSet, omegas: np.ndarray,
                 config) -> LinkMetrics:
    s = all_sinrs(omegas, w, config.noise_watt)
    rate = sum_rate(s, config.bandwidth_hz)
    p = total_power(states, w, config.element_power_watt)
    gamma = np.array([st.alpha * config.element_power_watt for st in states], dtype=float)
    return LinkMetrics(s, rate, p, rate / p, gamma)
