"""Agent-facing environment: lattice states, action catalogues, rewards.

Every agent state lives on an integer lattice around its initial point, so a
tabular learner can key on the integer coordinates and repeated +/- moves
cancel exactly. Surface modes:

* ``ES``  energy splitting, reflection amplitude learnable in steps;
* ``MS``  mode switching, each element is pure-R (1) or pure-T (0);
* ``RIS`` reflection only, amplitude pinned to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channel import ChannelRealization, effective_channels, enumerate_paths
from .metrics import BeamformerSet, all_sinrs, sum_rate
from .scenario import Geometry, ScenarioConfig
from .starris import TWO_PI, SurfaceState, ThetaPair, build_theta

SURFACE_PRIMS = ("beta+", "beta-", "theta+", "theta-", "sign", "alpha")
BS_PRIMS = ("re+", "re-", "im+", "im-")

SURFACE_MODES = ("ES", "MS", "RIS")


@dataclass(frozen=True)
class SurfaceRules:
    n: int
    mode: str = "ES"
    alpha_fixed: tuple[int, ...] | None = None
    beta_base: float = 1 / math.sqrt(2)
    beta_step: float = 0.1
    phase_levels: int = 16

    def __post_init__(self):
        if self.mode not in SURFACE_MODES:
            raise ValueError(f"unknown surface mode {self.mode!r}")
        if self.alpha_fixed is not None and len(self.alpha_fixed) != self.n:
            raise ValueError("alpha_fixed needs one entry per element")

    @property
    def phase_step(self) -> float:
        return TWO_PI / self.phase_levels

    def catalogue(self) -> list[tuple[str, int]]:
        prims = list(SURFACE_PRIMS)
        if self.mode == "MS":
            prims[0:2] = ["beta_flip"]
        elif self.mode == "RIS":
            prims = prims[2:]
        if self.alpha_fixed is not None:
            prims.remove("alpha")
        return [(p, n) for p in prims for n in range(self.n)]

    def initial(self) -> "SurfaceLattice":
        n = self.n
        alpha = np.ones(n, np.int8) if self.alpha_fixed is None else np.array(self.alpha_fixed, np.int8)
        kb = np.zeros(n, np.int64)
        if self.mode == "MS":
            kb = (np.arange(n) % 2 == 0).astype(np.int64)  # alternate pure-R / pure-T
        return SurfaceLattice(alpha, kb, np.zeros(n, np.int64), np.ones(n, np.int8))

    def beta(self, kb: np.ndarray) -> np.ndarray:
        if self.mode == "MS":
            return kb.astype(float)
        if self.mode == "RIS":
            return np.ones(len(kb))
        return np.clip(self.beta_base + kb * self.beta_step, 0.0, 1.0)

    def to_state(self, lat: "SurfaceLattice") -> SurfaceState:
        return SurfaceState(
            alpha=lat.alpha,
            beta_r=self.beta(lat.kb),
            theta_r=np.mod(lat.kt, self.phase_levels) * self.phase_step,
            phase_sign=lat.sign,
        )

    def apply(self, lat: "SurfaceLattice", prim: str, n: int) -> "SurfaceLattice":
        """Next lattice point; an amplitude move that leaves [0, 1] is a no-op."""
        new = lat.copy()
        if prim in ("beta+", "beta-"):
            k = lat.kb[n] + (1 if prim == "beta+" else -1)
            b = self.beta_base + k * self.beta_step
            if -1e-9 <= b <= 1 + 1e-9:
                new.kb[n] = k
        elif prim == "beta_flip":
            new.kb[n] = 1 - lat.kb[n]
        elif prim in ("theta+", "theta-"):
            new.kt[n] = (lat.kt[n] + (1 if prim == "theta+" else -1)) % self.phase_levels
        elif prim == "sign":
            new.sign[n] = -lat.sign[n]
        elif prim == "alpha":
            new.alpha[n] = 1 - lat.alpha[n]
        else:
            raise ValueError(f"unknown surface primitive {prim!r}")
        return new

    def features(self, lat: "SurfaceLattice") -> np.ndarray:
        st = self.to_state(lat)
        return np.concatenate([st.beta_r, st.theta_r / TWO_PI, st.theta_t / TWO_PI,
                               st.alpha.astype(float)])

    @property
    def feature_dim(self) -> int:
        return 4 * self.n


@dataclass
class SurfaceLattice:
    alpha: np.ndarray
    kb: np.ndarray
    kt: np.ndarray
    sign: np.ndarray

    def copy(self) -> "SurfaceLattice":
        return SurfaceLattice(self.alpha.copy(), self.kb.copy(), self.kt.copy(), self.sign.copy())

    def key(self) -> bytes:
        return b"".join(a.astype(np.int64).tobytes() for a in (self.alpha, self.kb, self.kt, self.sign))


@dataclass(frozen=True)
class BSRules:
    m: int
    users_per_region: tuple[int, ...]
    p_max_watt: float
    step_frac: float = 0.1

    @property
    def k_total(self) -> int:
        return sum(self.users_per_region)

    @property
    def scale(self) -> float:
        """Per-entry amplitude of the uniform normalized precoder."""
        return math.sqrt(self.p_max_watt / (self.m * self.k_total))

    def catalogue(self) -> list[tuple[str, int, int]]:
        return [(p, m, k) for p in BS_PRIMS for m in range(self.m) for k in range(self.k_total)]

    def initial(self) -> "BSLattice":
        z = np.zeros((self.m, self.k_total), np.int64)
        return BSLattice(z, z.copy())

    def raw(self, lat: "BSLattice") -> np.ndarray:
        return self.scale * ((1.0 + self.step_frac * lat.re) + 1j * (self.step_frac * lat.im))

    def beamformer(self, lat: "BSLattice") -> BeamformerSet:
        w = self.raw(lat)
        p = float(np.vdot(w, w).real)
        w = w * math.sqrt(self.p_max_watt / p)
        cuts = np.cumsum(self.users_per_region)[:-1]
        return BeamformerSet(np.split(w, cuts, axis=1))

    def apply(self, lat: "BSLattice", prim: str, m: int, k: int) -> "BSLattice":
        """Step one real/imag entry; a move that zeroes the precoder is a no-op."""
        new = lat.copy()
        delta = 1 if prim.endswith("+") else -1
        if prim.startswith("re"):
            new.re[m, k] += delta
        elif prim.startswith("im"):
            new.im[m, k] += delta
        else:
            raise ValueError(f"unknown BS primitive {prim!r}")
        if not np.any(self.raw(new)):
            return lat.copy()
        return new

    def features(self, lat: "BSLattice") -> np.ndarray:
        w = np.concatenate(self.beamformer(lat).w, axis=1) / self.scale
        return np.concatenate([w.real.ravel(), w.imag.ravel()])

    @property
    def feature_dim(self) -> int:
        return 2 * self.m * self.k_total


@dataclass
class BSLattice:
    re: np.ndarray
    im: np.ndarray

    def copy(self) -> "BSLattice":
        return BSLattice(self.re.copy(), self.im.copy())

    def key(self) -> bytes:
        return self.re.tobytes() + self.im.tobytes()


@dataclass
class JointState:
    surfaces: list[SurfaceLattice]
    bs: BSLattice

    def copy(self) -> "JointState":
        return JointState([s.copy() for s in self.surfaces], self.bs.copy())


@dataclass(frozen=True)
class Snapshot:
    rate: float
    power: float
    ee: float


class Environment:
    """Evaluates rates and rewards of joint lattice states on one channel draw.

    Agents are indexed 0..V-1 for surfaces and V for the base station.
    """

    def __init__(self, config: ScenarioConfig, geometry: Geometry, realization: ChannelRealization,
                 surface_rules: Sequence[SurfaceRules], bs_rules: BSRules,
                 power_floor_watt: float = 1e-3):
        self.config = config
        self.geometry = geometry
        self.realization = realization
        self.surface_rules = list(surface_rules)
        self.bs_rules = bs_rules
        self.power_floor_watt = power_floor_watt
        self.paths = enumerate_paths(config.v_surfaces)
        self.regions = geometry.region_of_user

    @property
    def n_agents(self) -> int:
        return len(self.surface_rules) + 1

    def initial_state(self) -> JointState:
        return JointState([r.initial() for r in self.surface_rules], self.bs_rules.initial())

    def catalogues(self) -> list[list]:
        return [r.catalogue() for r in self.surface_rules] + [self.bs_rules.catalogue()]

    def rules(self, agent: int):
        return self.bs_rules if agent == len(self.surface_rules) else self.surface_rules[agent]

    def agent_lattice(self, state: JointState, agent: int):
        return state.bs if agent == len(self.surface_rules) else state.surfaces[agent]

    def features(self, state: JointState, agent: int) -> np.ndarray:
        return self.rules(agent).features(self.agent_lattice(state, agent))

    def global_features(self, state: JointState) -> np.ndarray:
        return np.concatenate([self.features(state, a) for a in range(self.n_agents)])

    def apply(self, state: JointState, agent: int, action) -> JointState:
        """Return a new joint state with one agent's catalogue action applied."""
        new = JointState(list(state.surfaces), state.bs)
        if agent == len(self.surface_rules):
            new.bs = self.bs_rules.apply(state.bs, *action)
        else:
            new.surfaces[agent] = self.surface_rules[agent].apply(state.surfaces[agent], *action)
        return new

    # evaluation

    def surface_states(self, state: JointState) -> list[SurfaceState]:
        return [r.to_state(l) for r, l in zip(self.surface_rules, state.surfaces)]

    def thetas(self, state: JointState) -> list[ThetaPair]:
        return [build_theta(s) for s in self.surface_states(state)]

    def omegas(self, thetas: Sequence[ThetaPair]) -> np.ndarray:
        return effective_channels(self.realization, thetas, self.regions, self.paths)

    def rate(self, omegas: np.ndarray, w: BeamformerSet) -> float:
        return sum_rate(all_sinrs(omegas, w, self.config.noise_watt), self.config.bandwidth_hz)

    def surface_power(self, lat: SurfaceLattice) -> float:
        return self.config.element_power_watt * int(np.count_nonzero(lat.alpha))

    def snapshot(self, state: JointState, thetas: Sequence[ThetaPair] | None = None) -> Snapshot:
        thetas = self.thetas(state) if thetas is None else thetas
        w = self.bs_rules.beamformer(state.bs)
        rate = self.rate(self.omegas(thetas), w)
        power = sum(self.surface_power(l) for l in state.surfaces) + w.power()
        return Snapshot(rate, power, rate / power)

    def local_rewards(self, before: JointState, after: JointState,
                      thetas_before: Sequence[ThetaPair] | None = None) -> np.ndarray:
        """Per-agent rate/power with only that agent moved to its post-action state."""
        thetas_before = self.thetas(before) if thetas_before is None else list(thetas_before)
        w_before = self.bs_rules.beamformer(before.bs)
        out = np.empty(self.n_agents)
        for v, rules in enumerate(self.surface_rules):
            th = list(thetas_before)
            th[v] = build_theta(rules.to_state(after.surfaces[v]))
            rate = self.rate(self.omegas(th), w_before)
            out[v] = rate / max(self.surface_power(after.surfaces[v]), self.power_floor_watt)
        omega_before = self.omegas(thetas_before)
        w_after = self.bs_rules.beamformer(after.bs)
        out[-1] = self.rate(omega_before, w_after) / w_after.power()
        return out


def constraint_violations(env: Environment, state: JointState, tol: float = 1e-12) -> list[str]:
    """Check the BS power equality and every surface coupling/range rule."""
    bad = []
    p_max = env.config.p_max_watt
    w = env.bs_rules.beamformer(state.bs)
    if abs(w.power() - p_max) > tol * p_max:
        bad.append(f"BS power {w.power()!r} != {p_max!r}")
    for v, st in enumerate(env.surface_states(state)):
        if not np.all(np.isin(st.alpha, (0, 1))):
            bad.append(f"surface {v + 1}: alpha not binary")
        if np.any((st.beta_r < 0) | (st.beta_r > 1)):
            bad.append(f"surface {v + 1}: beta_r out of range")
        if np.any((st.theta_r < 0) | (st.theta_r >= TWO_PI)):
            bad.append(f"surface {v + 1}: theta_r out of range")
        th = build_theta(st)
        energy = np.abs(th.r) ** 2 + np.abs(th.t) ** 2
        if np.any(np.abs(energy - st.alpha) > tol):
            bad.append(f"surface {v + 1}: energy conservation off by {np.max(np.abs(energy - st.alpha))}")
        split = (st.alpha == 1) & (st.beta_r > 0) & (st.beta_r < 1)
        if split.any():
            diff = np.angle(th.t[split] / th.r[split])
            if np.any(np.abs(np.abs(diff) - math.pi / 2) > tol):
                bad.append(f"surface {v + 1}: phase coupling not +-pi/2")
    return bad
